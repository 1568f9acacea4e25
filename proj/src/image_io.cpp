#include "transferi2i/image_io.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "transferi2i/data.hpp"
#include "transferi2i/errors.hpp"

namespace transferi2i {

std::optional<torch::Tensor> read_image_rgb(const std::filesystem::path& path, int64_t size) {
    cv::Mat bgr = cv::imread(path.string(), cv::IMREAD_COLOR);
    if (bgr.empty()) return std::nullopt;
    cv::Mat resized, rgb;
    cv::resize(bgr, resized, cv::Size(static_cast<int>(size), static_cast<int>(size)), 0, 0, cv::INTER_LINEAR);
    cv::cvtColor(resized, rgb, cv::COLOR_BGR2RGB);
    auto hwc = torch::from_blob(rgb.data, {size, size, 3}, torch::kByte).clone();
    return hwc.permute({2, 0, 1}).contiguous();
}

void write_png_grid(const std::filesystem::path& path, const torch::Tensor& images, int64_t columns) {
    if (images.dim() != 4 || images.size(1) != 3) throw ShapeError("write_png_grid: expected (N,3,H,W)");
    const auto n = images.size(0), h = images.size(2), w = images.size(3);
    columns = std::max<int64_t>(1, std::min(columns, n));
    const auto rows = (n + columns - 1) / columns;
    auto pixels = data::denormalize(images).permute({0, 2, 3, 1}).contiguous();  // N,H,W,3
    cv::Mat grid(static_cast<int>(rows * (h + 1) + 1), static_cast<int>(columns * (w + 1) + 1), CV_8UC3,
                 cv::Scalar(255, 255, 255));
    for (int64_t i = 0; i < n; ++i) {
        cv::Mat tile(static_cast<int>(h), static_cast<int>(w), CV_8UC3, pixels[i].data_ptr<uint8_t>());
        cv::Mat bgr;
        cv::cvtColor(tile, bgr, cv::COLOR_RGB2BGR);
        const int y = static_cast<int>((i / columns) * (h + 1) + 1);
        const int x = static_cast<int>((i % columns) * (w + 1) + 1);
        bgr.copyTo(grid(cv::Rect(x, y, static_cast<int>(w), static_cast<int>(h))));
    }
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    if (!cv::imwrite(path.string(), grid)) throw DataError("cannot write '" + path.string() + "'");
}

void write_line_plot(const std::filesystem::path& path, const std::string& title,
                     const std::vector<std::string>& x_labels, const std::vector<PlotSeries>& series) {
    const int width = 640, height = 420, left = 70, right = 20, top = 40, bottom = 50;
    cv::Mat img(height, width, CV_8UC3, cv::Scalar(255, 255, 255));
    double hi = 0.0;
    size_t n = x_labels.size();
    for (const auto& s : series) {
        n = std::max(n, s.values.size());
        for (double v : s.values) hi = std::max(hi, v);
    }
    if (hi <= 0.0) hi = 1.0;
    const int pw = width - left - right, ph = height - top - bottom;
    auto px = [&](size_t i) { return left + (n > 1 ? static_cast<int>(i * pw / (n - 1)) : pw / 2); };
    auto py = [&](double v) { return top + ph - static_cast<int>(std::lround(v / hi * ph)); };

    const cv::Scalar black(0, 0, 0);
    cv::rectangle(img, cv::Point(left, top), cv::Point(left + pw, top + ph), black, 1);
    cv::putText(img, title, cv::Point(left, top - 15), cv::FONT_HERSHEY_SIMPLEX, 0.55, black, 1, cv::LINE_AA);
    for (int t = 0; t <= 4; ++t) {
        const double v = hi * t / 4.0;
        char buf[32];
        std::snprintf(buf, sizeof(buf), "%.3g", v);
        cv::putText(img, buf, cv::Point(5, py(v) + 4), cv::FONT_HERSHEY_SIMPLEX, 0.4, black, 1, cv::LINE_AA);
        cv::line(img, cv::Point(left - 4, py(v)), cv::Point(left, py(v)), black, 1);
    }
    for (size_t i = 0; i < x_labels.size(); ++i) {
        cv::putText(img, x_labels[i], cv::Point(px(i) - 15, top + ph + 20), cv::FONT_HERSHEY_SIMPLEX, 0.45, black, 1,
                    cv::LINE_AA);
    }
    static const cv::Scalar colours[] = {{200, 80, 30}, {30, 30, 200}, {40, 160, 40}, {150, 40, 150}};
    for (size_t s = 0; s < series.size(); ++s) {
        const auto& colour = colours[s % 4];
        const auto& v = series[s].values;
        for (size_t i = 0; i < v.size(); ++i) {
            cv::circle(img, cv::Point(px(i), py(v[i])), 4, colour, cv::FILLED, cv::LINE_AA);
            if (i > 0) cv::line(img, cv::Point(px(i - 1), py(v[i - 1])), cv::Point(px(i), py(v[i])), colour, 2,
                                cv::LINE_AA);
        }
        const int ly = top + 18 + static_cast<int>(s) * 18;
        cv::line(img, cv::Point(left + pw - 170, ly - 4), cv::Point(left + pw - 145, ly - 4), colour, 2);
        cv::putText(img, series[s].label, cv::Point(left + pw - 140, ly), cv::FONT_HERSHEY_SIMPLEX, 0.45, black, 1,
                    cv::LINE_AA);
    }
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    if (!cv::imwrite(path.string(), img)) throw DataError("cannot write '" + path.string() + "'");
}

}  // namespace transferi2i
