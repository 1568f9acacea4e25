#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <torch/torch.h>

namespace transferi2i {

/// Decodes an image file to uint8 (3, size, size) RGB with bilinear resizing.
/// Returns nullopt when the file cannot be decoded.
std::optional<torch::Tensor> read_image_rgb(const std::filesystem::path& path, int64_t size);

/// Writes images in [-1, 1] as a PNG grid with `columns` tiles per row.
void write_png_grid(const std::filesystem::path& path, const torch::Tensor& images, int64_t columns);

struct PlotSeries {
    std::string label;
    std::vector<double> values;
};

/// Static line plot: one polyline per series over x = 0..n-1, tick labels from `x_labels`.
void write_line_plot(const std::filesystem::path& path, const std::string& title,
                     const std::vector<std::string>& x_labels, const std::vector<PlotSeries>& series);

}  // namespace transferi2i
