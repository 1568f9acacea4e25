#include "transferi2i/data.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <iostream>
#include <numbers>
#include <random>

#include "transferi2i/errors.hpp"
#include "transferi2i/image_io.hpp"
#include "transferi2i/rng.hpp"

namespace transferi2i::data {

namespace fs = std::filesystem;

namespace {

thread_local int data_free_depth = 0;
thread_local std::string data_free_stage;
std::atomic<int64_t> reads{0};

}  // namespace

std::string to_string(Split split) { return split == Split::train ? "train" : "test"; }

DataFreeScope::DataFreeScope(std::string stage) {
    if (data_free_depth++ == 0) data_free_stage = std::move(stage);
}

DataFreeScope::~DataFreeScope() { --data_free_depth; }

void guard_read(const std::string& what) {
    ++reads;
    if (data_free_depth > 0) {
        throw ContractViolation("dataset read (" + what + ") inside data-free stage '" + data_free_stage + "'");
    }
}

int64_t dataset_reads() { return reads.load(); }

// ---------------------------------------------------------------------------

Corpus::Corpus(torch::Tensor images, std::vector<int64_t> labels, Split split, std::vector<std::string> paths)
    : images_(std::move(images)), labels_(std::move(labels)), paths_(std::move(paths)), split_(split) {
    if (images_.defined() && images_.size(0) != static_cast<int64_t>(labels_.size())) {
        throw DataError("corpus: image count and label count differ");
    }
    if (images_.defined() && (images_.dim() != 4 || images_.size(1) != 3)) {
        throw DataError("corpus: images must be (N, 3, H, W)");
    }
    if (!paths_.empty() && paths_.size() != labels_.size()) throw DataError("corpus: path count mismatch");
    for (auto l : labels_) {
        if (l < 0) throw DataError("corpus: negative label");
    }
}

Batch Corpus::fetch(std::span<const int64_t> indices) const {
    guard_read(describe());
    std::vector<int64_t> idx(indices.begin(), indices.end());
    for (auto i : idx) {
        if (i < 0 || i >= size()) throw DataError("corpus: index " + std::to_string(i) + " out of range");
    }
    auto index = torch::tensor(idx, torch::kLong);
    std::vector<int64_t> lab;
    lab.reserve(idx.size());
    for (auto i : idx) lab.push_back(labels_[static_cast<size_t>(i)]);
    return {images_.index_select(0, index), torch::tensor(lab, torch::kLong)};
}

std::string Corpus::describe() const {
    return to_string(split_) + " corpus of " + std::to_string(size()) + " images";
}

const torch::Tensor& Corpus::images() const {
    guard_read(describe());
    return images_;
}

int64_t Corpus::num_classes() const {
    return labels_.empty() ? 0 : *std::max_element(labels_.begin(), labels_.end()) + 1;
}

std::vector<int64_t> Corpus::class_histogram() const {
    std::vector<int64_t> h(static_cast<size_t>(num_classes()), 0);
    for (auto l : labels_) ++h[static_cast<size_t>(l)];
    return h;
}

Corpus Corpus::select(std::span<const int64_t> indices) const {
    std::vector<int64_t> idx(indices.begin(), indices.end());
    std::vector<int64_t> lab;
    std::vector<std::string> paths;
    for (auto i : idx) {
        lab.push_back(labels_.at(static_cast<size_t>(i)));
        if (!paths_.empty()) paths.push_back(paths_[static_cast<size_t>(i)]);
    }
    auto imgs = idx.empty() ? images_.slice(0, 0, 0) : images_.index_select(0, torch::tensor(idx, torch::kLong));
    return Corpus(imgs, std::move(lab), split_, std::move(paths));
}

Corpus Corpus::select_class(int64_t label) const {
    std::vector<int64_t> idx;
    for (size_t i = 0; i < labels_.size(); ++i) {
        if (labels_[i] == label) idx.push_back(static_cast<int64_t>(i));
    }
    return select(idx);
}

Corpus Corpus::relabeled(int64_t label) const {
    return Corpus(images_, std::vector<int64_t>(labels_.size(), label), split_, paths_);
}

Corpus Corpus::concat(const Corpus& a, const Corpus& b) {
    auto labels = a.labels_;
    labels.insert(labels.end(), b.labels_.begin(), b.labels_.end());
    std::vector<std::string> paths;
    if (!a.paths_.empty() && !b.paths_.empty()) {
        paths = a.paths_;
        paths.insert(paths.end(), b.paths_.begin(), b.paths_.end());
    }
    return Corpus(torch::cat({a.images_, b.images_}, 0), std::move(labels), a.split_, std::move(paths));
}

Batch sample_batch(const ImageSource& source, int64_t batch, torch::Generator& gen) {
    if (source.size() == 0) throw DataError("cannot sample from an empty dataset (" + source.describe() + ")");
    auto idx = torch::randint(source.size(), {batch}, gen, torch::kLong);
    std::vector<int64_t> v(idx.data_ptr<int64_t>(), idx.data_ptr<int64_t>() + batch);
    return source.fetch(v);
}

torch::Tensor normalize(const torch::Tensor& pixels) {
    return pixels.to(torch::kFloat).div(127.5).sub(1.0);
}

torch::Tensor denormalize(const torch::Tensor& images) {
    return images.detach().to(torch::kFloat).add(1.0).mul(127.5).round().clamp(0, 255).to(torch::kByte);
}

// ---------------------------------------------------------------------------

std::pair<Corpus, Corpus> load_image_folder(const fs::path& root, int64_t image_size, double split_fraction,
                                            uint64_t seed, std::optional<int64_t> test_per_class) {
    if (!fs::is_directory(root)) throw DataError("image folder '" + root.string() + "' does not exist");
    if (split_fraction <= 0.0 || split_fraction > 1.0) throw DataError("split fraction must be in (0, 1]");
    std::vector<fs::path> classes;
    for (const auto& entry : fs::directory_iterator(root)) {
        if (entry.is_directory()) classes.push_back(entry.path());
    }
    std::sort(classes.begin(), classes.end());
    if (classes.empty()) throw DataError("image folder '" + root.string() + "' has no class subdirectories");

    std::vector<torch::Tensor> train_imgs, test_imgs;
    std::vector<int64_t> train_labels, test_labels;
    std::vector<std::string> train_paths, test_paths;

    for (size_t c = 0; c < classes.size(); ++c) {
        std::vector<fs::path> files;
        for (const auto& entry : fs::directory_iterator(classes[c])) {
            if (!entry.is_regular_file()) continue;
            auto ext = entry.path().extension().string();
            std::transform(ext.begin(), ext.end(), ext.begin(), ::tolower);
            if (ext == ".png" || ext == ".jpg" || ext == ".jpeg") files.push_back(entry.path());
        }
        std::sort(files.begin(), files.end());
        std::vector<torch::Tensor> imgs;
        std::vector<std::string> paths;
        for (const auto& f : files) {
            auto img = read_image_rgb(f, image_size);
            if (!img) {
                std::cerr << "warning: skipping undecodable image " << f << "\n";
                continue;
            }
            imgs.push_back(*img);
            paths.push_back(f.string());
        }
        const auto name = classes[c].filename().string();
        if (imgs.empty()) throw DataError("class '" + name + "' has no decodable images");

        auto gen = step_generator(seed, Stream::shuffle, static_cast<int64_t>(c));
        auto perm = torch::randperm(static_cast<int64_t>(imgs.size()), gen, torch::kLong);
        const auto n = static_cast<int64_t>(imgs.size());
        int64_t n_train = static_cast<int64_t>(std::llround(split_fraction * static_cast<double>(n)));
        if (test_per_class) n_train = std::max<int64_t>(n - *test_per_class, 0);
        n_train = std::clamp<int64_t>(n_train, 0, n);
        for (int64_t k = 0; k < n; ++k) {
            const auto i = static_cast<size_t>(perm[k].item<int64_t>());
            const bool train = k < n_train;
            (train ? train_imgs : test_imgs).push_back(imgs[i]);
            (train ? train_labels : test_labels).push_back(static_cast<int64_t>(c));
            (train ? train_paths : test_paths).push_back(paths[i]);
        }
    }
    auto stack = [&](const std::vector<torch::Tensor>& v) {
        return v.empty() ? torch::empty({0, 3, image_size, image_size}) : normalize(torch::stack(v));
    };
    return {Corpus(stack(train_imgs), std::move(train_labels), Split::train, std::move(train_paths)),
            Corpus(stack(test_imgs), std::move(test_labels), Split::test, std::move(test_paths))};
}

void write_manifest(const fs::path& path, const Corpus& train, const Corpus& test) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path);
    if (!out) throw DataError("cannot write manifest '" + path.string() + "'");
    out << "path,label,split\n";
    for (const Corpus* c : {&train, &test}) {
        for (int64_t i = 0; i < c->size(); ++i) {
            const auto p = c->paths().empty() ? "<memory:" + std::to_string(i) + ">" : c->paths()[i];
            out << p << "," << c->labels()[static_cast<size_t>(i)] << "," << to_string(c->split()) << "\n";
        }
    }
}

// ---------------------------------------------------------------------------
// Synthetic shapes

namespace {

struct Rgb {
    double r, g, b;
};

class Uniform {
public:
    explicit Uniform(uint64_t seed) : engine_(seed) {}
    double operator()(double lo, double hi) {
        const double u = static_cast<double>(engine_() >> 11) * 0x1.0p-53;
        return lo + (hi - lo) * u;
    }

private:
    std::mt19937_64 engine_;
};

Rgb hsv(double h, double s, double v) {
    const double i = std::floor(h * 6.0);
    const double f = h * 6.0 - i;
    const double p = v * (1 - s), q = v * (1 - f * s), t = v * (1 - (1 - f) * s);
    switch (static_cast<int>(i) % 6) {
        case 0: return {v, t, p};
        case 1: return {q, v, p};
        case 2: return {p, v, t};
        case 3: return {p, q, v};
        case 4: return {t, p, v};
        default: return {v, p, q};
    }
}

Rgb class_colour(int64_t k) {
    static const Rgb palette[] = {{0.92, 0.30, 0.20}, {0.20, 0.50, 0.95}, {0.95, 0.85, 0.20}, {0.30, 0.85, 0.35},
                                  {0.85, 0.35, 0.85}, {0.20, 0.85, 0.85}, {0.95, 0.60, 0.20}, {0.92, 0.92, 0.92}};
    if (k < 8) return palette[k];
    return hsv(std::fmod(0.11 + 0.618033988749895 * static_cast<double>(k), 1.0), 0.75, 0.9);
}

// Membership test in the shape's own frame, where the shape spans roughly [-1, 1].
bool inside(int64_t shape, double u, double v) {
    switch (shape) {
        case 0: return std::max(std::abs(u), std::abs(v)) <= 0.8;
        case 1: return u * u + v * v <= 1.0;
        case 2: return v >= -0.5 && v <= 1.0 - std::sqrt(3.0) * std::abs(u);
        case 3: return (std::abs(u) <= 0.3 && std::abs(v) <= 1.0) || (std::abs(v) <= 0.3 && std::abs(u) <= 1.0);
        case 4: {
            const double r2 = u * u + v * v;
            return r2 <= 1.0 && r2 >= 0.3;
        }
        case 5: return std::abs(u) + std::abs(v) <= 1.0;
        case 6: return u * u + (v / 0.45) * (v / 0.45) <= 1.0;
        default: return u * u + v * v <= 1.0 && v >= -0.1;
    }
}

}  // namespace

SyntheticCorpus synthetic_shapes_with_poses(int64_t classes, int64_t per_class, int64_t image_size, uint64_t seed) {
    if (classes < 2) throw DataError("synthetic_shapes: need at least 2 classes");
    if (per_class < 1) throw DataError("synthetic_shapes: per_class must be >= 1");
    if (image_size < 4) throw DataError("synthetic_shapes: image_size must be >= 4");

    const int64_t n = classes * per_class;
    const auto s = image_size;
    auto pixels = torch::empty({n, 3, s, s}, torch::kByte);
    auto* out = pixels.data_ptr<uint8_t>();
    std::vector<int64_t> labels;
    std::vector<Pose> poses;
    constexpr int kSuper = 3;

    for (int64_t i = 0; i < n; ++i) {
        const int64_t k = i / per_class;
        Uniform rnd(derive_seed(seed, Stream::render, i));
        const int64_t shape = k % 8;
        const bool striped = (k / 8) % 2 == 1 || k == 3;
        Rgb colour = class_colour(k);
        colour.r = std::clamp(colour.r + rnd(-0.05, 0.05), 0.0, 1.0);
        colour.g = std::clamp(colour.g + rnd(-0.05, 0.05), 0.0, 1.0);
        colour.b = std::clamp(colour.b + rnd(-0.05, 0.05), 0.0, 1.0);
        const double bg = rnd(0.12, 0.35);
        const Rgb background{bg + rnd(-0.03, 0.03), bg + rnd(-0.03, 0.03), bg + rnd(-0.03, 0.03)};

        Pose pose;
        pose.cx = rnd(0.3, 0.7) * static_cast<double>(s);
        pose.cy = rnd(0.3, 0.7) * static_cast<double>(s);
        pose.angle = rnd(0.0, 2.0 * std::numbers::pi);
        pose.scale = rnd(0.2, 0.32) * static_cast<double>(s);
        const double ca = std::cos(pose.angle), sa = std::sin(pose.angle);

        for (int64_t y = 0; y < s; ++y) {
            for (int64_t x = 0; x < s; ++x) {
                Rgb acc{0, 0, 0};
                for (int sy = 0; sy < kSuper; ++sy) {
                    for (int sx = 0; sx < kSuper; ++sx) {
                        const double px = static_cast<double>(x) + (sx + 0.5) / kSuper - pose.cx;
                        const double py = static_cast<double>(y) + (sy + 0.5) / kSuper - pose.cy;
                        const double u = (ca * px + sa * py) / pose.scale;
                        const double v = (-sa * px + ca * py) / pose.scale;
                        Rgb c = background;
                        if (inside(shape, u, v)) {
                            const double shade = striped ? 0.7 + 0.3 * std::sin(9.0 * u) : 1.0;
                            c = {colour.r * shade, colour.g * shade, colour.b * shade};
                        }
                        acc.r += c.r;
                        acc.g += c.g;
                        acc.b += c.b;
                    }
                }
                const double norm = 1.0 / (kSuper * kSuper);
                const double noise = rnd(-0.02, 0.02);
                const double ch[3] = {acc.r * norm + noise, acc.g * norm + noise, acc.b * norm + noise};
                for (int c = 0; c < 3; ++c) {
                    out[((i * 3 + c) * s + y) * s + x] =
                        static_cast<uint8_t>(std::lround(std::clamp(ch[c], 0.0, 1.0) * 255.0));
                }
            }
        }
        labels.push_back(k);
        poses.push_back(pose);
    }
    return {Corpus(normalize(pixels), std::move(labels), Split::train), std::move(poses)};
}

Corpus synthetic_shapes(int64_t classes, int64_t per_class, int64_t image_size, uint64_t seed) {
    return synthetic_shapes_with_poses(classes, per_class, image_size, seed).corpus;
}

}  // namespace transferi2i::data
