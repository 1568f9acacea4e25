#pragma once

#include <cmath>
#include <filesystem>
#include <functional>
#include <string>

#include <torch/torch.h>

#include "transferi2i/arch.hpp"
#include "transferi2i/config.hpp"
#include "transferi2i/data.hpp"

namespace transferi2i::testing {

// Small enough to train a few steps in well under a second.
inline ArchitectureSpec tiny_spec(int64_t num_classes = 1) {
    ArchitectureSpec s;
    s.image_size = 16;
    s.channels_base = 4;
    s.num_resblocks = 4;
    s.latent_dim = 8;
    s.num_classes = num_classes;
    s.class_embedding_dim = 4;
    return s;
}

// Finite-difference sized: a few hundred parameters per network.
inline ArchitectureSpec micro_spec(int64_t num_classes = 1) {
    ArchitectureSpec s;
    s.image_size = 4;
    s.channels_base = 1;
    s.num_resblocks = 2;
    s.latent_dim = 2;
    s.num_classes = num_classes;
    s.class_embedding_dim = 2;
    s.pyramid_levels = {0, 1};
    return s;
}

inline StageConfig tiny_config(bool conditional = false) {
    auto c = StageConfig::defaults(conditional);
    c.arch = tiny_spec();
    c.batch_size = 4;
    c.synthetic_per_class = 12;
    c.synthetic_test_per_class = 6;
    c.base_synthetic_classes = 4;
    c.base_synthetic_per_class = 8;
    c.fisher_batches = 2;
    c.kid_subsets = 2;
    c.kid_subset_size = 6;
    c.extractor_steps = 5;
    c.classifier_steps = 5;
    c.log_every = 0;
    return c;
}

// Access-logging test double around a corpus.
class CountingSource final : public data::ImageSource {
public:
    explicit CountingSource(data::Corpus corpus) : corpus_(std::move(corpus)) {}
    int64_t size() const override { return corpus_.size(); }
    data::Batch fetch(std::span<const int64_t> indices) const override {
        ++fetches;
        return corpus_.fetch(indices);
    }
    int64_t image_size() const override { return corpus_.image_size(); }
    std::string describe() const override { return "counting(" + corpus_.describe() + ")"; }

    mutable int64_t fetches = 0;

private:
    data::Corpus corpus_;
};

// Two-class synthetic shapes at the tiny resolution.
inline data::Corpus tiny_corpus(int64_t classes = 2, int64_t per_class = 12, uint64_t seed = 7) {
    return data::synthetic_shapes(classes, per_class, 16, seed);
}

class DefaultDtype {
public:
    explicit DefaultDtype(caffe2::TypeMeta t) : saved_(torch::get_default_dtype()) { torch::set_default_dtype(t); }
    ~DefaultDtype() { torch::set_default_dtype(saved_); }

private:
    caffe2::TypeMeta saved_;
};

class TempDir {
public:
    explicit TempDir(const std::string& tag) {
        path_ = std::filesystem::temp_directory_path() /
                ("transferi2i_" + tag + "_" + std::to_string(reinterpret_cast<uintptr_t>(this)));
        std::filesystem::remove_all(path_);
        std::filesystem::create_directories(path_);
    }
    ~TempDir() { std::filesystem::remove_all(path_); }
    const std::filesystem::path& path() const { return path_; }

private:
    std::filesystem::path path_;
};

inline bool bit_equal(const torch::Tensor& a, const torch::Tensor& b) {
    return a.sizes() == b.sizes() && a.dtype() == b.dtype() && torch::equal(a, b);
}

struct GradCheck {
    double worst = 0;  // largest relative error seen
    int checked = 0;
};

// Central differences of `loss` with respect to up to `per_tensor` entries of each tensor,
// compared against the analytic gradient already stored in `.grad()`.
inline GradCheck check_gradients(const std::vector<torch::Tensor>& params, const std::function<double()>& loss,
                                 int per_tensor = 3, double eps = 1e-6) {
    GradCheck r;
    torch::NoGradGuard no_grad;
    for (const auto& p : params) {
        const auto n = std::min<int64_t>(per_tensor, p.numel());
        auto flat = p.view(-1);
        auto grad = p.grad().defined() ? p.grad().view(-1) : torch::zeros_like(flat);
        for (int64_t i = 0; i < n; ++i) {
            const double x0 = flat[i].item<double>();
            flat[i] = x0 + eps;
            const double up = loss();
            flat[i] = x0 - eps;
            const double down = loss();
            flat[i] = x0;
            const double numeric = (up - down) / (2 * eps);
            const double analytic = grad[i].item<double>();
            const double scale = std::max({std::abs(numeric), std::abs(analytic), 1e-3});
            r.worst = std::max(r.worst, std::abs(numeric - analytic) / scale);
            ++r.checked;
        }
    }
    return r;
}

}  // namespace transferi2i::testing
