#pragma once

#include <string>
#include <vector>

#include <torch/torch.h>

#include "transferi2i/checkpoint.hpp"

namespace transferi2i {

struct AdamOptions {
    double lr = 1e-4;
    double beta1 = 0.0;
    double beta2 = 0.99;
    double eps = 1e-8;
};

/// Adam over a set of named parameters. Parameters that share storage are
/// updated once per step; moments are addressable by name so they travel in
/// checkpoints.
class Adam {
public:
    Adam(const std::vector<std::pair<std::string, const torch::nn::Module*>>& modules, AdamOptions options);

    void zero_grad();
    /// Parameters with an undefined gradient are skipped.
    void step();

    void save(Checkpoint& ckpt, const std::string& prefix) const;
    void load(const Checkpoint& ckpt, const std::string& prefix);

    const AdamOptions& options() const { return options_; }
    int64_t steps() const { return steps_; }
    size_t size() const { return params_.size(); }

private:
    struct Slot {
        std::string name;
        torch::Tensor param;
        torch::Tensor exp_avg;
        torch::Tensor exp_avg_sq;
    };

    AdamOptions options_;
    std::vector<Slot> params_;
    int64_t steps_ = 0;
};

}  // namespace transferi2i
