#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "transferi2i/checkpoint.hpp"
#include "transferi2i/config.hpp"
#include "transferi2i/data.hpp"
#include "transferi2i/nets.hpp"
#include "transferi2i/optim.hpp"
#include "transferi2i/pretrain.hpp"

namespace transferi2i::i2i {

/// Sum over levels of alpha_l times the mean absolute difference between the
/// discriminator pyramids of `x_in` and `x_out`. D's weights receive no gradient.
torch::Tensor reconstruction_loss(nets::Discriminator& d, const torch::Tensor& x_in, const torch::Tensor& x_out,
                                  std::span<const double> alpha);

/// Sum over levels of alpha_l * mean |a_l - b_l|; levels in key order.
torch::Tensor weighted_pyramid_l1(const nets::FeaturePyramid& a, const nets::FeaturePyramid& b,
                                  std::span<const double> alpha);

/// Networks of one translation direction (two-class) or of the single shared
/// conditional system.
struct Direction {
    std::string name;  // "1to2", "2to1" or "all"
    nets::Discriminator encoder{nullptr};
    nets::Adaptor adaptor{nullptr};
    nets::Generator generator{nullptr};
    nets::Generator aux{nullptr};  // null when the auxiliary generator is disabled
    nets::Discriminator discriminator{nullptr};
    nets::SharingPlan sharing;
};

/// Where each network of a direction starts. A null pointer means random initialization.
///   generator:     "G." of a base/pretrain checkpoint (also seeds the auxiliary generator)
///   discriminator: "D." of a base/pretrain checkpoint
///   encoder:       "D." of a base/pretrain checkpoint
///   adaptor:       "A." of a selfinit checkpoint
struct DirectionInit {
    std::string name;
    const Checkpoint* generator = nullptr;
    const Checkpoint* discriminator = nullptr;
    const Checkpoint* encoder = nullptr;
    const Checkpoint* adaptor = nullptr;
};

/// Data a direction trains on. `source` feeds the encoder, `target` the discriminator's real side.
/// For the conditional system both are the full labeled training corpus.
struct DirectionData {
    const data::ImageSource* source = nullptr;
    const data::ImageSource* target = nullptr;
};

/// Explicit inputs of one step for one direction; lets tests evaluate the objective
/// on fixed tensors.
struct StepInputs {
    torch::Tensor x_source;
    torch::Tensor x_target;
    std::optional<torch::Tensor> c_target_real;  // labels of x_target (conditional)
    std::optional<torch::Tensor> c_fake;         // requested output class (conditional)
    torch::Tensor z;
    torch::Tensor z_aux;
    std::optional<torch::Tensor> c_aux;
};

struct LossTerms {
    torch::Tensor d_loss;
    torch::Tensor r1;   // R1 penalty on x_target, only when requested
    torch::Tensor adv;  // non-saturating generator term on translated images
    torch::Tensor aux;  // lambda_aux-free generator term on auxiliary samples (undefined when disabled)
    torch::Tensor rec;
    torch::Tensor total;  // adv + lambda_aux * aux + lambda_rec * rec
};

struct StepRecord {
    int64_t step = 0;
    std::string direction;
    double d_loss = 0;
    double adv = 0;
    double aux = 0;
    double rec = 0;
    double total = 0;
};

void write_step_csv(const std::filesystem::path& path, const std::vector<StepRecord>& log);

class I2ISystem {
public:
    /// Builds every direction from `inits`, checking stage tags against `config`
    /// (source_target_init / self_init / aux_generator / shared_resblocks).
    static I2ISystem build(const ArchitectureSpec& spec, bool conditional, const std::vector<DirectionInit>& inits,
                           const StageConfig& config, uint64_t seed);

    /// Restores a system written by to_checkpoint(), including optimizer state and sharing.
    static I2ISystem from_checkpoint(const Checkpoint& ckpt, const StageConfig& config);

    /// x -> E -> A -> G with injection weights `w` (empty = config weights).
    torch::Tensor translate(size_t direction, const torch::Tensor& x, const torch::Tensor& z,
                            const std::optional<torch::Tensor>& c = std::nullopt, std::span<const double> w = {});

    /// Discriminator-side and generator-side objectives for fixed inputs. The generator-side
    /// terms are computed with D's parameters frozen.
    LossTerms discriminator_objective(size_t direction, const StepInputs& in, bool with_r1 = false);
    LossTerms generator_objective(size_t direction, const StepInputs& in);

    /// One D step followed by one {E, A, G, G_aux} step over all directions.
    std::vector<StepRecord> train_step(const std::vector<DirectionData>& data,
                                       const pretrain::LabelSampler* labels = nullptr);

    StepInputs sample_inputs(size_t direction, const DirectionData& data, const pretrain::LabelSampler* labels) const;

    Checkpoint to_checkpoint() const;

    std::vector<Direction>& directions() { return dirs_; }
    const std::vector<Direction>& directions() const { return dirs_; }
    const StageConfig& config() const { return config_; }
    const ArchitectureSpec& spec() const { return spec_; }
    bool conditional() const { return conditional_; }
    int64_t step() const { return step_; }
    uint64_t seed() const { return seed_; }

private:
    I2ISystem(ArchitectureSpec spec, bool conditional, StageConfig config, uint64_t seed);
    void make_optimizers();

    ArchitectureSpec spec_;
    bool conditional_ = false;
    StageConfig config_;
    uint64_t seed_ = 0;
    int64_t step_ = 0;
    std::vector<Direction> dirs_;
    std::unique_ptr<Adam> opt_g_;
    std::unique_ptr<Adam> opt_ea_;
    std::unique_ptr<Adam> opt_d_;
};

struct StageResult {
    Checkpoint initial;  // the system before the first step
    Checkpoint final;
    std::vector<StepRecord> log;
};

/// Runs config.steps_i2i steps from a freshly built system. `after_step` runs after every step.
StageResult run_i2i_stage(I2ISystem& system, const std::vector<DirectionData>& data,
                          const pretrain::LabelSampler* labels = nullptr,
                          const std::function<void(I2ISystem&)>& after_step = {});

/// Sanity check: every name in each direction's sharing plan resolves to one storage in G and G_aux.
bool sharing_intact(const I2ISystem& system);

}  // namespace transferi2i::i2i
