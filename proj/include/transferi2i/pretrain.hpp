#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <utility>
#include <vector>

#include <torch/torch.h>

#include "transferi2i/checkpoint.hpp"
#include "transferi2i/config.hpp"
#include "transferi2i/data.hpp"
#include "transferi2i/nets.hpp"
#include "transferi2i/optim.hpp"

namespace transferi2i::pretrain {

enum class Side { discriminator, generator };

/// Logistic GAN loss in log-sigmoid form (softplus(-x) == -log sigmoid(x)):
///   discriminator: softplus(-real) + softplus(fake) + lambda_aux * softplus(aux)
///   generator:     softplus(-fake) + lambda_aux * softplus(-aux)   (non-saturating)
/// Each term is a batch mean. `real_logits` is ignored on the generator side.
/// Throws NumericalError on non-finite logits.
torch::Tensor gan_loss(const torch::Tensor& real_logits, const torch::Tensor& fake_logits, Side side,
                       const std::optional<torch::Tensor>& aux_fake_logits = std::nullopt,
                       double lambda_aux = 0.01);

/// Batch mean of ||d(sum of real_logits)/d real_images||^2, with the graph kept so it can be
/// backpropagated into D. `real_images` must require grad.
torch::Tensor r1_penalty(const torch::Tensor& real_logits, const torch::Tensor& real_images);

/// Weight of the lazily applied R1 term at `step`, or 0 when it is skipped.
double r1_weight(const StageConfig& config, int64_t step);

struct LossRecord {
    int64_t step = 0;
    double d_loss = 0;
    double g_loss = 0;
    double aux_loss = 0;
};

void write_loss_csv(const std::filesystem::path& path, const std::vector<LossRecord>& log);

/// Draws class labels from the empirical label distribution of a dataset.
/// With a single class it returns zeros without consuming randomness.
class LabelSampler {
public:
    LabelSampler() = default;
    LabelSampler(const std::vector<int64_t>& labels, int64_t num_classes);
    torch::Tensor sample(int64_t n, torch::Generator& gen) const;
    int64_t num_classes() const { return num_classes_; }

private:
    torch::Tensor probs_;
    int64_t num_classes_ = 1;
};

/// G/D pair plus optimizer state; one D step then one G step per iteration.
class GanStageState {
public:
    GanStageState(nets::Generator g, nets::Discriminator d, AdamOptions g_opts, AdamOptions d_opts, uint64_t seed,
                  int64_t step = 0);

    /// Fresh networks seeded by `seed`.
    static GanStageState fresh(const ArchitectureSpec& spec, bool conditional, AdamOptions g_opts,
                               AdamOptions d_opts, uint64_t seed);

    /// Networks from "G."/"D."; optimizer state and step restored when present and `resume` is set,
    /// otherwise fresh optimizers starting at step 0.
    static GanStageState from_checkpoint(const Checkpoint& ckpt, AdamOptions g_opts, AdamOptions d_opts,
                                         uint64_t seed, bool resume);

    /// One iteration on batches drawn from `data`. `labels` must be set for conditional networks.
    LossRecord train_step(const data::ImageSource& data, int64_t batch_size, const LabelSampler* labels);

    void set_r1(double gamma, int64_t every);

    Checkpoint to_checkpoint(Stage stage) const;

    nets::Generator& generator() { return g_; }
    nets::Discriminator& discriminator() { return d_; }
    int64_t step() const { return step_; }

private:
    nets::Generator g_;
    nets::Discriminator d_;
    Adam g_opt_;
    Adam d_opt_;
    uint64_t seed_;
    int64_t step_;
    double r1_gamma_ = 0;
    int64_t r1_every_ = 1;
};

struct StageResult {
    Checkpoint checkpoint;
    std::vector<LossRecord> log;
};

/// Trains the stand-in for the pretrained GAN (tagged `base`).
StageResult train_base_gan(const ArchitectureSpec& spec, const data::ImageSource& dataset,
                           const StageConfig& config, uint64_t seed);

/// Continues a base/pretrain stage checkpoint for `steps` more iterations with the base optimizer settings.
StageResult resume_base_gan(const Checkpoint& ckpt, const data::ImageSource& dataset, const StageConfig& config,
                            int64_t steps);

/// Finetunes a base checkpoint on one domain (two-class) with the configured rates.
StageResult finetune_domain(const Checkpoint& base, const data::ImageSource& dataset, const StageConfig& config,
                            uint64_t seed, const std::string& domain);

struct SourceTargetResult {
    StageResult source;
    StageResult target;
};

/// Two independent finetunes of `base`: one on the source domain, one on the target domain.
SourceTargetResult finetune_source_target(const Checkpoint& base, const data::ImageSource& source,
                                          const data::ImageSource& target, const StageConfig& config,
                                          uint64_t seed);

/// Finetunes a conditional base checkpoint on all labeled data.
StageResult finetune_conditional(const Checkpoint& base, const data::Corpus& dataset, const StageConfig& config,
                                 uint64_t seed);

}  // namespace transferi2i::pretrain
