#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "transferi2i/arch.hpp"

namespace transferi2i::nets {

enum class Role { generator, aux_generator, discriminator, encoder, adaptor };

std::string to_string(Role role);

/// Ordered map from pyramid level to a (B, C, H, W) feature map.
using FeaturePyramid = std::map<int64_t, torch::Tensor>;

/// Checks that `pyramid` holds exactly the spec's levels at the generator-side
/// shapes for a batch of `batch` items. Throws ShapeError naming the level.
void check_generator_pyramid(const ArchitectureSpec& spec, const FeaturePyramid& pyramid, int64_t batch,
                             const std::string& what);

/// Pre-activation up-sampling ResBlock: relu -> up2 -> conv3x3 -> relu -> conv3x3, plus a 1x1 skip.
class UpBlockImpl : public torch::nn::Module {
public:
    UpBlockImpl(int64_t in_channels, int64_t out_channels);
    torch::Tensor forward(const torch::Tensor& x);

private:
    torch::nn::Conv2d conv1_{nullptr}, conv2_{nullptr}, skip_{nullptr};
};
TORCH_MODULE(UpBlock);

/// Down-sampling ResBlock: [relu] -> conv3x3 -> relu -> conv3x3 -> avgpool2, plus a pooled 1x1 skip.
class DownBlockImpl : public torch::nn::Module {
public:
    DownBlockImpl(int64_t in_channels, int64_t out_channels, bool preactivate);
    torch::Tensor forward(const torch::Tensor& x);

private:
    bool preactivate_;
    torch::nn::Conv2d conv1_{nullptr}, conv2_{nullptr}, skip_{nullptr};
};
TORCH_MODULE(DownBlock);

struct GeneratorOutput {
    torch::Tensor image;     // (B, 3, H, W) in [-1, 1]
    FeaturePyramid pyramid;  // post-injection trunk activations entering each tapped ResBlock
};

class GeneratorImpl : public torch::nn::Module {
public:
    GeneratorImpl(ArchitectureSpec spec, bool conditional, Role role = Role::generator);

    /// z: (B, Z); c: (B,) int64 class indices, required iff conditional.
    /// `adapted` is injected as trunk_l + w_l * adapted_l before ResBlock l;
    /// an empty `w` selects the spec's default injection weights.
    GeneratorOutput forward(const torch::Tensor& z, const std::optional<torch::Tensor>& c = std::nullopt,
                            const FeaturePyramid* adapted = nullptr, std::span<const double> w = {});

    /// Runs ResBlocks `level..n-1` and the output head starting from trunk activation `h`.
    torch::Tensor forward_from_level(int64_t level, torch::Tensor h);

    UpBlock block(int64_t index) const { return blocks_.at(static_cast<size_t>(index)); }
    void set_block(int64_t index, UpBlock block);

    const ArchitectureSpec& spec() const { return spec_; }
    bool conditional() const { return conditional_; }
    Role role() const { return role_; }

private:
    torch::Tensor stem(const torch::Tensor& z, const std::optional<torch::Tensor>& c);

    ArchitectureSpec spec_;
    bool conditional_;
    Role role_;
    torch::nn::Embedding embed_{nullptr};
    torch::nn::Linear stem_{nullptr};
    std::vector<UpBlock> blocks_;
    torch::nn::Conv2d to_rgb_{nullptr};
};
TORCH_MODULE(Generator);

struct DiscriminatorOutput {
    torch::Tensor logit;     // (B,) unbounded
    FeaturePyramid pyramid;  // ResBlock outputs keyed by the matching generator level
};

/// Discriminator, also used as the encoder of the translation system.
class DiscriminatorImpl : public torch::nn::Module {
public:
    DiscriminatorImpl(ArchitectureSpec spec, bool conditional, Role role = Role::discriminator);

    /// c is required iff the network is conditional (projection conditioning).
    DiscriminatorOutput forward(const torch::Tensor& x, const std::optional<torch::Tensor>& c = std::nullopt);

    /// Pyramid only; needs no class index. This is the encoder path.
    FeaturePyramid features(const torch::Tensor& x);

    const ArchitectureSpec& spec() const { return spec_; }
    bool conditional() const { return conditional_; }
    Role role() const { return role_; }

private:
    FeaturePyramid trunk(const torch::Tensor& x, torch::Tensor* last);

    ArchitectureSpec spec_;
    bool conditional_;
    Role role_;
    std::vector<DownBlock> blocks_;
    torch::nn::Linear head_{nullptr};
    torch::nn::Embedding projection_{nullptr};
};
TORCH_MODULE(Discriminator);

/// One sub-network per pyramid level mapping discriminator-side features to
/// generator-shaped features.
///
/// Two-class: a single 3x3 conv. Conditional: conv3x3 -> relu -> conv3x3 -> conv1x1,
/// except the deepest level which is two 3x3 convs.
class AdaptorImpl : public torch::nn::Module {
public:
    AdaptorImpl(ArchitectureSpec spec, bool conditional);

    FeaturePyramid forward(const FeaturePyramid& disc_features);

    const ArchitectureSpec& spec() const { return spec_; }
    bool conditional() const { return conditional_; }

private:
    ArchitectureSpec spec_;
    bool conditional_;
    std::map<int64_t, torch::nn::Sequential> levels_;
};
TORCH_MODULE(Adaptor);

struct Networks {
    Generator generator{nullptr};
    Discriminator discriminator{nullptr};
    Adaptor adaptor{nullptr};
};

/// Fresh networks; initialization is a pure function of (spec, conditional, seed).
/// Reseeds the global torch RNG.
Networks build_networks(const ArchitectureSpec& spec, bool conditional, uint64_t seed);

GeneratorOutput generator_forward(Generator& g, const torch::Tensor& z, const std::optional<torch::Tensor>& c,
                                  const FeaturePyramid* adapted, std::span<const double> w);

DiscriminatorOutput discriminator_forward(Discriminator& d, const torch::Tensor& x,
                                          const std::optional<torch::Tensor>& c);

struct SharingPlan {
    int64_t num_shared_resblocks = 0;
    std::set<std::string> shared_param_names;  // names as seen from either generator, e.g. "rb0.conv1.weight"
};

/// A generator of identical architecture whose parameters start as a copy of `g`.
Generator make_auxiliary_generator(const Generator& g);

/// Shares the `k` ResBlocks closest to the latent input between `g` and `aux`:
/// afterwards both modules hold the same tensors for those blocks.
SharingPlan share_deep_layers(Generator& g, Generator& aux, int64_t k);

/// An encoder: a discriminator-shaped network initialized from `d`.
Discriminator make_encoder(const Discriminator& d);

/// Copies every parameter of `from` into the same-named parameter of `to`.
void copy_parameters(const torch::nn::Module& from, torch::nn::Module& to);

int64_t parameter_count(const torch::nn::Module& m);

/// Parameters reachable from `m`, one entry per distinct storage.
std::vector<torch::Tensor> unique_parameters(const std::vector<const torch::nn::Module*>& modules);

/// Temporarily disables requires_grad on every parameter of a module so that
/// gradients can pass through it to its inputs without reaching its weights.
class FrozenParameters {
public:
    explicit FrozenParameters(torch::nn::Module& m);
    ~FrozenParameters();
    FrozenParameters(const FrozenParameters&) = delete;
    FrozenParameters& operator=(const FrozenParameters&) = delete;

private:
    std::vector<std::pair<torch::Tensor, bool>> saved_;
};

}  // namespace transferi2i::nets
