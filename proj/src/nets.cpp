#include "transferi2i/nets.hpp"

#include <algorithm>
#include <unordered_set>

#include "transferi2i/errors.hpp"

namespace transferi2i::nets {

namespace F = torch::nn::functional;

namespace {

torch::nn::Conv2d conv(int64_t in, int64_t out, int64_t kernel) {
    return torch::nn::Conv2d(torch::nn::Conv2dOptions(in, out, kernel).stride(1).padding(kernel / 2));
}

torch::Tensor upsample2(const torch::Tensor& x) {
    return F::interpolate(x, F::InterpolateFuncOptions()
                                 .scale_factor(std::vector<double>{2.0, 2.0})
                                 .mode(torch::kNearest));
}

torch::Tensor avgpool2(const torch::Tensor& x) { return F::avg_pool2d(x, F::AvgPool2dFuncOptions(2)); }

// Xavier-uniform weights and zero biases on every conv/linear layer.
void init_weights(torch::nn::Module& m) {
    torch::NoGradGuard no_grad;
    for (auto& child : m.modules(/*include_self=*/false)) {
        if (auto* c = child->as<torch::nn::Conv2d>()) {
            torch::nn::init::xavier_uniform_(c->weight);
            torch::nn::init::zeros_(c->bias);
        } else if (auto* l = child->as<torch::nn::Linear>()) {
            torch::nn::init::xavier_uniform_(l->weight);
            torch::nn::init::zeros_(l->bias);
        }
    }
}

std::string shape_string(at::IntArrayRef sizes) {
    std::string s = "(";
    for (size_t i = 0; i < sizes.size(); ++i) s += (i ? "," : "") + std::to_string(sizes[i]);
    return s + ")";
}

void require_class(bool conditional, const std::optional<torch::Tensor>& c, int64_t batch, const char* who) {
    if (conditional && !c) {
        throw UsageError(std::string(who) + ": conditional network called without a class index");
    }
    if (c && c->numel() != batch) {
        throw ShapeError(std::string(who) + ": class index batch " + std::to_string(c->numel()) +
                         " does not match input batch " + std::to_string(batch));
    }
}

}  // namespace

std::string to_string(Role role) {
    switch (role) {
        case Role::generator: return "generator";
        case Role::aux_generator: return "aux_generator";
        case Role::discriminator: return "discriminator";
        case Role::encoder: return "encoder";
        case Role::adaptor: return "adaptor";
    }
    return "unknown";
}

void check_generator_pyramid(const ArchitectureSpec& spec, const FeaturePyramid& pyramid, int64_t batch,
                             const std::string& what) {
    if (pyramid.size() != spec.pyramid_levels.size()) {
        throw ShapeError(what + ": expected " + std::to_string(spec.pyramid_levels.size()) + " levels, got " +
                         std::to_string(pyramid.size()));
    }
    for (auto l : spec.pyramid_levels) {
        auto it = pyramid.find(l);
        if (it == pyramid.end()) throw ShapeError(what + ": missing level " + std::to_string(l));
        const auto r = spec.level_resolution(l);
        const std::vector<int64_t> want{batch, spec.generator_channels(l), r, r};
        if (it->second.sizes() != at::IntArrayRef(want)) {
            throw ShapeError(what + ": level " + std::to_string(l) + " has shape " +
                             shape_string(it->second.sizes()) + ", expected " + shape_string(want));
        }
    }
}

// ---------------------------------------------------------------------------
// ResBlocks

UpBlockImpl::UpBlockImpl(int64_t in_channels, int64_t out_channels) {
    conv1_ = register_module("conv1", conv(in_channels, out_channels, 3));
    conv2_ = register_module("conv2", conv(out_channels, out_channels, 3));
    skip_ = register_module("skip", conv(in_channels, out_channels, 1));
}

torch::Tensor UpBlockImpl::forward(const torch::Tensor& x) {
    auto h = conv1_(upsample2(torch::relu(x)));
    h = conv2_(torch::relu(h));
    return h + skip_(upsample2(x));
}

DownBlockImpl::DownBlockImpl(int64_t in_channels, int64_t out_channels, bool preactivate)
    : preactivate_(preactivate) {
    conv1_ = register_module("conv1", conv(in_channels, out_channels, 3));
    conv2_ = register_module("conv2", conv(out_channels, out_channels, 3));
    skip_ = register_module("skip", conv(in_channels, out_channels, 1));
}

torch::Tensor DownBlockImpl::forward(const torch::Tensor& x) {
    auto h = conv1_(preactivate_ ? torch::relu(x) : x);
    h = avgpool2(conv2_(torch::relu(h)));
    return h + avgpool2(skip_(x));
}

// ---------------------------------------------------------------------------
// Generator

GeneratorImpl::GeneratorImpl(ArchitectureSpec spec, bool conditional, Role role)
    : spec_(std::move(spec)), conditional_(conditional), role_(role) {
    spec_.validate();
    int64_t in = spec_.latent_dim;
    if (conditional_) {
        embed_ = register_module("embed", torch::nn::Embedding(spec_.num_classes, spec_.class_embedding_dim));
        in += spec_.class_embedding_dim;
    }
    const auto s0 = spec_.initial_size();
    stem_ = register_module("stem", torch::nn::Linear(in, spec_.generator_channels(0) * s0 * s0));
    for (int64_t i = 0; i < spec_.num_resblocks; ++i) {
        blocks_.push_back(register_module(
            "rb" + std::to_string(i), UpBlock(spec_.generator_channels(i), spec_.generator_channels(i + 1))));
    }
    to_rgb_ = register_module("to_rgb", conv(spec_.generator_channels(spec_.num_resblocks), 3, 3));
    init_weights(*this);
}

torch::Tensor GeneratorImpl::stem(const torch::Tensor& z, const std::optional<torch::Tensor>& c) {
    if (z.dim() != 2 || z.size(1) != spec_.latent_dim) {
        throw ShapeError("generator: latent must be (B, " + std::to_string(spec_.latent_dim) + "), got " +
                         shape_string(z.sizes()));
    }
    require_class(conditional_, c, z.size(0), "generator");
    auto in = conditional_ ? torch::cat({z, embed_(*c)}, 1) : z;
    const auto s0 = spec_.initial_size();
    return stem_(in).view({z.size(0), spec_.generator_channels(0), s0, s0});
}

GeneratorOutput GeneratorImpl::forward(const torch::Tensor& z, const std::optional<torch::Tensor>& c,
                                       const FeaturePyramid* adapted, std::span<const double> w) {
    const auto defaults = spec_.default_injection_weights();
    if (w.empty()) w = defaults;
    if (w.size() != spec_.pyramid_levels.size()) {
        throw ShapeError("generator: expected " + std::to_string(spec_.pyramid_levels.size()) +
                         " injection weights, got " + std::to_string(w.size()));
    }
    if (adapted) check_generator_pyramid(spec_, *adapted, z.size(0), "generator: adapted pyramid");

    GeneratorOutput out;
    auto h = stem(z, c);
    size_t tap = 0;
    for (int64_t l = 0; l < spec_.num_resblocks; ++l) {
        if (tap < spec_.pyramid_levels.size() && spec_.pyramid_levels[tap] == l) {
            if (adapted && w[tap] != 0.0) h = h + w[tap] * adapted->at(l);
            out.pyramid.emplace(l, h);
            ++tap;
        }
        h = blocks_[static_cast<size_t>(l)](h);
    }
    out.image = torch::tanh(to_rgb_(torch::relu(h)));
    return out;
}

torch::Tensor GeneratorImpl::forward_from_level(int64_t level, torch::Tensor h) {
    if (level < 0 || level >= spec_.num_resblocks) {
        throw ShapeError("generator: level " + std::to_string(level) + " out of range");
    }
    for (int64_t l = level; l < spec_.num_resblocks; ++l) h = blocks_[static_cast<size_t>(l)](h);
    return torch::tanh(to_rgb_(torch::relu(h)));
}

void GeneratorImpl::set_block(int64_t index, UpBlock block) {
    blocks_.at(static_cast<size_t>(index)) = replace_module("rb" + std::to_string(index), std::move(block));
}

// ---------------------------------------------------------------------------
// Discriminator / encoder

DiscriminatorImpl::DiscriminatorImpl(ArchitectureSpec spec, bool conditional, Role role)
    : spec_(std::move(spec)), conditional_(conditional), role_(role) {
    spec_.validate();
    int64_t in = 3;
    for (int64_t b = 0; b < spec_.num_resblocks; ++b) {
        const auto out = spec_.discriminator_channels(b);
        blocks_.push_back(register_module("rb" + std::to_string(b), DownBlock(in, out, /*preactivate=*/b > 0)));
        in = out;
    }
    head_ = register_module("head", torch::nn::Linear(in, 1));
    if (conditional_) {
        projection_ = register_module("projection", torch::nn::Embedding(spec_.num_classes, in));
    }
    init_weights(*this);
}

FeaturePyramid DiscriminatorImpl::trunk(const torch::Tensor& x, torch::Tensor* last) {
    const auto s = spec_.image_size;
    if (x.dim() != 4 || x.size(1) != 3 || x.size(2) != s || x.size(3) != s) {
        throw ShapeError(to_string(role_) + ": input must be (B,3," + std::to_string(s) + "," + std::to_string(s) +
                         "), got " + shape_string(x.sizes()));
    }
    FeaturePyramid pyramid;
    auto h = x;
    for (int64_t b = 0; b < spec_.num_resblocks; ++b) {
        h = blocks_[static_cast<size_t>(b)](h);
        const auto level = spec_.level_for_discriminator_block(b);
        if (std::binary_search(spec_.pyramid_levels.begin(), spec_.pyramid_levels.end(), level)) {
            pyramid.emplace(level, h);
        }
    }
    if (last) *last = h;
    return pyramid;
}

DiscriminatorOutput DiscriminatorImpl::forward(const torch::Tensor& x, const std::optional<torch::Tensor>& c) {
    require_class(conditional_, c, x.dim() > 0 ? x.size(0) : 0, to_string(role_).c_str());
    torch::Tensor h;
    DiscriminatorOutput out;
    out.pyramid = trunk(x, &h);
    auto pooled = torch::relu(h).sum({2, 3});
    out.logit = head_(pooled).squeeze(1);
    if (conditional_) out.logit = out.logit + (projection_(*c) * pooled).sum(1);
    return out;
}

FeaturePyramid DiscriminatorImpl::features(const torch::Tensor& x) { return trunk(x, nullptr); }

// ---------------------------------------------------------------------------
// Adaptor

AdaptorImpl::AdaptorImpl(ArchitectureSpec spec, bool conditional)
    : spec_(std::move(spec)), conditional_(conditional) {
    spec_.validate();
    const auto deepest = spec_.pyramid_levels.front();
    for (auto l : spec_.pyramid_levels) {
        const auto in = spec_.discriminator_channels(spec_.discriminator_block_for_level(l));
        const auto out = spec_.generator_channels(l);
        torch::nn::Sequential seq;
        if (!conditional_) {
            seq->push_back(conv(in, out, 3));
        } else if (l == deepest) {
            seq->push_back(conv(in, out, 3));
            seq->push_back(conv(out, out, 3));
        } else {
            seq->push_back(conv(in, out, 3));
            seq->push_back(torch::nn::ReLU());
            seq->push_back(conv(out, out, 3));
            seq->push_back(conv(out, out, 1));
        }
        levels_.emplace(l, register_module("level" + std::to_string(l), seq));
    }
    init_weights(*this);
}

FeaturePyramid AdaptorImpl::forward(const FeaturePyramid& disc_features) {
    if (disc_features.size() != levels_.size()) {
        throw ShapeError("adaptor: expected " + std::to_string(levels_.size()) + " levels, got " +
                         std::to_string(disc_features.size()));
    }
    FeaturePyramid out;
    for (auto& [l, net] : levels_) {
        auto it = disc_features.find(l);
        if (it == disc_features.end()) throw ShapeError("adaptor: missing level " + std::to_string(l));
        out.emplace(l, net->forward(it->second));
    }
    return out;
}

// ---------------------------------------------------------------------------

Networks build_networks(const ArchitectureSpec& spec, bool conditional, uint64_t seed) {
    spec.validate();
    torch::manual_seed(seed);
    Networks n;
    n.generator = Generator(spec, conditional);
    n.discriminator = Discriminator(spec, conditional);
    n.adaptor = Adaptor(spec, conditional);
    return n;
}

GeneratorOutput generator_forward(Generator& g, const torch::Tensor& z, const std::optional<torch::Tensor>& c,
                                  const FeaturePyramid* adapted, std::span<const double> w) {
    return g->forward(z, c, adapted, w);
}

DiscriminatorOutput discriminator_forward(Discriminator& d, const torch::Tensor& x,
                                          const std::optional<torch::Tensor>& c) {
    return d->forward(x, c);
}

void copy_parameters(const torch::nn::Module& from, torch::nn::Module& to) {
    torch::NoGradGuard no_grad;
    auto src = from.named_parameters();
    for (auto& p : to.named_parameters()) {
        const auto* s = src.find(p.key());
        if (!s) throw CheckpointError("copy_parameters: source has no parameter '" + p.key() + "'");
        if (s->sizes() != p.value().sizes()) {
            throw ShapeError("copy_parameters: shape mismatch for '" + p.key() + "'");
        }
        p.value().copy_(*s);
    }
}

Generator make_auxiliary_generator(const Generator& g) {
    Generator aux(g->spec(), g->conditional(), Role::aux_generator);
    aux->to(g->parameters().front().scalar_type());
    copy_parameters(*g, *aux);
    return aux;
}

SharingPlan share_deep_layers(Generator& g, Generator& aux, int64_t k) {
    if (!(g->spec() == aux->spec()) || g->conditional() != aux->conditional()) {
        throw ConfigError("share_deep_layers: generators come from different specs");
    }
    if (k < 0 || k > g->spec().num_resblocks) {
        throw ConfigError("share_deep_layers: k=" + std::to_string(k) + " outside [0, " +
                          std::to_string(g->spec().num_resblocks) + "]");
    }
    SharingPlan plan;
    plan.num_shared_resblocks = k;
    for (int64_t i = 0; i < k; ++i) {
        aux->set_block(i, g->block(i));
        const auto prefix = "rb" + std::to_string(i) + ".";
        for (auto& p : g->block(i)->named_parameters()) plan.shared_param_names.insert(prefix + p.key());
    }
    return plan;
}

Discriminator make_encoder(const Discriminator& d) {
    Discriminator e(d->spec(), d->conditional(), Role::encoder);
    e->to(d->parameters().front().scalar_type());
    copy_parameters(*d, *e);
    return e;
}

int64_t parameter_count(const torch::nn::Module& m) {
    int64_t n = 0;
    for (const auto& p : m.parameters()) n += p.numel();
    return n;
}

std::vector<torch::Tensor> unique_parameters(const std::vector<const torch::nn::Module*>& modules) {
    std::vector<torch::Tensor> out;
    std::unordered_set<const void*> seen;
    for (const auto* m : modules) {
        for (const auto& p : m->parameters()) {
            if (seen.insert(p.unsafeGetTensorImpl()).second) out.push_back(p);
        }
    }
    return out;
}

FrozenParameters::FrozenParameters(torch::nn::Module& m) {
    for (auto& p : m.parameters()) {
        saved_.emplace_back(p, p.requires_grad());
        p.set_requires_grad(false);
    }
}

FrozenParameters::~FrozenParameters() {
    for (auto& [p, flag] : saved_) p.set_requires_grad(flag);
}

}  // namespace transferi2i::nets
