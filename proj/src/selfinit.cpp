#include "transferi2i/selfinit.hpp"

#include <fstream>
#include <iostream>

#include "transferi2i/data.hpp"
#include "transferi2i/errors.hpp"
#include "transferi2i/optim.hpp"
#include "transferi2i/rng.hpp"

namespace transferi2i::selfinit {

namespace {

constexpr int64_t kProbeBatch = 64;

// Class indices drawn uniformly: the stage may not look at the label distribution of any dataset.
std::optional<torch::Tensor> sample_classes(bool conditional, int64_t num_classes, int64_t n, torch::Generator& gen) {
    if (!conditional) return std::nullopt;
    return torch::randint(num_classes, {n}, gen, torch::kLong);
}

torch::Tensor step_loss(nets::Generator& g, nets::Discriminator& d, nets::Adaptor& a, const torch::Tensor& z,
                        const std::optional<torch::Tensor>& c) {
    nets::FeaturePyramid target;
    nets::FeaturePyramid disc;
    {
        torch::NoGradGuard no_grad;
        auto out = g->forward(z, c);
        target = std::move(out.pyramid);
        disc = d->features(out.image);
    }
    return alignment_loss(target, a->forward(disc));
}

double probe_loss(nets::Generator& g, nets::Discriminator& d, nets::Adaptor& a, uint64_t seed) {
    torch::NoGradGuard no_grad;
    auto gen = step_generator(seed, Stream::probe, 0);
    auto z = torch::randn({kProbeBatch, g->spec().latent_dim}, gen);
    auto c = sample_classes(g->conditional(), g->spec().num_classes, kProbeBatch, gen);
    return step_loss(g, d, a, z, c).item<double>();
}

}  // namespace

torch::Tensor alignment_loss(const nets::FeaturePyramid& generated, const nets::FeaturePyramid& adapted) {
    if (generated.size() != adapted.size()) {
        throw ShapeError("alignment_loss: pyramids have " + std::to_string(generated.size()) + " and " +
                         std::to_string(adapted.size()) + " levels");
    }
    if (generated.empty()) throw ShapeError("alignment_loss: empty pyramid");
    torch::Tensor total;
    for (const auto& [level, fg] : generated) {
        auto it = adapted.find(level);
        if (it == adapted.end()) throw ShapeError("alignment_loss: level " + std::to_string(level) + " missing");
        if (fg.sizes() != it->second.sizes()) {
            throw ShapeError("alignment_loss: shape mismatch at level " + std::to_string(level));
        }
        auto term = (fg - it->second).abs().mean();
        total = total.defined() ? total + term : term;
    }
    return total;
}

void write_alignment_csv(const std::filesystem::path& path, const std::vector<AlignmentRecord>& log) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path);
    if (!out) throw DataError("cannot write '" + path.string() + "'");
    out << "step,l_ali\n";
    out.precision(9);
    for (const auto& r : log) out << r.step << "," << r.loss << "\n";
}

std::vector<double> smoothed(const std::vector<AlignmentRecord>& log, int64_t window) {
    std::vector<double> out;
    out.reserve(log.size());
    double acc = 0;
    for (size_t i = 0; i < log.size(); ++i) {
        acc += log[i].loss;
        if (i >= static_cast<size_t>(window)) acc -= log[i - static_cast<size_t>(window)].loss;
        out.push_back(acc / static_cast<double>(std::min<size_t>(i + 1, static_cast<size_t>(window))));
    }
    return out;
}

SelfInitResult self_initialize_adaptor(const Checkpoint& g_ckpt, const Checkpoint& d_ckpt, nets::Adaptor adaptor,
                                       int64_t steps, const StageConfig& config, uint64_t seed) {
    for (const auto* ck : {&g_ckpt, &d_ckpt}) {
        if (ck->stage != Stage::pretrain && ck->stage != Stage::base) {
            throw StageTagError("selfinit: expected a base or pretrain checkpoint, got '" + to_string(ck->stage) + "'");
        }
    }
    if (!(g_ckpt.spec == d_ckpt.spec) || g_ckpt.conditional != d_ckpt.conditional) {
        throw CheckpointError("selfinit: generator and discriminator checkpoints disagree on the architecture");
    }
    if (!(adaptor->spec() == g_ckpt.spec) || adaptor->conditional() != g_ckpt.conditional) {
        throw ConfigError("selfinit: adaptor architecture does not match the checkpoints");
    }
    if (steps < 0) throw ConfigError("selfinit: negative step count");

    data::DataFreeScope data_free("selfinit");

    nets::Generator g(g_ckpt.spec, g_ckpt.conditional);
    nets::Discriminator d(d_ckpt.spec, d_ckpt.conditional);
    load_module(g_ckpt, "G", *g);
    load_module(d_ckpt, "D", *d);
    const auto g_hash = parameter_hash(*g);
    const auto d_hash = parameter_hash(*d);

    nets::FrozenParameters freeze_g(*g);
    nets::FrozenParameters freeze_d(*d);
    Adam opt({{"A", adaptor.get()}}, config.adaptor_discriminator_adam());

    SelfInitResult out;
    out.initial_loss = probe_loss(g, d, adaptor, seed);
    out.log.reserve(static_cast<size_t>(steps));
    const auto& spec = g_ckpt.spec;
    for (int64_t step = 0; step < steps; ++step) {
        auto latent_gen = step_generator(seed, Stream::latent, step);
        auto label_gen = step_generator(seed, Stream::labels, step);
        auto z = torch::randn({config.batch_size, spec.latent_dim}, latent_gen);
        auto c = sample_classes(g_ckpt.conditional, spec.num_classes, config.batch_size, label_gen);

        opt.zero_grad();
        auto loss = step_loss(g, d, adaptor, z, c);
        if (!torch::isfinite(loss).item<bool>()) {
            throw NumericalError("selfinit: non-finite alignment loss at step " + std::to_string(step));
        }
        loss.backward();
        opt.step();
        out.log.push_back({step + 1, loss.item<double>()});
        if (config.log_every > 0 && ((step + 1) % config.log_every == 0 || step + 1 == steps)) {
            std::cerr << "[selfinit] step " << step + 1 << " l_ali " << out.log.back().loss << "\n";
        }
    }
    out.final_loss = probe_loss(g, d, adaptor, seed);

    if (parameter_hash(*g) != g_hash || parameter_hash(*d) != d_hash) {
        throw ContractViolation("selfinit: frozen generator or discriminator changed");
    }

    auto& ck = out.checkpoint;
    ck.stage = Stage::selfinit;
    ck.step = steps;
    ck.seed = seed;
    ck.spec = spec;
    ck.conditional = g_ckpt.conditional;
    store_module(ck, "A", *adaptor);
    store_module(ck, "G", *g);
    store_module(ck, "D", *d);
    ck.extra["initial_l_ali"] = out.initial_loss;
    ck.extra["final_l_ali"] = out.final_loss;
    ck.extra["generator_hash"] = g_hash;
    ck.extra["discriminator_hash"] = d_hash;
    return out;
}

ProbeResult reconstruction_probe(nets::Generator& g, nets::Discriminator& d, nets::Adaptor& a, int64_t n,
                                 uint64_t seed) {
    torch::NoGradGuard no_grad;
    auto gen = step_generator(seed, Stream::probe, 1);
    auto z = torch::randn({n, g->spec().latent_dim}, gen);
    auto c = sample_classes(g->conditional(), g->spec().num_classes, n, gen);
    auto out = g->forward(z, c);
    auto adapted = a->forward(d->features(out.image));

    ProbeResult result;
    result.original = out.image;
    for (const auto& [level, feat] : adapted) {
        auto image = g->forward_from_level(level, feat);
        result.per_level.push_back((image - out.image).abs().mean().item<double>());
        if (!result.reconstructed.defined()) result.reconstructed = image;
    }
    double sum = 0;
    for (double v : result.per_level) sum += v;
    result.pixel_l1 = sum / static_cast<double>(result.per_level.size());
    return result;
}

}  // namespace transferi2i::selfinit
