#include "transferi2i/i2i.hpp"

#include <fstream>
#include <iostream>

#include "transferi2i/errors.hpp"
#include "transferi2i/rng.hpp"

namespace transferi2i::i2i {

namespace {

using pretrain::gan_loss;
using pretrain::Side;

void require_finite(const torch::Tensor& t, const std::string& term, const std::string& direction) {
    if (t.defined() && !torch::isfinite(t).all().item<bool>()) {
        throw NumericalError("i2i: non-finite " + term + " loss (direction " + direction + ")");
    }
}

template <class F>
torch::Tensor in_direction(const std::string& direction, F&& loss) {
    try {
        return loss();
    } catch (const NumericalError& e) {
        throw NumericalError(std::string(e.what()) + " (direction " + direction + ")");
    }
}

uint64_t direction_seed(uint64_t seed, size_t direction) { return splitmix64(seed + 0x51ULL * (direction + 1)); }

void require_spec(const Checkpoint& ck, const ArchitectureSpec& spec, bool conditional, const std::string& what) {
    if (!(ck.spec == spec) || ck.conditional != conditional) {
        throw CheckpointError("i2i: " + what + " checkpoint has a different architecture");
    }
}

void check_network_source(const Checkpoint* ck, bool source_target_init, const std::string& what) {
    if (source_target_init) {
        if (!ck) throw StageTagError("i2i: source-target init needs a pretrain checkpoint for the " + what);
        require_stage(*ck, Stage::pretrain, "i2i " + what);
    } else if (ck && ck->stage != Stage::base) {
        throw StageTagError("i2i: source-target init is disabled but the " + what + " comes from a '" +
                            to_string(ck->stage) + "' checkpoint (expected base or none)");
    }
}

}  // namespace

torch::Tensor reconstruction_loss(nets::Discriminator& d, const torch::Tensor& x_in, const torch::Tensor& x_out,
                                  std::span<const double> alpha) {
    if (x_in.sizes() != x_out.sizes()) throw ShapeError("reconstruction_loss: input and output shapes differ");
    const auto& levels = d->spec().pyramid_levels;
    if (alpha.size() != levels.size()) {
        throw ShapeError("reconstruction_loss: expected " + std::to_string(levels.size()) + " alpha weights, got " +
                         std::to_string(alpha.size()));
    }
    nets::FrozenParameters frozen(*d);
    nets::FeaturePyramid ref;
    {
        torch::NoGradGuard no_grad;
        ref = d->features(x_in);
    }
    return weighted_pyramid_l1(ref, d->features(x_out), alpha);
}

torch::Tensor weighted_pyramid_l1(const nets::FeaturePyramid& a, const nets::FeaturePyramid& b,
                                  std::span<const double> alpha) {
    if (a.size() != b.size() || a.size() != alpha.size()) {
        throw ShapeError("pyramid L1: " + std::to_string(a.size()) + " and " + std::to_string(b.size()) +
                         " levels with " + std::to_string(alpha.size()) + " weights");
    }
    torch::Tensor total;
    size_t i = 0;
    for (const auto& [l, fa] : a) {
        auto it = b.find(l);
        if (it == b.end() || it->second.sizes() != fa.sizes()) {
            throw ShapeError("pyramid L1: level " + std::to_string(l) + " missing or mismatched");
        }
        auto term = alpha[i++] * (fa - it->second).abs().mean();
        total = total.defined() ? total + term : term;
    }
    return total;
}

void write_step_csv(const std::filesystem::path& path, const std::vector<StepRecord>& log) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path);
    if (!out) throw DataError("cannot write '" + path.string() + "'");
    out << "step,direction,d_loss,g_adv,g_aux,rec,total\n";
    out.precision(9);
    for (const auto& r : log) {
        out << r.step << "," << r.direction << "," << r.d_loss << "," << r.adv << "," << r.aux << "," << r.rec << ","
            << r.total << "\n";
    }
}

// ---------------------------------------------------------------------------

I2ISystem::I2ISystem(ArchitectureSpec spec, bool conditional, StageConfig config, uint64_t seed)
    : spec_(std::move(spec)), conditional_(conditional), config_(std::move(config)), seed_(seed) {}

I2ISystem I2ISystem::build(const ArchitectureSpec& spec, bool conditional, const std::vector<DirectionInit>& inits,
                           const StageConfig& config, uint64_t seed) {
    if (inits.empty()) throw ConfigError("i2i: no translation directions");
    if (config.alpha_or_default().size() != spec.pyramid_levels.size() ||
        config.w_or_default().size() != spec.pyramid_levels.size()) {
        throw ConfigError("i2i: alpha and w need one value per pyramid level");
    }
    I2ISystem sys(spec, conditional, config, seed);
    for (size_t i = 0; i < inits.size(); ++i) {
        const auto& init = inits[i];
        check_network_source(init.generator, config.source_target_init, "generator");
        check_network_source(init.discriminator, config.source_target_init, "discriminator");
        check_network_source(init.encoder, config.source_target_init, "encoder");
        if (config.self_init) {
            if (!init.adaptor) throw StageTagError("i2i: self-init is enabled but no selfinit checkpoint was given");
            require_stage(*init.adaptor, Stage::selfinit, "i2i adaptor");
        } else if (init.adaptor) {
            throw StageTagError("i2i: self-init is disabled but an adaptor checkpoint was given");
        }
        for (const auto* ck : {init.generator, init.discriminator, init.encoder, init.adaptor}) {
            if (ck) require_spec(*ck, spec, conditional, init.name);
        }

        // Random networks for everything not loaded; the encoder gets its own draw.
        const auto dseed = direction_seed(seed, i);
        auto fresh = nets::build_networks(spec, conditional, dseed);
        auto fresh_encoder = nets::build_networks(spec, conditional, splitmix64(dseed)).discriminator;

        Direction dir;
        dir.name = init.name;
        dir.generator = fresh.generator;
        dir.discriminator = fresh.discriminator;
        dir.adaptor = fresh.adaptor;
        if (init.generator) load_module(*init.generator, "G", *dir.generator);
        if (init.discriminator) load_module(*init.discriminator, "D", *dir.discriminator);
        if (init.adaptor) load_module(*init.adaptor, "A", *dir.adaptor);
        dir.encoder = nets::make_encoder(fresh_encoder);
        if (init.encoder) load_module(*init.encoder, "D", *dir.encoder);
        if (config.aux_generator) {
            dir.aux = nets::make_auxiliary_generator(dir.generator);
            dir.sharing = nets::share_deep_layers(dir.generator, dir.aux, config.shared_resblocks);
        }
        sys.dirs_.push_back(std::move(dir));
    }
    sys.make_optimizers();
    return sys;
}

void I2ISystem::make_optimizers() {
    std::vector<std::pair<std::string, const torch::nn::Module*>> g, ea, d;
    for (const auto& dir : dirs_) {
        g.emplace_back(dir.name + ".G", dir.generator.get());
        if (dir.aux) g.emplace_back(dir.name + ".Gaux", dir.aux.get());
        ea.emplace_back(dir.name + ".E", dir.encoder.get());
        ea.emplace_back(dir.name + ".A", dir.adaptor.get());
        d.emplace_back(dir.name + ".D", dir.discriminator.get());
    }
    opt_g_ = std::make_unique<Adam>(g, config_.generator_adam());
    opt_ea_ = std::make_unique<Adam>(ea, config_.adaptor_discriminator_adam());
    opt_d_ = std::make_unique<Adam>(d, config_.adaptor_discriminator_adam());
}

I2ISystem I2ISystem::from_checkpoint(const Checkpoint& ckpt, const StageConfig& config) {
    require_stage(ckpt, Stage::i2i, "i2i resume");
    I2ISystem sys(ckpt.spec, ckpt.conditional, config, ckpt.seed);
    sys.step_ = ckpt.step;
    const bool aux = ckpt.extra.value("aux_generator", true);
    const auto k = ckpt.extra.value("shared_resblocks", int64_t{0});
    for (const auto& name : ckpt.extra.at("directions")) {
        Direction dir;
        dir.name = name.get<std::string>();
        dir.generator = nets::Generator(ckpt.spec, ckpt.conditional);
        dir.discriminator = nets::Discriminator(ckpt.spec, ckpt.conditional);
        dir.encoder = nets::Discriminator(ckpt.spec, ckpt.conditional, nets::Role::encoder);
        dir.adaptor = nets::Adaptor(ckpt.spec, ckpt.conditional);
        load_module(ckpt, dir.name + ".G", *dir.generator);
        load_module(ckpt, dir.name + ".D", *dir.discriminator);
        load_module(ckpt, dir.name + ".E", *dir.encoder);
        load_module(ckpt, dir.name + ".A", *dir.adaptor);
        if (aux) {
            dir.aux = nets::Generator(ckpt.spec, ckpt.conditional, nets::Role::aux_generator);
            load_module(ckpt, dir.name + ".Gaux", *dir.aux);
            dir.sharing = nets::share_deep_layers(dir.generator, dir.aux, k);
        }
        sys.dirs_.push_back(std::move(dir));
    }
    sys.config_.aux_generator = aux;
    sys.config_.shared_resblocks = k;
    sys.make_optimizers();
    sys.opt_g_->load(ckpt, "optG");
    sys.opt_ea_->load(ckpt, "optEA");
    sys.opt_d_->load(ckpt, "optD");
    return sys;
}

Checkpoint I2ISystem::to_checkpoint() const {
    Checkpoint ck;
    ck.stage = Stage::i2i;
    ck.step = step_;
    ck.seed = seed_;
    ck.spec = spec_;
    ck.conditional = conditional_;
    if (!dirs_.empty()) ck.sharing = dirs_.front().sharing;
    auto names = nlohmann::json::array();
    for (const auto& dir : dirs_) {
        names.push_back(dir.name);
        store_module(ck, dir.name + ".G", *dir.generator);
        store_module(ck, dir.name + ".D", *dir.discriminator);
        store_module(ck, dir.name + ".E", *dir.encoder);
        store_module(ck, dir.name + ".A", *dir.adaptor);
        if (dir.aux) store_module(ck, dir.name + ".Gaux", *dir.aux);
    }
    ck.extra["directions"] = names;
    ck.extra["aux_generator"] = config_.aux_generator;
    ck.extra["shared_resblocks"] = config_.aux_generator ? config_.shared_resblocks : 0;
    ck.extra["source_target_init"] = config_.source_target_init;
    ck.extra["self_init"] = config_.self_init;
    opt_g_->save(ck, "optG");
    opt_ea_->save(ck, "optEA");
    opt_d_->save(ck, "optD");
    return ck;
}

// ---------------------------------------------------------------------------

torch::Tensor I2ISystem::translate(size_t direction, const torch::Tensor& x, const torch::Tensor& z,
                                   const std::optional<torch::Tensor>& c, std::span<const double> w) {
    auto& dir = dirs_.at(direction);
    if (conditional_ && !c) throw UsageError("translate: the conditional system needs a target class");
    const auto weights = config_.w_or_default();
    if (w.empty()) w = weights;
    auto adapted = dir.adaptor->forward(dir.encoder->features(x));
    return dir.generator->forward(z, c, &adapted, w).image;
}

StepInputs I2ISystem::sample_inputs(size_t direction, const DirectionData& data,
                                    const pretrain::LabelSampler* labels) const {
    if (!data.source || !data.target) throw UsageError("i2i: direction data is incomplete");
    if (conditional_ && !labels) throw UsageError("i2i: the conditional system needs a label sampler");
    const auto dseed = direction_seed(seed_, direction);
    auto source_gen = step_generator(dseed, Stream::batch_source, step_);
    auto target_gen = step_generator(dseed, Stream::batch_target, step_);
    auto latent_gen = step_generator(dseed, Stream::latent, step_);
    auto label_gen = step_generator(dseed, Stream::labels, step_);

    const auto b = config_.batch_size;
    StepInputs in;
    in.x_source = data::sample_batch(*data.source, b, source_gen).images;
    auto target = data::sample_batch(*data.target, b, target_gen);
    in.x_target = target.images;
    in.z = torch::randn({b, spec_.latent_dim}, latent_gen);
    in.z_aux = torch::randn({b, spec_.latent_dim}, latent_gen);
    if (conditional_) {
        in.c_target_real = target.labels;
        in.c_fake = labels->sample(b, label_gen);
        in.c_aux = labels->sample(b, label_gen);
    }
    return in;
}

LossTerms I2ISystem::discriminator_objective(size_t direction, const StepInputs& in, bool with_r1) {
    auto& dir = dirs_.at(direction);
    torch::Tensor fake, aux_fake;
    {
        torch::NoGradGuard no_grad;
        fake = translate(direction, in.x_source, in.z, in.c_fake);
        if (dir.aux) aux_fake = dir.aux->forward(in.z_aux, in.c_aux).image;
    }
    std::optional<torch::Tensor> aux_logits;
    if (dir.aux) aux_logits = dir.discriminator->forward(aux_fake, in.c_aux).logit;
    LossTerms t;
    auto real = with_r1 ? in.x_target.detach().requires_grad_() : in.x_target;
    auto real_logits = dir.discriminator->forward(real, in.c_target_real).logit;
    t.d_loss = in_direction(dir.name, [&] {
        return gan_loss(real_logits, dir.discriminator->forward(fake, in.c_fake).logit, Side::discriminator,
                        aux_logits, config_.lambda_aux);
    });
    require_finite(t.d_loss, "discriminator", dir.name);
    if (with_r1) {
        t.r1 = pretrain::r1_penalty(real_logits, real);
        require_finite(t.r1, "R1", dir.name);
    }
    return t;
}

LossTerms I2ISystem::generator_objective(size_t direction, const StepInputs& in) {
    auto& dir = dirs_.at(direction);
    nets::FrozenParameters frozen(*dir.discriminator);
    LossTerms t;
    auto fake = translate(direction, in.x_source, in.z, in.c_fake);
    t.adv = in_direction(dir.name,
                         [&] { return gan_loss({}, dir.discriminator->forward(fake, in.c_fake).logit, Side::generator); });
    require_finite(t.adv, "adversarial", dir.name);
    const auto alpha = config_.alpha_or_default();
    t.rec = reconstruction_loss(dir.discriminator, in.x_source, fake, alpha);
    require_finite(t.rec, "reconstruction", dir.name);
    t.total = t.adv + config_.lambda_rec * t.rec;
    if (dir.aux) {
        auto aux_fake = dir.aux->forward(in.z_aux, in.c_aux).image;
        t.aux = in_direction(dir.name, [&] {
            return gan_loss({}, dir.discriminator->forward(aux_fake, in.c_aux).logit, Side::generator);
        });
        require_finite(t.aux, "auxiliary", dir.name);
        t.total = t.total + config_.lambda_aux * t.aux;
    }
    require_finite(t.total, "total", dir.name);
    return t;
}

std::vector<StepRecord> I2ISystem::train_step(const std::vector<DirectionData>& data,
                                              const pretrain::LabelSampler* labels) {
    if (data.size() != dirs_.size()) {
        throw UsageError("i2i: expected data for " + std::to_string(dirs_.size()) + " directions, got " +
                         std::to_string(data.size()));
    }
    std::vector<StepInputs> inputs;
    for (size_t i = 0; i < dirs_.size(); ++i) inputs.push_back(sample_inputs(i, data[i], labels));

    std::vector<StepRecord> records(dirs_.size());
    opt_d_->zero_grad();
    const double r1 = pretrain::r1_weight(config_, step_);
    torch::Tensor d_total;
    for (size_t i = 0; i < dirs_.size(); ++i) {
        auto t = discriminator_objective(i, inputs[i], r1 > 0);
        records[i].d_loss = t.d_loss.item<double>();
        auto term = r1 > 0 ? t.d_loss + r1 * t.r1 : t.d_loss;
        d_total = d_total.defined() ? d_total + term : term;
    }
    d_total.backward();
    opt_d_->step();

    opt_g_->zero_grad();
    opt_ea_->zero_grad();
    torch::Tensor g_total;
    for (size_t i = 0; i < dirs_.size(); ++i) {
        auto t = generator_objective(i, inputs[i]);
        auto& r = records[i];
        r.direction = dirs_[i].name;
        r.adv = t.adv.item<double>();
        r.aux = t.aux.defined() ? t.aux.item<double>() : 0.0;
        r.rec = t.rec.item<double>();
        r.total = t.total.item<double>();
        g_total = g_total.defined() ? g_total + t.total : t.total;
    }
    g_total.backward();
    opt_g_->step();
    opt_ea_->step();

    ++step_;
    for (auto& r : records) r.step = step_;
    return records;
}

// ---------------------------------------------------------------------------

StageResult run_i2i_stage(I2ISystem& system, const std::vector<DirectionData>& data,
                          const pretrain::LabelSampler* labels, const std::function<void(I2ISystem&)>& after_step) {
    StageResult out;
    out.initial = system.to_checkpoint();
    const auto steps = system.config().steps_i2i;
    const auto every = system.config().log_every;
    for (int64_t i = 0; i < steps; ++i) {
        auto records = system.train_step(data, labels);
        if (every > 0 && (system.step() % every == 0 || i + 1 == steps)) {
            for (const auto& r : records) {
                std::cerr << "[i2i " << r.direction << "] step " << r.step << " d " << r.d_loss << " adv " << r.adv
                          << " rec " << r.rec << "\n";
            }
        }
        out.log.insert(out.log.end(), records.begin(), records.end());
        if (after_step) after_step(system);
    }
    out.final = system.to_checkpoint();
    return out;
}

bool sharing_intact(const I2ISystem& system) {
    for (const auto& dir : system.directions()) {
        if (!dir.aux) continue;
        auto gp = dir.generator->named_parameters();
        auto ap = dir.aux->named_parameters();
        for (const auto& name : dir.sharing.shared_param_names) {
            const auto* a = gp.find(name);
            const auto* b = ap.find(name);
            if (!a || !b || a->unsafeGetTensorImpl() != b->unsafeGetTensorImpl()) return false;
        }
    }
    return true;
}

}  // namespace transferi2i::i2i
