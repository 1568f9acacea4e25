#include "transferi2i/pretrain.hpp"

#include <fstream>
#include <iostream>

#include "transferi2i/errors.hpp"
#include "transferi2i/rng.hpp"

namespace transferi2i::pretrain {

namespace F = torch::nn::functional;

namespace {

void require_finite(const torch::Tensor& t, const char* what) {
    if (!torch::isfinite(t).all().item<bool>()) {
        throw NumericalError(std::string("gan_loss: non-finite ") + what + " logits");
    }
}

AdamOptions base_generator_adam(const StageConfig& c) { return {c.base_lr_g, c.base_beta1, c.base_beta2}; }
AdamOptions base_discriminator_adam(const StageConfig& c) { return {c.base_lr_d, c.base_beta1, c.base_beta2}; }

std::vector<LossRecord> run(GanStageState& state, const data::ImageSource& dataset, const StageConfig& config,
                            const LabelSampler* labels, int64_t steps, const std::string& tag) {
    std::vector<LossRecord> log;
    log.reserve(static_cast<size_t>(steps));
    state.set_r1(config.r1_gamma, config.r1_every);
    for (int64_t i = 0; i < steps; ++i) {
        log.push_back(state.train_step(dataset, config.batch_size, labels));
        const auto& r = log.back();
        if (config.log_every > 0 && (r.step % config.log_every == 0 || i + 1 == steps)) {
            std::cerr << "[" << tag << "] step " << r.step << " d_loss " << r.d_loss << " g_loss " << r.g_loss
                      << "\n";
        }
    }
    return log;
}

}  // namespace

torch::Tensor gan_loss(const torch::Tensor& real_logits, const torch::Tensor& fake_logits, Side side,
                       const std::optional<torch::Tensor>& aux_fake_logits, double lambda_aux) {
    require_finite(fake_logits, "fake");
    if (aux_fake_logits) require_finite(*aux_fake_logits, "auxiliary");
    torch::Tensor loss;
    if (side == Side::discriminator) {
        require_finite(real_logits, "real");
        loss = F::softplus(-real_logits).mean() + F::softplus(fake_logits).mean();
        if (aux_fake_logits) loss = loss + lambda_aux * F::softplus(*aux_fake_logits).mean();
    } else {
        loss = F::softplus(-fake_logits).mean();
        if (aux_fake_logits) loss = loss + lambda_aux * F::softplus(-*aux_fake_logits).mean();
    }
    return loss;
}

torch::Tensor r1_penalty(const torch::Tensor& real_logits, const torch::Tensor& real_images) {
    auto g = torch::autograd::grad({real_logits.sum()}, {real_images}, {}, /*retain_graph=*/true,
                                   /*create_graph=*/true)[0];
    return g.pow(2).flatten(1).sum(1).mean();
}

double r1_weight(const StageConfig& config, int64_t step) {
    if (config.r1_gamma <= 0 || step % config.r1_every != 0) return 0.0;
    return 0.5 * config.r1_gamma * static_cast<double>(config.r1_every);
}

void GanStageState::set_r1(double gamma, int64_t every) {
    r1_gamma_ = gamma;
    r1_every_ = std::max<int64_t>(every, 1);
}

void write_loss_csv(const std::filesystem::path& path, const std::vector<LossRecord>& log) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path);
    if (!out) throw DataError("cannot write '" + path.string() + "'");
    out << "step,d_loss,g_loss,aux_loss\n";
    out.precision(9);
    for (const auto& r : log) out << r.step << "," << r.d_loss << "," << r.g_loss << "," << r.aux_loss << "\n";
}

// ---------------------------------------------------------------------------

LabelSampler::LabelSampler(const std::vector<int64_t>& labels, int64_t num_classes) : num_classes_(num_classes) {
    if (num_classes < 1) throw DataError("label sampler needs at least one class");
    auto counts = torch::zeros({num_classes}, torch::kDouble);
    for (auto l : labels) {
        if (l < 0 || l >= num_classes) {
            throw DataError("label " + std::to_string(l) + " outside [0, " + std::to_string(num_classes) + ")");
        }
        counts[l] += 1.0;
    }
    if (counts.sum().item<double>() == 0.0) throw DataError("label sampler built from an empty dataset");
    probs_ = counts / counts.sum();
}

torch::Tensor LabelSampler::sample(int64_t n, torch::Generator& gen) const {
    if (num_classes_ == 1) return torch::zeros({n}, torch::kLong);
    return torch::multinomial(probs_, n, /*replacement=*/true, gen);
}

// ---------------------------------------------------------------------------

GanStageState::GanStageState(nets::Generator g, nets::Discriminator d, AdamOptions g_opts, AdamOptions d_opts,
                             uint64_t seed, int64_t step)
    : g_(std::move(g)),
      d_(std::move(d)),
      g_opt_({{"G", g_.get()}}, g_opts),
      d_opt_({{"D", d_.get()}}, d_opts),
      seed_(seed),
      step_(step) {}

GanStageState GanStageState::fresh(const ArchitectureSpec& spec, bool conditional, AdamOptions g_opts,
                                   AdamOptions d_opts, uint64_t seed) {
    auto nets = nets::build_networks(spec, conditional, seed);
    return GanStageState(nets.generator, nets.discriminator, g_opts, d_opts, seed);
}

GanStageState GanStageState::from_checkpoint(const Checkpoint& ckpt, AdamOptions g_opts, AdamOptions d_opts,
                                             uint64_t seed, bool resume) {
    nets::Generator g(ckpt.spec, ckpt.conditional);
    nets::Discriminator d(ckpt.spec, ckpt.conditional);
    load_module(ckpt, "G", *g);
    load_module(ckpt, "D", *d);
    GanStageState state(g, d, g_opts, d_opts, seed, resume ? ckpt.step : 0);
    if (resume) {
        state.g_opt_.load(ckpt, "optG");
        state.d_opt_.load(ckpt, "optD");
    }
    return state;
}

LossRecord GanStageState::train_step(const data::ImageSource& data, int64_t batch_size, const LabelSampler* labels) {
    const bool conditional = g_->conditional();
    if (conditional && !labels) throw UsageError("conditional GAN training needs a label sampler");
    const auto& spec = g_->spec();

    auto batch_gen = step_generator(seed_, Stream::batch_target, step_);
    auto latent_gen = step_generator(seed_, Stream::latent, step_);
    auto label_gen = step_generator(seed_, Stream::labels, step_);

    auto real = data::sample_batch(data, batch_size, batch_gen);
    auto z = torch::randn({batch_size, spec.latent_dim}, latent_gen);
    std::optional<torch::Tensor> c_fake, c_real;
    if (conditional) {
        c_fake = labels->sample(batch_size, label_gen);
        c_real = real.labels;
    }

    // discriminator step
    torch::Tensor fake;
    {
        torch::NoGradGuard no_grad;
        fake = g_->forward(z, c_fake).image;
    }
    d_opt_.zero_grad();
    const bool r1 = r1_gamma_ > 0 && step_ % r1_every_ == 0;
    auto real_in = r1 ? real.images.detach().requires_grad_() : real.images;
    auto real_logits = d_->forward(real_in, c_real).logit;
    auto d_loss = gan_loss(real_logits, d_->forward(fake, c_fake).logit, Side::discriminator);
    auto d_total = d_loss;
    if (r1) d_total = d_total + 0.5 * r1_gamma_ * static_cast<double>(r1_every_) * r1_penalty(real_logits, real_in);
    d_total.backward();
    d_opt_.step();

    // generator step
    g_opt_.zero_grad();
    torch::Tensor g_loss;
    {
        nets::FrozenParameters frozen(*d_);
        g_loss = gan_loss({}, d_->forward(g_->forward(z, c_fake).image, c_fake).logit, Side::generator);
        g_loss.backward();
    }
    g_opt_.step();

    ++step_;
    return {step_, d_loss.item<double>(), g_loss.item<double>(), 0.0};
}

Checkpoint GanStageState::to_checkpoint(Stage stage) const {
    Checkpoint ck;
    ck.stage = stage;
    ck.step = step_;
    ck.seed = seed_;
    ck.spec = g_->spec();
    ck.conditional = g_->conditional();
    store_module(ck, "G", *g_);
    store_module(ck, "D", *d_);
    g_opt_.save(ck, "optG");
    d_opt_.save(ck, "optD");
    return ck;
}

// ---------------------------------------------------------------------------

StageResult train_base_gan(const ArchitectureSpec& spec, const data::ImageSource& dataset, const StageConfig& config,
                           uint64_t seed) {
    if (dataset.size() == 0) throw DataError("train_base_gan: empty dataset");
    auto state =
        GanStageState::fresh(spec, config.conditional, base_generator_adam(config), base_discriminator_adam(config), seed);
    std::optional<LabelSampler> labels;
    if (config.conditional) {
        const auto* corpus = dynamic_cast<const data::Corpus*>(&dataset);
        if (!corpus) throw UsageError("conditional base training needs a labeled corpus");
        labels.emplace(corpus->labels(), spec.num_classes);
    }
    StageResult out;
    out.log = run(state, dataset, config, labels ? &*labels : nullptr, config.steps_base, "base");
    out.checkpoint = state.to_checkpoint(Stage::base);
    return out;
}

StageResult resume_base_gan(const Checkpoint& ckpt, const data::ImageSource& dataset, const StageConfig& config,
                            int64_t steps) {
    auto state = GanStageState::from_checkpoint(ckpt, base_generator_adam(config), base_discriminator_adam(config),
                                                ckpt.seed, /*resume=*/true);
    std::optional<LabelSampler> labels;
    if (ckpt.conditional) {
        const auto* corpus = dynamic_cast<const data::Corpus*>(&dataset);
        if (!corpus) throw UsageError("conditional base training needs a labeled corpus");
        labels.emplace(corpus->labels(), ckpt.spec.num_classes);
    }
    StageResult out;
    out.log = run(state, dataset, config, labels ? &*labels : nullptr, steps, "base");
    out.checkpoint = state.to_checkpoint(ckpt.stage);
    return out;
}

StageResult finetune_domain(const Checkpoint& base, const data::ImageSource& dataset, const StageConfig& config,
                            uint64_t seed, const std::string& domain) {
    require_stage(base, Stage::base, "finetune (" + domain + ")");
    if (dataset.size() == 0) throw DataError("finetune: " + domain + " domain dataset is empty");
    auto state = GanStageState::from_checkpoint(base, config.generator_adam(), config.adaptor_discriminator_adam(),
                                                seed, /*resume=*/false);
    std::optional<LabelSampler> labels;
    if (base.conditional) labels.emplace(std::vector<int64_t>{0}, 1);
    StageResult out;
    out.log = run(state, dataset, config, labels ? &*labels : nullptr, config.steps_pretrain, "pretrain:" + domain);
    out.checkpoint = state.to_checkpoint(Stage::pretrain);
    out.checkpoint.extra["domain"] = domain;
    return out;
}

SourceTargetResult finetune_source_target(const Checkpoint& base, const data::ImageSource& source,
                                          const data::ImageSource& target, const StageConfig& config,
                                          uint64_t seed) {
    SourceTargetResult out;
    out.source = finetune_domain(base, source, config, seed, "source");
    out.target = finetune_domain(base, target, config, seed, "target");
    return out;
}

StageResult finetune_conditional(const Checkpoint& base, const data::Corpus& dataset, const StageConfig& config,
                                 uint64_t seed) {
    require_stage(base, Stage::base, "finetune_conditional");
    if (!base.conditional) throw ConfigError("finetune_conditional: base checkpoint is unconditional");
    if (dataset.size() == 0) throw DataError("finetune_conditional: empty dataset");
    LabelSampler labels(dataset.labels(), base.spec.num_classes);
    auto state = GanStageState::from_checkpoint(base, config.generator_adam(), config.adaptor_discriminator_adam(),
                                                seed, /*resume=*/false);
    StageResult out;
    out.log = run(state, dataset, config, &labels, config.steps_pretrain, "pretrain:conditional");
    out.checkpoint = state.to_checkpoint(Stage::pretrain);
    out.checkpoint.extra["domain"] = "all";
    return out;
}

}  // namespace transferi2i::pretrain
