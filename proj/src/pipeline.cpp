#include "transferi2i/pipeline.hpp"

#include <chrono>
#include <iostream>

#include "transferi2i/errors.hpp"
#include "transferi2i/fisher.hpp"
#include "transferi2i/report.hpp"
#include "transferi2i/rng.hpp"

namespace transferi2i::pipeline {

namespace {

data::Corpus with_labels(const data::Corpus& c, std::vector<int64_t> labels) {
    return data::Corpus(c.images(), std::move(labels), c.split(), c.paths());
}

// Splits a class-ordered synthetic corpus into the first `train` and the remaining images of each class.
std::pair<data::Corpus, data::Corpus> split_per_class(const data::Corpus& all, int64_t train) {
    std::vector<int64_t> tr, te;
    std::vector<int64_t> seen(static_cast<size_t>(all.num_classes()), 0);
    for (size_t i = 0; i < all.labels().size(); ++i) {
        auto& n = seen[static_cast<size_t>(all.labels()[i])];
        (n++ < train ? tr : te).push_back(static_cast<int64_t>(i));
    }
    auto test = all.select(te);
    return {all.select(tr), data::Corpus(test.images(), test.labels(), data::Split::test, test.paths())};
}

ClassifierOptions classifier_options(int64_t steps) {
    ClassifierOptions o;
    o.steps = steps;
    return o;
}

metrics::KidOptions kid_options(const StageConfig& config, uint64_t seed) {
    return {config.kid_subsets, config.kid_subset_size, seed};
}

}  // namespace

uint64_t stage_seed(uint64_t seed, uint64_t salt) { return splitmix64(seed * 0x100000001b3ULL + salt); }

Datasets make_datasets(const StageConfig& config) {
    Datasets ds;
    const auto size = config.arch.image_size;
    data::Corpus train, test;
    if (!config.data_root.empty()) {
        std::optional<int64_t> fixed;
        if (config.test_per_class >= 0) fixed = config.test_per_class;
        std::tie(train, test) =
            data::load_image_folder(config.data_root, size, config.split_fraction, config.data_seed, fixed);
    } else {
        auto all = data::synthetic_shapes(config.synthetic_classes,
                                          config.synthetic_per_class + config.synthetic_test_per_class, size,
                                          config.data_seed);
        std::tie(train, test) = split_per_class(all, config.synthetic_per_class);
    }

    if (!config.base_data_root.empty()) {
        ds.base = data::load_image_folder(config.base_data_root, size, 1.0, config.data_seed).first;
    } else {
        // Fresh renders of the translation classes plus extra shape families, so the
        // stand-in pretraining set covers the domains without sharing any image.
        ds.base = data::synthetic_shapes(config.synthetic_classes + config.base_synthetic_classes,
                                         config.base_synthetic_per_class, size, config.data_seed + 1);
    }

    if (config.conditional) {
        ds.train = train;
        ds.test = test;
        ds.num_classes = train.num_classes();
    } else {
        const auto c = train.num_classes();
        for (auto k : {config.source_class, config.target_class}) {
            if (k < 0 || k >= c) {
                throw ConfigError("class " + std::to_string(k) + " outside the corpus' " + std::to_string(c) +
                                  " classes");
            }
        }
        if (config.source_class == config.target_class) throw ConfigError("source_class equals target_class");
        ds.source_train = train.select_class(config.source_class).relabeled(0);
        ds.target_train = train.select_class(config.target_class).relabeled(1);
        ds.source_test = test.select_class(config.source_class).relabeled(0);
        ds.target_test = test.select_class(config.target_class).relabeled(1);
        ds.train = data::Corpus::concat(ds.source_train, ds.target_train);
        ds.test = data::Corpus::concat(ds.source_test, ds.target_test);
        ds.num_classes = 2;
    }
    if (ds.train.size() == 0) throw DataError("translation corpus is empty");
    return ds;
}

ArchitectureSpec resolved_spec(const StageConfig& config, const Datasets& datasets) {
    auto spec = config.arch;
    spec.num_classes = config.conditional ? datasets.num_classes : 1;
    spec.validate();
    return spec;
}

nets::Adaptor fresh_adaptor(const ArchitectureSpec& spec, bool conditional, uint64_t seed) {
    return nets::build_networks(spec, conditional, stage_seed(seed, 11)).adaptor;
}

// ---------------------------------------------------------------------------

Artifacts train_base(const Datasets& datasets, const StageConfig& config, uint64_t seed, LossLogs* logs) {
    const auto spec = resolved_spec(config, datasets);
    Artifacts a;
    pretrain::StageResult result;
    if (config.conditional) {
        // Base class labels fold onto the translation classes so that the embedding table carries over.
        std::vector<int64_t> labels;
        for (auto l : datasets.base.labels()) labels.push_back(l % spec.num_classes);
        auto base = with_labels(datasets.base, std::move(labels));
        result = pretrain::train_base_gan(spec, base, config, stage_seed(seed, 1));
    } else {
        result = pretrain::train_base_gan(spec, datasets.base, config, stage_seed(seed, 1));
    }
    a.base = std::move(result.checkpoint);
    if (logs) (*logs)["base"] = std::move(result.log);
    return a;
}

void train_pretrain(Artifacts& a, const Datasets& datasets, const StageConfig& config, uint64_t seed,
                    LossLogs* logs) {
    if (config.conditional) {
        auto r = pretrain::finetune_conditional(a.base, datasets.train, config, stage_seed(seed, 2));
        a.conditional = std::move(r.checkpoint);
        if (logs) (*logs)["conditional"] = std::move(r.log);
    } else {
        auto st = pretrain::finetune_source_target(a.base, datasets.source_train, datasets.target_train, config,
                                                   stage_seed(seed, 2));
        a.source = std::move(st.source.checkpoint);
        a.target = std::move(st.target.checkpoint);
        if (logs) {
            (*logs)["source"] = std::move(st.source.log);
            (*logs)["target"] = std::move(st.target.log);
        }
    }
}

std::map<std::string, selfinit::SelfInitResult> train_selfinit(Artifacts& a, const StageConfig& config,
                                                               uint64_t seed, bool on_base) {
    const auto& spec = a.base.spec;
    const bool cond = a.base.conditional;
    const auto steps = config.steps_selfinit;
    std::map<std::string, selfinit::SelfInitResult> out;
    auto run = [&](const std::string& name, const Checkpoint& g, const Checkpoint& d, uint64_t salt) -> Checkpoint {
        auto r = selfinit::self_initialize_adaptor(g, d, fresh_adaptor(spec, cond, stage_seed(seed, salt)), steps,
                                                   config, stage_seed(seed, salt));
        auto ck = r.checkpoint;
        out.emplace(name, std::move(r));
        return ck;
    };
    if (on_base) {
        a.selfinit_base = run("base", a.base, a.base, 3);
    } else if (cond) {
        if (!a.conditional) throw UsageError("selfinit: conditional pretrain checkpoint missing");
        a.selfinit_conditional = run("conditional", *a.conditional, *a.conditional, 4);
    } else {
        if (!a.source || !a.target) throw UsageError("selfinit: source/target pretrain checkpoints missing");
        // 1->2 pairs the target generator with the source discriminator, 2->1 the reverse.
        a.selfinit_1to2 = run("1to2", *a.target, *a.source, 5);
        a.selfinit_2to1 = run("2to1", *a.source, *a.target, 6);
    }
    return out;
}

Artifacts prepare_artifacts(const Datasets& datasets, const StageConfig& config, uint64_t seed,
                            const ArtifactNeeds& needs) {
    auto a = train_base(datasets, config, seed);
    if (needs.pretrain || needs.selfinit) train_pretrain(a, datasets, config, seed);
    if (needs.selfinit) train_selfinit(a, config, seed, /*on_base=*/false);
    if (needs.selfinit_base) train_selfinit(a, config, seed, /*on_base=*/true);
    return a;
}

// ---------------------------------------------------------------------------

std::string to_string(Wiring wiring) {
    switch (wiring) {
        case Wiring::both: return "both";
        case Wiring::source_target_only: return "source-target-only";
        case Wiring::self_init_only: return "self-init-only";
        case Wiring::scratch: return "scratch";
    }
    return "unknown";
}

Wiring wiring_from_flags(bool source_target_init, bool self_init) {
    if (source_target_init) return self_init ? Wiring::both : Wiring::source_target_only;
    return self_init ? Wiring::self_init_only : Wiring::scratch;
}

StageConfig with_wiring(StageConfig config, Wiring wiring) {
    config.source_target_init = wiring == Wiring::both || wiring == Wiring::source_target_only;
    config.self_init = wiring == Wiring::both || wiring == Wiring::self_init_only;
    return config;
}

std::vector<i2i::DirectionInit> direction_inits(const Artifacts& a, const StageConfig& config) {
    const auto* base = &a.base;
    const bool st = config.source_target_init;
    auto need = [](const std::optional<Checkpoint>& ck, const char* what) -> const Checkpoint* {
        if (!ck) throw UsageError(std::string("missing ") + what + " checkpoint");
        return &*ck;
    };
    std::vector<i2i::DirectionInit> inits;
    if (config.conditional) {
        i2i::DirectionInit d{"all"};
        if (st) {
            d.generator = d.discriminator = d.encoder = need(a.conditional, "conditional pretrain");
        } else if (config.self_init) {
            d.generator = d.discriminator = d.encoder = base;
        }
        if (config.self_init) {
            d.adaptor = st ? need(a.selfinit_conditional, "conditional selfinit") : need(a.selfinit_base, "base selfinit");
        }
        inits.push_back(d);
        return inits;
    }
    i2i::DirectionInit d12{"1to2"}, d21{"2to1"};
    if (st) {
        const auto* src = need(a.source, "source pretrain");
        const auto* tgt = need(a.target, "target pretrain");
        d12.generator = tgt;
        d12.discriminator = tgt;
        d12.encoder = src;
        d21.generator = src;
        d21.discriminator = src;
        d21.encoder = tgt;
    } else if (config.self_init) {
        for (auto* d : {&d12, &d21}) d->generator = d->discriminator = d->encoder = base;
    }
    if (config.self_init) {
        if (st) {
            d12.adaptor = need(a.selfinit_1to2, "1to2 selfinit");
            d21.adaptor = need(a.selfinit_2to1, "2to1 selfinit");
        } else {
            d12.adaptor = d21.adaptor = need(a.selfinit_base, "base selfinit");
        }
    }
    return {d12, d21};
}

std::vector<i2i::DirectionData> direction_data(const Datasets& ds, const StageConfig& config) {
    if (config.conditional) return {{&ds.train, &ds.train}};
    return {{&ds.source_train, &ds.target_train}, {&ds.target_train, &ds.source_train}};
}

std::optional<pretrain::LabelSampler> label_sampler(const Datasets& ds, const StageConfig& config) {
    if (!config.conditional) return std::nullopt;
    return pretrain::LabelSampler(ds.train.labels(), ds.num_classes);
}

TrainedSystem train_i2i(const Artifacts& a, const Datasets& ds, const StageConfig& config, uint64_t seed,
                        const std::function<void(i2i::I2ISystem&)>& after_step) {
    const auto spec = resolved_spec(config, ds);
    auto system = i2i::I2ISystem::build(spec, config.conditional, direction_inits(a, config), config,
                                        stage_seed(seed, 7));
    auto labels = label_sampler(ds, config);
    auto stage = i2i::run_i2i_stage(system, direction_data(ds, config), labels ? &*labels : nullptr, after_step);
    return {std::move(system), std::move(stage)};
}

// ---------------------------------------------------------------------------

Classifier make_extractor(const Datasets& ds, const StageConfig& config, uint64_t seed) {
    std::vector<int64_t> labels = ds.train.labels();
    // Synthetic base renders open with the translation classes; keep only the extra families.
    const int64_t skip = config.base_data_root.empty() ? config.synthetic_classes : 0;
    std::vector<int64_t> idx;
    for (size_t i = 0; i < ds.base.labels().size(); ++i) {
        const auto l = ds.base.labels()[i];
        if (l < skip) continue;
        idx.push_back(static_cast<int64_t>(i));
        labels.push_back(l - skip + ds.num_classes);
    }
    auto extra = ds.base.images().index_select(0, torch::tensor(idx, torch::kLong));
    auto corpus = data::Corpus(torch::cat({ds.train.images(), extra}), std::move(labels), data::Split::train);
    return metrics::build_feature_extractor(corpus, classifier_options(config.extractor_steps),
                                            stage_seed(seed, 8));
}

Translations translate_test_set(i2i::I2ISystem& system, const Datasets& ds, const Classifier& extractor,
                                uint64_t seed) {
    torch::NoGradGuard no_grad;
    Translations out;
    std::vector<torch::Tensor> fake_images, fake_labels;
    const auto z_dim = system.spec().latent_dim;
    auto add_class = [&](int64_t label, const torch::Tensor& real, const torch::Tensor& fake) {
        out.classes.push_back({label, metrics::embed(extractor, real, metrics::SourceTag::real, label),
                               metrics::embed(extractor, fake, metrics::SourceTag::generated, label)});
        fake_images.push_back(fake);
        fake_labels.push_back(torch::full({fake.size(0)}, label, torch::kLong));
    };
    if (system.conditional()) {
        const auto& test = ds.test;
        const auto& images = test.images();
        for (int64_t c = 0; c < ds.num_classes; ++c) {
            std::vector<int64_t> idx;
            for (size_t i = 0; i < test.labels().size(); ++i) {
                if (test.labels()[i] != c) idx.push_back(static_cast<int64_t>(i));
            }
            auto x = images.index_select(0, torch::tensor(idx, torch::kLong));
            auto gen = step_generator(seed, Stream::probe, 100 + c);
            auto z = torch::randn({x.size(0), z_dim}, gen);
            auto fake = system.translate(0, x, z, torch::full({x.size(0)}, c, torch::kLong));
            add_class(c, test.select_class(c).images(), fake);
        }
    } else {
        const data::Corpus* sources[] = {&ds.source_test, &ds.target_test};
        const data::Corpus* targets[] = {&ds.target_test, &ds.source_test};
        for (size_t d = 0; d < 2; ++d) {
            const auto& x = sources[d]->images();
            auto gen = step_generator(seed, Stream::probe, 100 + static_cast<int64_t>(d));
            auto z = torch::randn({x.size(0), z_dim}, gen);
            add_class(d == 0 ? 1 : 0, targets[d]->images(), system.translate(d, x, z));
        }
    }
    out.fakes = {torch::cat(fake_images), torch::cat(fake_labels)};
    return out;
}

metrics::MetricReport evaluate(i2i::I2ISystem& system, const Datasets& ds, const Classifier& extractor,
                               const StageConfig& config, uint64_t seed, bool with_rc_fc) {
    auto t = translate_test_set(system, ds, extractor, seed);
    const auto kid = kid_options(config, stage_seed(seed, 9));
    auto report = metrics::make_report(metrics::mean_class_metrics(t.classes, kid), extractor.hash(), kid);
    if (with_rc_fc) {
        data::Batch train{ds.train.images(), torch::tensor(ds.train.labels(), torch::kLong)};
        data::Batch test{ds.test.images(), torch::tensor(ds.test.labels(), torch::kLong)};
        auto r = metrics::rc_fc(train, test, t.fakes, ds.num_classes,
                                classifier_options(config.classifier_steps), stage_seed(seed, 10));
        report.rc = r.rc;
        report.fc = r.fc;
    }
    return report;
}

// ---------------------------------------------------------------------------

std::vector<double> system_weight_fluctuation(const Checkpoint& before, const Checkpoint& after,
                                              const StageConfig& config, uint64_t seed) {
    require_stage(before, Stage::i2i, "weight fluctuation");
    require_stage(after, Stage::i2i, "weight fluctuation");
    const auto& spec = before.spec;
    std::vector<double> total(static_cast<size_t>(spec.num_resblocks), 0.0);
    for (const auto& name : before.extra.at("directions")) {
        const auto dir = name.get<std::string>();
        nets::Generator g(spec, before.conditional);
        nets::Discriminator d(spec, before.conditional);
        load_module(before, dir + ".G", *g);
        load_module(before, dir + ".D", *d);
        auto fisher = fisher::estimate_generator_fisher(g, d, config.fisher_batches, config.batch_size,
                                                        stage_seed(seed, 12));
        auto wf = fisher::weight_fluctuation(before, after, dir + ".G", fisher, spec.num_resblocks);
        for (size_t i = 0; i < wf.size(); ++i) total[i] += wf[i];
    }
    return total;
}

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

}  // namespace

AblationResult run_ablation(const StageConfig& config, const AblationOptions& options) {
    AblationResult result;
    const auto ds = make_datasets(config);
    for (auto seed : options.seeds) {
        std::cerr << "[ablate] seed " << seed << "\n";
        ArtifactNeeds needs{true, true, options.init_grid};
        auto artifacts = prepare_artifacts(ds, config, seed, needs);
        auto extractor = make_extractor(ds, config, seed);
        const auto eval_seed = stage_seed(seed, 13);

        double last_seconds = 0;
        auto run = [&](const StageConfig& c) {
            const auto t0 = Clock::now();
            auto trained = train_i2i(artifacts, ds, c, seed);
            auto report = evaluate(trained.system, ds, extractor, c, eval_seed, false);
            last_seconds = seconds_since(t0);
            return std::make_pair(std::move(trained), report);
        };
        auto row = [&](const std::string& label, const StageConfig& c, const metrics::MetricReport& r,
                       double seconds) {
            return AblationRow{label, c.source_target_init, c.self_init, c.aux_generator ? c.shared_resblocks : 0,
                               seed,  r.mfid,               r.mkid,      seconds};
        };

        // The full system with the configured k serves the grid, the sweep and the WF probe.
        auto full_cfg = with_wiring(config, Wiring::both);
        auto [full, full_report] = run(full_cfg);
        const double full_seconds = last_seconds;
        std::cerr << "[ablate] both: mFID " << full_report.mfid << "\n";

        if (options.init_grid) {
            result.init_grid.push_back(row(to_string(Wiring::both), full_cfg, full_report, full_seconds));
            for (auto w : {Wiring::source_target_only, Wiring::self_init_only, Wiring::scratch}) {
                auto c = with_wiring(config, w);
                auto [t, r] = run(c);
                std::cerr << "[ablate] " << to_string(w) << ": mFID " << r.mfid << "\n";
                result.init_grid.push_back(row(to_string(w), c, r, last_seconds));
            }
        }
        if (options.sharing_sweep) {
            for (auto k : options.k_values) {
                auto c = full_cfg;
                c.shared_resblocks = k;
                c.aux_generator = true;
                metrics::MetricReport r;
                double seconds = full_seconds;
                if (k == full_cfg.shared_resblocks && full_cfg.aux_generator) {
                    r = full_report;
                } else {
                    r = run(c).second;
                    seconds = last_seconds;
                }
                std::cerr << "[ablate] k=" << k << ": mFID " << r.mfid << "\n";
                result.sharing_sweep.push_back(row("k=" + std::to_string(k), c, r, seconds));
            }
        }
        if (options.weight_fluctuation) {
            auto c = full_cfg;
            c.aux_generator = false;
            auto without = train_i2i(artifacts, ds, c, seed);
            WeightFluctuationResult wf;
            wf.seed = seed;
            std::optional<TrainedSystem> with;
            if (!full_cfg.aux_generator) {
                auto with_cfg = full_cfg;
                with_cfg.aux_generator = true;
                with = train_i2i(artifacts, ds, with_cfg, seed);
            }
            const auto& w = with ? with->stage : full.stage;
            const auto t0 = Clock::now();
            wf.with_aux = system_weight_fluctuation(w.initial, w.final, config, seed);
            wf.without_aux = system_weight_fluctuation(without.stage.initial, without.stage.final, config, seed);
            result.wf_probe_seconds += seconds_since(t0);
            result.wf.push_back(wf);
        }
    }
    if (!options.out_dir.empty()) report::write_ablation(options.out_dir, result);
    return result;
}

}  // namespace transferi2i::pipeline
