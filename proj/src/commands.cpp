#include "transferi2i/commands.hpp"

#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "transferi2i/errors.hpp"
#include "transferi2i/fisher.hpp"
#include "transferi2i/image_io.hpp"
#include "transferi2i/pipeline.hpp"
#include "transferi2i/report.hpp"
#include "transferi2i/rng.hpp"
#include "transferi2i/selfinit.hpp"

namespace transferi2i::cli {

namespace fs = std::filesystem;

namespace {

constexpr int64_t kSampleGrid = 64;

struct Globals {
    std::string config_path;
    std::optional<uint64_t> seed;
    std::string out_dir = "runs";
    bool dry_run = false;
    std::vector<std::string> overrides;
};

std::string read_bytes(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot read '" + path.string() + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

StageConfig load(const Globals& g) {
    auto cfg = g.config_path.empty() ? parse_config("", g.overrides) : load_config(g.config_path, g.overrides);
    if (g.seed) cfg.seed = *g.seed;
    return cfg;
}

Checkpoint load_checkpoint(const std::string& path, std::optional<Stage> expected, const std::string& what) {
    if (!fs::exists(path)) throw CheckpointError(what + ": checkpoint '" + path + "' does not exist");
    auto ck = Checkpoint::load(path);
    if (expected) require_stage(ck, *expected, what);
    return ck;
}

/// Config snapshot plus a content hash over the config and every input file.
class Manifest {
public:
    Manifest(std::string command, const StageConfig& cfg) : command_(std::move(command)), config_(cfg.to_text()) {}

    void input(const fs::path& path) { inputs_.emplace_back(path.string(), sha256_hex(read_bytes(path))); }
    void output(const fs::path& path) { outputs_.push_back(path.string()); }

    void write(const fs::path& dir) const {
        std::string all = config_;
        auto inputs = nlohmann::json::array();
        for (const auto& [path, hash] : inputs_) {
            all += path + ":" + hash + "\n";
            inputs.push_back({{"path", path}, {"sha256", hash}});
        }
        auto outputs = nlohmann::json::array();
        for (const auto& path : outputs_) {
            outputs.push_back({{"path", path}, {"sha256", sha256_hex(read_bytes(path))}});
        }
        nlohmann::json j{{"command", command_},
                         {"config", config_},
                         {"inputs", inputs},
                         {"input_hash", sha256_hex(all)},
                         {"outputs", outputs}};
        report::write_json(dir / ("manifest_" + command_ + ".json"), j);
    }

private:
    std::string command_;
    std::string config_;
    std::vector<std::pair<std::string, std::string>> inputs_;
    std::vector<std::string> outputs_;
};

void save(const Checkpoint& ck, const fs::path& path, Manifest& m) {
    ck.save(path);
    m.output(path);
    std::cout << "wrote " << path.string() << "\n";
}

void write_generator_samples(const Checkpoint& ck, const fs::path& path, uint64_t seed) {
    torch::NoGradGuard no_grad;
    nets::Generator g(ck.spec, ck.conditional);
    load_module(ck, "G", *g);
    auto gen = step_generator(seed, Stream::render, 0);
    auto z = torch::randn({kSampleGrid, ck.spec.latent_dim}, gen);
    std::optional<torch::Tensor> c;
    if (ck.conditional) c = torch::arange(kSampleGrid, torch::kLong).remainder(ck.spec.num_classes);
    write_png_grid(path, g->forward(z, c).image, 8);
}

void dry_run_note(const std::string& what) { std::cout << "dry run: " << what << "\n"; }

// ---------------------------------------------------------------------------

int cmd_base(const Globals& g) {
    auto cfg = load(g);
    auto ds = pipeline::make_datasets(cfg);
    const fs::path out = g.out_dir;
    if (g.dry_run) {
        dry_run_note("train the base GAN for " + std::to_string(cfg.steps_base) + " steps on " +
                     std::to_string(ds.base.size()) + " images into " + (out / "base.ckpt").string());
        return 0;
    }
    fs::create_directories(out);
    Manifest m("base", cfg);
    pipeline::LossLogs logs;
    auto a = pipeline::train_base(ds, cfg, cfg.seed, &logs);
    save(a.base, out / "base.ckpt", m);
    pretrain::write_loss_csv(out / "base_loss.csv", logs["base"]);
    write_generator_samples(a.base, out / "base_samples.png", cfg.seed);
    m.write(out);
    return 0;
}

int cmd_pretrain(const Globals& g, const std::string& base_path) {
    auto cfg = load(g);
    auto base = load_checkpoint(base_path, Stage::base, "pretrain");
    auto ds = pipeline::make_datasets(cfg);
    const fs::path out = g.out_dir;
    if (g.dry_run) {
        dry_run_note(std::string("finetune ") + (cfg.conditional ? "the conditional GAN" : "source and target GANs") +
                     " for " + std::to_string(cfg.steps_pretrain) + " steps into " + out.string());
        return 0;
    }
    fs::create_directories(out);
    Manifest m("pretrain", cfg);
    m.input(base_path);
    pipeline::Artifacts a;
    a.base = std::move(base);
    pipeline::LossLogs logs;
    pipeline::train_pretrain(a, ds, cfg, cfg.seed, &logs);
    for (auto& [name, log] : logs) pretrain::write_loss_csv(out / ("pretrain_" + name + "_loss.csv"), log);
    if (cfg.conditional) {
        save(*a.conditional, out / "pretrain.ckpt", m);
        write_generator_samples(*a.conditional, out / "pretrain_samples.png", cfg.seed);
    } else {
        save(*a.source, out / "source.ckpt", m);
        save(*a.target, out / "target.ckpt", m);
        write_generator_samples(*a.source, out / "source_samples.png", cfg.seed);
        write_generator_samples(*a.target, out / "target_samples.png", cfg.seed);
    }
    m.write(out);
    return 0;
}

struct SelfInitInputs {
    std::string base, source, target, pretrain;
};

int cmd_selfinit(const Globals& g, const SelfInitInputs& in) {
    auto cfg = load(g);
    pipeline::Artifacts a;
    std::vector<std::string> inputs;
    bool on_base = false;
    if (!in.source.empty() || !in.target.empty()) {
        if (in.source.empty() || in.target.empty()) throw UsageError("selfinit: give both --source and --target");
        a.source = load_checkpoint(in.source, Stage::pretrain, "selfinit --source");
        a.target = load_checkpoint(in.target, Stage::pretrain, "selfinit --target");
        a.base = *a.source;
        inputs = {in.source, in.target};
    } else if (!in.pretrain.empty()) {
        a.conditional = load_checkpoint(in.pretrain, Stage::pretrain, "selfinit --pretrain");
        a.base = *a.conditional;
        inputs = {in.pretrain};
    } else if (!in.base.empty()) {
        a.base = load_checkpoint(in.base, Stage::base, "selfinit --base");
        on_base = true;
        inputs = {in.base};
    } else {
        throw UsageError("selfinit: give --source/--target, --pretrain or --base");
    }
    if (a.base.conditional != cfg.conditional) throw ConfigError("selfinit: checkpoint and config disagree on 'conditional'");
    const fs::path out = g.out_dir;
    if (g.dry_run) {
        dry_run_note("self-initialize adaptors for " + std::to_string(cfg.steps_selfinit) + " steps into " +
                     out.string());
        return 0;
    }
    fs::create_directories(out);
    Manifest m("selfinit", cfg);
    for (const auto& p : inputs) m.input(p);
    auto results = pipeline::train_selfinit(a, cfg, cfg.seed, on_base);
    nlohmann::json probe;
    for (auto& [name, r] : results) {
        const auto stem = "selfinit_" + name;
        save(r.checkpoint, out / (stem + ".ckpt"), m);
        selfinit::write_alignment_csv(out / (stem + "_loss.csv"), r.log);

        // Reconstruction probe with the trained adaptor and with a random one.
        const auto& ck = r.checkpoint;
        nets::Generator gen(ck.spec, ck.conditional);
        nets::Discriminator dis(ck.spec, ck.conditional);
        nets::Adaptor trained(ck.spec, ck.conditional);
        load_module(ck, "G", *gen);
        load_module(ck, "D", *dis);
        load_module(ck, "A", *trained);
        auto random = pipeline::fresh_adaptor(ck.spec, ck.conditional, cfg.seed + 1);
        auto p_trained = selfinit::reconstruction_probe(gen, dis, trained, 16, cfg.seed);
        auto p_random = selfinit::reconstruction_probe(gen, dis, random, 16, cfg.seed);
        write_png_grid(out / (stem + "_probe.png"),
                       torch::cat({p_trained.original, p_trained.reconstructed, p_random.reconstructed}), 16);
        probe[name] = {{"initial_l_ali", r.initial_loss},
                       {"final_l_ali", r.final_loss},
                       {"probe_pixel_l1_trained", p_trained.pixel_l1},
                       {"probe_pixel_l1_random", p_random.pixel_l1}};
    }
    report::write_json(out / "selfinit_probe.json", probe);
    std::cout << probe.dump(2) << "\n";
    m.write(out);
    return 0;
}

struct TrainInputs {
    std::string base, source, target, pretrain, selfinit_1to2, selfinit_2to1, selfinit, selfinit_base;
    bool no_aux = false;
};

int cmd_train(const Globals& g, const TrainInputs& in) {
    auto cfg = load(g);
    if (in.no_aux) cfg.aux_generator = false;
    pipeline::Artifacts a;
    std::vector<std::string> inputs;
    auto opt = [&](const std::string& path, std::optional<Stage> stage, const char* what) -> std::optional<Checkpoint> {
        if (path.empty()) return std::nullopt;
        inputs.push_back(path);
        return load_checkpoint(path, stage, what);
    };
    auto base = opt(in.base, Stage::base, "train --base");
    a.source = opt(in.source, Stage::pretrain, "train --source");
    a.target = opt(in.target, Stage::pretrain, "train --target");
    a.conditional = opt(in.pretrain, Stage::pretrain, "train --pretrain");
    a.selfinit_1to2 = opt(in.selfinit_1to2, Stage::selfinit, "train --selfinit-1to2");
    a.selfinit_2to1 = opt(in.selfinit_2to1, Stage::selfinit, "train --selfinit-2to1");
    a.selfinit_conditional = opt(in.selfinit, Stage::selfinit, "train --selfinit");
    a.selfinit_base = opt(in.selfinit_base, Stage::selfinit, "train --selfinit-base");
    if (base) a.base = *base;

    auto ds = pipeline::make_datasets(cfg);
    const auto spec = pipeline::resolved_spec(cfg, ds);
    // Resolve the wiring now so that tag errors surface before any training.
    auto inits = pipeline::direction_inits(a, cfg);
    i2i::I2ISystem::build(spec, cfg.conditional, inits, cfg, cfg.seed);

    const fs::path out = g.out_dir;
    const auto wiring = pipeline::wiring_from_flags(cfg.source_target_init, cfg.self_init);
    if (g.dry_run) {
        dry_run_note("train the " + pipeline::to_string(wiring) + " system for " + std::to_string(cfg.steps_i2i) +
                     " steps into " + out.string());
        return 0;
    }
    fs::create_directories(out);
    Manifest m("train", cfg);
    for (const auto& p : inputs) m.input(p);

    std::optional<Classifier> extractor;
    nlohmann::json snapshots = nlohmann::json::array();
    std::function<void(i2i::I2ISystem&)> hook;
    if (cfg.eval_every > 0) {
        extractor = pipeline::make_extractor(ds, cfg, cfg.seed);
        hook = [&](i2i::I2ISystem& sys) {
            if (sys.step() % cfg.eval_every != 0) return;
            auto r = pipeline::evaluate(sys, ds, *extractor, cfg, cfg.seed, false);
            snapshots.push_back({{"step", sys.step()}, {"mfid", r.mfid}, {"mkid", r.mkid}});
            std::cerr << "[eval] step " << sys.step() << " mFID " << r.mfid << "\n";
        };
    }
    auto trained = pipeline::train_i2i(a, ds, cfg, cfg.seed, hook);
    save(trained.stage.initial, out / "i2i_init.ckpt", m);
    save(trained.stage.final, out / "i2i.ckpt", m);
    i2i::write_step_csv(out / "i2i_loss.csv", trained.stage.log);
    if (!snapshots.empty()) report::write_json(out / "i2i_snapshots.json", snapshots);

    // Sample grid: inputs on odd rows, translations below them.
    torch::NoGradGuard no_grad;
    std::vector<torch::Tensor> rows;
    for (size_t d = 0; d < trained.system.directions().size(); ++d) {
        const auto& test = cfg.conditional ? ds.test : (d == 0 ? ds.source_test : ds.target_test);
        auto x = test.images().slice(0, 0, 8);
        auto gen = step_generator(cfg.seed, Stream::render, static_cast<int64_t>(d));
        auto z = torch::randn({x.size(0), spec.latent_dim}, gen);
        std::optional<torch::Tensor> c;
        if (cfg.conditional) c = torch::arange(x.size(0), torch::kLong).remainder(ds.num_classes);
        rows.push_back(x);
        rows.push_back(trained.system.translate(d, x, z, c));
    }
    write_png_grid(out / "i2i_samples.png", torch::cat(rows), 8);
    m.write(out);
    return 0;
}

struct EvalInputs {
    std::vector<std::string> checkpoints;
    std::string wf_with, wf_without;
};

int cmd_eval(const Globals& g, const EvalInputs& in) {
    auto cfg = load(g);
    if (in.checkpoints.empty() && in.wf_with.empty()) throw UsageError("eval: give --checkpoint and/or --wf-with");
    if (in.wf_with.empty() != in.wf_without.empty()) throw UsageError("eval: give both --wf-with and --wf-without");
    std::vector<Checkpoint> cks;
    for (const auto& p : in.checkpoints) cks.push_back(load_checkpoint(p, Stage::i2i, "eval --checkpoint"));
    struct WfRun {
        Checkpoint before, after;
    };
    std::vector<WfRun> wf;
    for (const auto& dir : {in.wf_with, in.wf_without}) {
        if (dir.empty()) continue;
        wf.push_back({load_checkpoint((fs::path(dir) / "i2i_init.ckpt").string(), Stage::i2i, "eval --wf"),
                      load_checkpoint((fs::path(dir) / "i2i.ckpt").string(), Stage::i2i, "eval --wf")});
    }
    const fs::path out = g.out_dir;
    if (g.dry_run) {
        dry_run_note("evaluate " + std::to_string(cks.size()) + " checkpoint(s) into " + out.string());
        return 0;
    }
    fs::create_directories(out);
    Manifest m("eval", cfg);
    for (const auto& p : in.checkpoints) m.input(p);

    if (!cks.empty()) {
        auto ds = pipeline::make_datasets(cfg);
        auto extractor = pipeline::make_extractor(ds, cfg, cfg.seed);
        std::vector<std::pair<std::string, metrics::MetricReport>> rows;
        nlohmann::json reports = nlohmann::json::array();
        for (size_t i = 0; i < cks.size(); ++i) {
            auto sys = i2i::I2ISystem::from_checkpoint(cks[i], cfg);
            auto r = pipeline::evaluate(sys, ds, extractor, cfg, cfg.seed, true);
            auto name = fs::path(in.checkpoints[i]).parent_path().filename().string();
            if (name.empty()) name = in.checkpoints[i];
            rows.emplace_back(name, r);
            auto j = r.to_json();
            j["checkpoint"] = in.checkpoints[i];
            reports.push_back(j);
        }
        report::write_json(out / "report.json", reports.size() == 1 ? reports[0] : reports);
        const auto table = std::string(metrics::kReportNote) + "\n\n" + report::metric_table_markdown(rows);
        report::write_text(out / "table.md", table);
        m.output(out / "report.json");
        m.output(out / "table.md");
        std::cout << table;
    }
    if (!wf.empty()) {
        auto with = pipeline::system_weight_fluctuation(wf[0].before, wf[0].after, cfg, cfg.seed);
        auto without = pipeline::system_weight_fluctuation(wf[1].before, wf[1].after, cfg, cfg.seed);
        std::vector<fisher::WeightFluctuationRow> rows;
        for (size_t i = 0; i < with.size(); ++i) rows.push_back({static_cast<int64_t>(i), with[i], without[i]});
        fisher::write_wf_table(out / "weight_fluctuation.csv", rows);
        fisher::write_wf_plot(out / "weight_fluctuation.png", rows);
        m.output(out / "weight_fluctuation.csv");
        m.output(out / "weight_fluctuation.png");
        for (const auto& r : rows) std::cout << "RB" << r.resblock << " " << r.with_aux << " " << r.without_aux << "\n";
    }
    m.write(out);
    return 0;
}

struct AblateInputs {
    std::vector<uint64_t> seeds;
    std::vector<int64_t> k_values{1, 2, 3, 4};
    bool no_init_grid = false, no_sharing_sweep = false, no_wf = false;
};

int cmd_ablate(const Globals& g, const AblateInputs& in) {
    auto cfg = load(g);
    pipeline::AblationOptions opts;
    opts.seeds = in.seeds.empty() ? std::vector<uint64_t>{cfg.seed} : in.seeds;
    opts.k_values = in.k_values;
    opts.init_grid = !in.no_init_grid;
    opts.sharing_sweep = !in.no_sharing_sweep;
    opts.weight_fluctuation = !in.no_wf;
    for (auto k : opts.k_values) {
        if (k < 0 || k > cfg.arch.num_resblocks) throw ConfigError("ablate: k=" + std::to_string(k) + " out of range");
    }
    pipeline::make_datasets(cfg);
    if (g.dry_run) {
        dry_run_note("run the ablation grid over " + std::to_string(opts.seeds.size()) + " seed(s) into " + g.out_dir);
        return 0;
    }
    opts.out_dir = g.out_dir;
    Manifest m("ablate", cfg);
    auto result = pipeline::run_ablation(cfg, opts);
    if (!result.init_grid.empty()) {
        std::cout << report::init_grid_markdown(report::median_rows(result.init_grid)) << "\n";
    }
    if (!result.sharing_sweep.empty()) {
        std::cout << report::sharing_sweep_markdown(report::median_rows(result.sharing_sweep)) << "\n";
    }
    m.output(fs::path(g.out_dir) / "ablation.json");
    m.write(g.out_dir);
    return 0;
}

}  // namespace

int run(const std::vector<std::string>& args) {
    CLI::App app{"TransferI2I desk-scale pipeline"};
    app.require_subcommand(1);
    Globals g;
    app.add_option("--config", g.config_path, "config file (key = value lines)");
    app.add_option("--seed", g.seed, "run seed (overrides the config)");
    app.add_option("--out-dir", g.out_dir, "output directory");
    app.add_flag("--dry-run", g.dry_run, "validate inputs and print the plan without writing anything");
    app.add_option("--set", g.overrides, "config override key=value (repeatable)");

    auto* base = app.add_subcommand("base", "train the stand-in pretrained GAN");
    base->fallthrough();

    std::string pretrain_base;
    auto* pre = app.add_subcommand("pretrain", "source-target (or conditional) finetuning");
    pre->add_option("--base", pretrain_base, "base checkpoint")->required();
    pre->fallthrough();

    SelfInitInputs si;
    auto* sel = app.add_subcommand("selfinit", "data-free adaptor self-initialization");
    sel->add_option("--source", si.source, "source pretrain checkpoint (two-class)");
    sel->add_option("--target", si.target, "target pretrain checkpoint (two-class)");
    sel->add_option("--pretrain", si.pretrain, "conditional pretrain checkpoint");
    sel->add_option("--base", si.base, "base checkpoint (self-init-only wiring)");
    sel->fallthrough();

    TrainInputs ti;
    auto* train = app.add_subcommand("train", "translation training");
    train->add_option("--base", ti.base, "base checkpoint");
    train->add_option("--source", ti.source, "source pretrain checkpoint");
    train->add_option("--target", ti.target, "target pretrain checkpoint");
    train->add_option("--pretrain", ti.pretrain, "conditional pretrain checkpoint");
    train->add_option("--selfinit-1to2", ti.selfinit_1to2, "selfinit checkpoint for 1->2");
    train->add_option("--selfinit-2to1", ti.selfinit_2to1, "selfinit checkpoint for 2->1");
    train->add_option("--selfinit", ti.selfinit, "conditional selfinit checkpoint");
    train->add_option("--selfinit-base", ti.selfinit_base, "selfinit checkpoint aligned on the base pair");
    train->add_flag("--no-aux-generator", ti.no_aux, "disable the auxiliary generator");
    train->fallthrough();

    EvalInputs ei;
    auto* eval = app.add_subcommand("eval", "metric report and weight-fluctuation probe");
    eval->add_option("--checkpoint", ei.checkpoints, "i2i checkpoint (repeatable)");
    eval->add_option("--wf-with", ei.wf_with, "train output directory with the auxiliary generator");
    eval->add_option("--wf-without", ei.wf_without, "train output directory without the auxiliary generator");
    eval->fallthrough();

    AblateInputs ai;
    auto* ablate = app.add_subcommand("ablate", "initialization grid, shared-layer sweep and WF probe");
    ablate->add_option("--seeds", ai.seeds, "seeds (default: the run seed)")->delimiter(',');
    ablate->add_option("--k", ai.k_values, "shared ResBlock counts for the sweep")->delimiter(',');
    ablate->add_flag("--no-init-grid", ai.no_init_grid, "skip the initialization grid");
    ablate->add_flag("--no-sharing-sweep", ai.no_sharing_sweep, "skip the shared-layer sweep");
    ablate->add_flag("--no-wf", ai.no_wf, "skip the weight-fluctuation probe");
    ablate->fallthrough();

    try {
        std::vector<std::string> reversed(args.rbegin(), args.rend());
        app.parse(reversed);
    } catch (const CLI::CallForHelp&) {
        std::cout << app.help();
        return 0;
    } catch (const CLI::ParseError& e) {
        std::cerr << "E_USAGE: " << e.what() << "\n";
        return 2;
    }

    try {
        if (*base) return cmd_base(g);
        if (*pre) return cmd_pretrain(g, pretrain_base);
        if (*sel) return cmd_selfinit(g, si);
        if (*train) return cmd_train(g, ti);
        if (*eval) return cmd_eval(g, ei);
        if (*ablate) return cmd_ablate(g, ai);
    } catch (const Error& e) {
        std::cerr << e.code() << ": " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::string msg = e.what();
        std::cerr << "E_INTERNAL: " << msg.substr(0, msg.find('\n')) << "\n";
        return 1;
    }
    return 0;
}

int run(int argc, char** argv) {
    std::vector<std::string> args;
    for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
    return run(args);
}

}  // namespace transferi2i::cli
