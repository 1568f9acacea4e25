// Acceptance suite: one PASS/FAIL line per criterion.
//
//   acceptance [--only 1,2,8] [--config path] [--seeds 0,1,2]

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <iomanip>
#include <iostream>
#include <random>
#include <set>
#include <sstream>

#include <CLI11.hpp>

#include "support.hpp"
#include "transferi2i/checkpoint.hpp"
#include "transferi2i/errors.hpp"
#include "transferi2i/fisher.hpp"
#include "transferi2i/i2i.hpp"
#include "transferi2i/metrics.hpp"
#include "transferi2i/pipeline.hpp"
#include "transferi2i/pretrain.hpp"
#include "transferi2i/selfinit.hpp"

using namespace transferi2i;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    bool pass = true;
    std::vector<std::string> notes;

    void require(bool ok, const std::string& what) {
        if (!ok) pass = false;
        notes.push_back((ok ? "" : "FAILED ") + what);
    }
};

std::string fmt(double v, int precision = 4) {
    std::ostringstream s;
    s << std::setprecision(precision) << v;
    return s.str();
}

double median(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const auto n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

// ---------------------------------------------------------------------------
// 1: metric oracles

double brute_mmd2(const Eigen::MatrixXd& x, const Eigen::MatrixXd& y) {
    const double d = static_cast<double>(x.cols());
    auto k = [d](const Eigen::VectorXd& a, const Eigen::VectorXd& b) { return std::pow(a.dot(b) / d + 1.0, 3); };
    const auto m = x.rows(), n = y.rows();
    double sxx = 0, syy = 0, sxy = 0;
    for (Eigen::Index i = 0; i < m; ++i)
        for (Eigen::Index j = 0; j < m; ++j)
            if (i != j) sxx += k(x.row(i), x.row(j));
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = 0; j < n; ++j)
            if (i != j) syy += k(y.row(i), y.row(j));
    for (Eigen::Index i = 0; i < m; ++i)
        for (Eigen::Index j = 0; j < n; ++j) sxy += k(x.row(i), y.row(j));
    return sxx / double(m * (m - 1)) + syy / double(n * (n - 1)) - 2 * sxy / double(m * n);
}

Outcome metric_oracles() {
    Outcome o;
    using metrics::Moments;
    const auto I2 = Eigen::MatrixXd::Identity(2, 2);
    const double a = metrics::frechet_distance({Eigen::VectorXd::Zero(2), I2}, {Eigen::VectorXd::Zero(2), 4 * I2});
    o.require(std::abs(a - 2.0) < 1e-6, "FID d=2 scaled covariance " + fmt(a, 12) + " vs 2");

    Eigen::VectorXd shift = Eigen::VectorXd::Zero(5);
    shift(0) = 3;
    const auto I5 = Eigen::MatrixXd::Identity(5, 5);
    const double b = metrics::frechet_distance({Eigen::VectorXd::Zero(5), I5}, {shift, I5});
    o.require(std::abs(b - 9.0) < 1e-6, "FID shifted mean " + fmt(b, 12) + " vs 9");

    const double t = 0.7;
    Eigen::Matrix2d r;
    r << std::cos(t), -std::sin(t), std::sin(t), std::cos(t);
    Eigen::MatrixXd ca = r * Eigen::Vector2d(1, 4).asDiagonal() * r.transpose();
    Eigen::MatrixXd cb = r * Eigen::Vector2d(9, 1).asDiagonal() * r.transpose();
    Eigen::VectorXd m1(2), m2(2);
    m1 << 1, 0;
    m2 << 0, 2;
    const double c = metrics::frechet_distance({m1, ca}, {m2, cb});
    o.require(std::abs(c - 10.0) < 1e-6, "FID rotated covariances " + fmt(c, 12) + " vs 10");

    std::mt19937_64 rng(3);
    std::normal_distribution<double> normal;
    auto sample = [&](int64_t n, double s) {
        Eigen::MatrixXd m(n, 4);
        for (int64_t i = 0; i < n; ++i)
            for (int64_t j = 0; j < 4; ++j) m(i, j) = normal(rng) + (j == 0 ? s : 0.0);
        return m;
    };
    double worst = 0;
    for (int64_t n = 2; n <= 16; ++n) {
        auto x = sample(n, 0.0);
        for (int64_t m : {n, std::max<int64_t>(2, n - 1)}) {
            auto y = sample(m, 0.4);
            worst = std::max(worst, std::abs(metrics::mmd2_unbiased(x, y) - brute_mmd2(x, y)));
        }
        metrics::FeatureSet fx, fy;
        fx.features = x;
        fy.features = sample(n, 0.4);
        worst = std::max(worst, std::abs(metrics::kid(fx, fy, {3, 100, 5}) - brute_mmd2(fx.features, fy.features)));
    }
    o.require(worst < 1e-10, "KID vs O(n^2) oracle, n=2..16, worst error " + fmt(worst, 3));
    return o;
}

// ---------------------------------------------------------------------------
// 2: loss gradients

void zero_grads(const std::vector<torch::Tensor>& ps) {
    for (auto p : ps)
        if (p.grad().defined()) p.mutable_grad().zero_();
}

void jitter_biases(i2i::I2ISystem& sys) {
    torch::NoGradGuard no_grad;
    for (auto& dir : sys.directions()) {
        for (auto* m : std::vector<torch::nn::Module*>{dir.encoder.get(), dir.adaptor.get(), dir.generator.get(),
                                                      dir.aux.get(), dir.discriminator.get()}) {
            if (!m) continue;
            for (auto& p : m->named_parameters())
                if (p.key().ends_with("bias")) p.value().add_(torch::randn_like(p.value()) * 0.1);
        }
    }
}

Outcome loss_gradients() {
    Outcome o;
    testing::DefaultDtype dtype(caffe2::TypeMeta::Make<double>());
    torch::manual_seed(11);
    const double tol = 1e-4;

    for (auto side : {pretrain::Side::discriminator, pretrain::Side::generator}) {
        auto real = torch::randn({6}).requires_grad_();
        auto fake = torch::randn({6}).requires_grad_();
        auto aux = torch::randn({4}).requires_grad_();
        auto loss = [&] {
            return pretrain::gan_loss(side == pretrain::Side::discriminator ? real : torch::Tensor(), fake, side, aux,
                                      0.3);
        };
        loss().backward();
        auto r = testing::check_gradients({real, fake, aux}, [&] { return loss().item<double>(); }, 6);
        o.require(r.worst < tol, std::string("gan_loss ") +
                                     (side == pretrain::Side::discriminator ? "D" : "G") + " side " + fmt(r.worst, 3));
    }

    {
        nets::FeaturePyramid g{{0, torch::randn({2, 3, 2, 2})}, {1, torch::randn({2, 2, 4, 4})}};
        nets::FeaturePyramid a{{0, torch::randn({2, 3, 2, 2}).requires_grad_()},
                               {1, torch::randn({2, 2, 4, 4}).requires_grad_()}};
        selfinit::alignment_loss(g, a).backward();
        auto r = testing::check_gradients({a.at(0), a.at(1)},
                                          [&] { return selfinit::alignment_loss(g, a).item<double>(); }, 12);
        o.require(r.worst < tol, "alignment_loss " + fmt(r.worst, 3));
    }

    {
        auto spec = testing::micro_spec();
        auto d = nets::build_networks(spec, false, 4).discriminator;
        auto x = torch::rand({3, 3, 4, 4}) * 2 - 1;
        auto y = (torch::rand({3, 3, 4, 4}) * 2 - 1).requires_grad_();
        std::vector<double> alpha{1.0, 0.5};
        i2i::reconstruction_loss(d, x, y, alpha).backward();
        auto r = testing::check_gradients(
            {y}, [&] { return i2i::reconstruction_loss(d, x, y, alpha).item<double>(); }, 24);
        o.require(r.worst < tol, "reconstruction_loss " + fmt(r.worst, 3));
    }

    {
        auto spec = testing::micro_spec();
        auto c = testing::tiny_config();
        c.arch = spec;
        c.source_target_init = false;
        c.self_init = false;
        c.shared_resblocks = 1;
        c.lambda_aux = 0.5;
        auto sys = i2i::I2ISystem::build(spec, false, {{"1to2"}, {"2to1"}}, c, 2);
        jitter_biases(sys);
        auto& dir = sys.directions()[0];
        i2i::StepInputs in;
        in.x_source = torch::rand({3, 3, 4, 4}) * 2 - 1;
        in.x_target = torch::rand({3, 3, 4, 4}) * 2 - 1;
        in.z = torch::randn({3, spec.latent_dim});
        in.z_aux = torch::randn({3, spec.latent_dim});

        auto g_params = nets::unique_parameters({dir.encoder.get(), dir.adaptor.get(), dir.generator.get(),
                                                 dir.aux.get()});
        int64_t count = nets::parameter_count(*dir.discriminator);
        for (auto& p : g_params) count += p.numel();

        zero_grads(g_params);
        sys.generator_objective(0, in).total.backward();
        auto rg = testing::check_gradients(g_params,
                                           [&] { return sys.generator_objective(0, in).total.item<double>(); });
        auto d_params = dir.discriminator->parameters();
        zero_grads(d_params);
        sys.discriminator_objective(0, in).d_loss.backward();
        auto rd = testing::check_gradients(
            d_params, [&] { return sys.discriminator_objective(0, in).d_loss.item<double>(); });
        o.require(count < 10000, "micro system has " + std::to_string(count) + " parameters");
        o.require(rg.worst < tol, "full objective, G/E/A side " + fmt(rg.worst, 3) + " over " +
                                      std::to_string(rg.checked) + " entries");
        o.require(rd.worst < tol, "full objective, D side " + fmt(rd.worst, 3));
    }
    return o;
}

// ---------------------------------------------------------------------------
// 3: self-initialization

Outcome self_initialization(const StageConfig& config, const std::vector<uint64_t>& seeds) {
    Outcome o;
    const auto ds = pipeline::make_datasets(config);
    // One toy pretrained pair; the self-init stage itself is repeated per seed.
    auto artifacts = pipeline::train_base(ds, config, 0);
    pipeline::train_pretrain(artifacts, ds, config, 0);
    const auto spec = artifacts.base.spec;

    int ok = 0;
    for (auto seed : seeds) {
        const auto reads_before = data::dataset_reads();
        bool seed_ok = true;
        std::ostringstream line;
        line << "seed " << seed << ":";
        for (auto [name, g_ck, d_ck] : {std::tuple{"1to2", &*artifacts.target, &*artifacts.source},
                                        std::tuple{"2to1", &*artifacts.source, &*artifacts.target}}) {
            nets::Generator g(spec, false);
            nets::Discriminator d(spec, false);
            load_module(*g_ck, "G", *g);
            load_module(*d_ck, "D", *d);
            const auto g_hash = parameter_hash(*g), d_hash = parameter_hash(*d);

            auto adaptor = pipeline::fresh_adaptor(spec, false, seed);
            auto result = selfinit::self_initialize_adaptor(*g_ck, *d_ck, adaptor, config.steps_selfinit, config,
                                                            seed);
            nets::Adaptor trained(spec, false);
            load_module(result.checkpoint, "A", *trained);
            auto random = pipeline::fresh_adaptor(spec, false, seed + 1);

            const auto probe_seed = seed + 1000;
            const auto p_trained = selfinit::reconstruction_probe(g, d, trained, 32, probe_seed);
            const auto p_random = selfinit::reconstruction_probe(g, d, random, 32, probe_seed);
            const double ratio = result.final_loss / result.initial_loss;
            const bool frozen = parameter_hash(*g) == g_hash && parameter_hash(*d) == d_hash;
            const bool good = ratio <= 0.1 && p_trained.pixel_l1 < p_random.pixel_l1 && frozen;
            seed_ok = seed_ok && good;
            line << " " << name << " L_ali " << fmt(result.initial_loss) << "->" << fmt(result.final_loss)
                 << " (x" << fmt(ratio, 3) << "), probe L1 " << fmt(p_trained.pixel_l1, 3) << " vs random "
                 << fmt(p_random.pixel_l1, 3) << (frozen ? "" : ", G/D CHANGED") << ";";
        }
        const auto reads = data::dataset_reads() - reads_before;
        line << " dataset reads " << reads;
        seed_ok = seed_ok && reads == 0;
        ok += seed_ok;
        o.require(seed_ok, line.str());
    }
    o.notes.push_back(std::to_string(ok) + "/" + std::to_string(seeds.size()) + " seeds");
    return o;
}

// ---------------------------------------------------------------------------
// 4-7: ablation grid

struct Grid {
    pipeline::AblationResult result;
    std::vector<uint64_t> seeds;

    double mfid(const std::string& label, uint64_t seed, bool sharing_sweep = false) const {
        for (const auto& r : sharing_sweep ? result.sharing_sweep : result.init_grid)
            if (r.label == label && r.seed == seed) return r.mfid;
        throw std::runtime_error("missing ablation row " + label);
    }
    std::vector<double> all(const std::string& label, bool sharing_sweep = false) const {
        std::vector<double> v;
        for (auto s : seeds) v.push_back(mfid(label, s, sharing_sweep));
        return v;
    }
};

// a < b in at least `need` seeds.
std::pair<int, std::string> count_less(const Grid& grid, const std::string& a, const std::string& b) {
    int n = 0;
    std::string values;
    for (auto s : grid.seeds) {
        const double x = grid.mfid(a, s), y = grid.mfid(b, s);
        n += x < y;
        values += " " + fmt(x) + "<" + fmt(y);
    }
    return {n, values};
}

Outcome init_grid_ordering(const Grid& grid) {
    Outcome o;
    const std::string both = pipeline::to_string(pipeline::Wiring::both);
    const std::string st = pipeline::to_string(pipeline::Wiring::source_target_only);
    const std::string si = pipeline::to_string(pipeline::Wiring::self_init_only);
    const std::string scratch = pipeline::to_string(pipeline::Wiring::scratch);
    const int need = static_cast<int>(grid.seeds.size() + 1) * 2 / 3;
    for (auto [a, b] : {std::pair{both, st}, std::pair{both, si}, std::pair{si, scratch}}) {
        auto [n, values] = count_less(grid, a, b);
        o.require(n >= need, a + " < " + b + " in " + std::to_string(n) + "/" + std::to_string(grid.seeds.size()) +
                                 " seeds (" + values.substr(1) + ")");
    }
    const double mb = median(grid.all(both)), mst = median(grid.all(st)), msi = median(grid.all(si)),
                 msc = median(grid.all(scratch));
    o.require(mb < mst && mb < msi && msi < msc, "medians both " + fmt(mb) + ", source-target " + fmt(mst) +
                                                     ", self-init " + fmt(msi) + ", scratch " + fmt(msc));
    return o;
}

Outcome sharing_sweep_direction(const Grid& grid) {
    Outcome o;
    const double k4 = median(grid.all("k=4", true)), k1 = median(grid.all("k=1", true));
    o.require(k4 <= k1, "median mFID k=4 " + fmt(k4) + " <= k=1 " + fmt(k1));
    double seconds = 0;
    for (const auto& r : grid.result.sharing_sweep) seconds += r.seconds;
    o.require(seconds < 3600, "sweep runtime " + fmt(seconds, 4) + " s");
    return o;
}

Outcome weight_fluctuation(const Grid& grid, double probe_seconds) {
    Outcome o;
    int deeper = 0;
    bool nonneg = true;
    std::string values;
    for (const auto& wf : grid.result.wf) {
        // rb0 sits next to the latent: the deepest generator ResBlock.
        deeper += wf.with_aux.front() > wf.without_aux.front();
        for (double v : wf.with_aux) nonneg = nonneg && v >= 0;
        for (double v : wf.without_aux) nonneg = nonneg && v >= 0;
        values += " " + fmt(wf.with_aux.front()) + ">" + fmt(wf.without_aux.front());
    }
    o.require(deeper == static_cast<int>(grid.result.wf.size()) && !grid.result.wf.empty(),
              "deepest-block WF with aux > without in " + std::to_string(deeper) + "/" +
                  std::to_string(grid.result.wf.size()) + " seeds (" + (values.empty() ? "" : values.substr(1)) + ")");
    o.require(nonneg, "WF >= 0 everywhere");

    const auto spec = testing::tiny_spec();
    auto n = nets::build_networks(spec, false, 0);
    Checkpoint ck;
    ck.stage = Stage::i2i;
    ck.spec = spec;
    store_module(ck, "1to2.G", *n.generator);
    fisher::DiagonalFisher f;
    for (auto& p : n.generator->named_parameters()) f[p.key()] = torch::rand_like(p.value());
    auto self = fisher::weight_fluctuation(ck, ck, "1to2.G", f, spec.num_resblocks);
    o.require(std::all_of(self.begin(), self.end(), [](double v) { return v == 0.0; }), "WF(theta, theta) == 0");
    o.require(probe_seconds < 600, "probe runtime " + fmt(probe_seconds, 3) + " s");
    return o;
}

Outcome transfer_vs_scratch(const Grid& grid) {
    Outcome o;
    auto [n, values] = count_less(grid, pipeline::to_string(pipeline::Wiring::both),
                                  pipeline::to_string(pipeline::Wiring::scratch));
    o.require(n == static_cast<int>(grid.seeds.size()), "full pipeline < scratch in " + std::to_string(n) + "/" +
                                                            std::to_string(grid.seeds.size()) + " seeds (" +
                                                            values.substr(1) + ")");
    return o;
}

// ---------------------------------------------------------------------------
// 8: mechanical invariants

Outcome mechanical_invariants() {
    Outcome o;
    testing::TempDir dir("acceptance8");
    auto config = testing::tiny_config();
    config.steps_base = 4;
    config.steps_pretrain = 3;
    config.steps_selfinit = 3;
    config.steps_i2i = 3;
    config.shared_resblocks = 2;
    config.synthetic_per_class = 12;
    config.synthetic_test_per_class = 4;
    const auto ds = pipeline::make_datasets(config);

    auto run_all = [&] {
        auto a = pipeline::prepare_artifacts(ds, config, 5, {true, true, false});
        auto trained = pipeline::train_i2i(a, ds, config, 5);
        return std::make_pair(std::move(a), std::move(trained));
    };
    auto [a1, t1] = run_all();
    auto [a2, t2] = run_all();
    const bool reproducible = a1.base.serialize() == a2.base.serialize() &&
                              a1.source->serialize() == a2.source->serialize() &&
                              a1.target->serialize() == a2.target->serialize() &&
                              a1.selfinit_1to2->serialize() == a2.selfinit_1to2->serialize() &&
                              a1.selfinit_2to1->serialize() == a2.selfinit_2to1->serialize() &&
                              t1.stage.final.serialize() == t2.stage.final.serialize();
    o.require(reproducible, "base, pretrain, selfinit and i2i checkpoints bit-identical across two runs");

    t1.stage.final.save(dir.path() / "a.ckpt");
    auto back = Checkpoint::load(dir.path() / "a.ckpt");
    back.save(dir.path() / "b.ckpt");
    o.require(back.serialize() == t1.stage.final.serialize() &&
                  Checkpoint::load(dir.path() / "b.ckpt").serialize() == t1.stage.final.serialize(),
              "checkpoint save/load/save round trip is bit-exact");

    o.require(i2i::sharing_intact(t1.system), "shared parameters identical after I2I training");
    auto restored = i2i::I2ISystem::from_checkpoint(back, config);
    o.require(i2i::sharing_intact(restored), "shared parameters identical after restore");

    torch::NoGradGuard no_grad;
    const auto spec = t1.system.spec();
    auto x = ds.source_test.images();
    auto z = torch::randn({x.size(0), spec.latent_dim});
    std::vector<double> zero(spec.pyramid_levels.size(), 0.0);
    auto pure = t1.system.directions()[0].generator->forward(z).image;
    o.require(testing::bit_equal(t1.system.translate(0, x, z, std::nullopt, zero), pure),
              "w = 0 translation equals G(z)");

    auto rec = i2i::reconstruction_loss(t1.system.directions()[0].discriminator, x, x,
                                        config.alpha_or_default());
    o.require(rec.item<double>() == 0.0, "L_rec(x, x) == 0");
    return o;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"TransferI2I acceptance suite"};
    std::vector<int> only;
    std::string config_path = TRANSFERI2I_ACCEPTANCE_CONFIG;
    std::vector<uint64_t> seeds{0, 1, 2};
    app.add_option("--only", only, "criteria to run")->delimiter(',');
    app.add_option("--config", config_path, "config for the training criteria");
    app.add_option("--seeds", seeds, "seeds for criteria 3-7")->delimiter(',');
    CLI11_PARSE(app, argc, argv);
    std::set<int> wanted(only.begin(), only.end());
    if (wanted.empty()) wanted = {1, 2, 3, 4, 5, 6, 7, 8};

    bool all_pass = true;
    auto emit = [&](int n, const std::string& title, const std::function<Outcome()>& body, double limit_s) {
        const auto t0 = std::chrono::steady_clock::now();
        Outcome o;
        try {
            o = body();
        } catch (const std::exception& e) {
            o.pass = false;
            std::string msg = e.what();
            o.notes.push_back("exception: " + msg.substr(0, msg.find('\n')));
        }
        const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        if (limit_s > 0 && s > limit_s) {
            o.pass = false;
            o.notes.push_back("FAILED runtime over " + fmt(limit_s, 5) + " s");
        }
        all_pass = all_pass && o.pass;
        std::string detail;
        for (const auto& note : o.notes) detail += (detail.empty() ? "" : "; ") + note;
        std::cout << "criterion " << n << ": " << (o.pass ? "PASS" : "FAIL") << " [" << title << "] " << detail
                  << " (" << fmt(s, 4) << " s)" << std::endl;
    };

    StageConfig config;
    const bool needs_config = wanted.contains(3) || wanted.contains(4) || wanted.contains(5) || wanted.contains(6) ||
                              wanted.contains(7);
    if (needs_config) config = load_config(config_path);

    if (wanted.contains(1)) emit(1, "metric oracles", metric_oracles, 60);
    if (wanted.contains(2)) emit(2, "loss gradient suite", loss_gradients, 300);
    if (wanted.contains(3)) emit(3, "self-initialization", [&] { return self_initialization(config, seeds); }, 900);

    if (wanted.contains(4) || wanted.contains(5) || wanted.contains(6) || wanted.contains(7)) {
        Grid grid;
        grid.seeds = seeds;
        double seconds = 0, probe_seconds = 0;
        std::string error;
        try {
            pipeline::AblationOptions opts;
            opts.seeds = seeds;
            opts.k_values = {1, 4};
            opts.init_grid = wanted.contains(4) || wanted.contains(7);
            opts.sharing_sweep = wanted.contains(5);
            opts.weight_fluctuation = wanted.contains(6);
            const auto t0 = std::chrono::steady_clock::now();
            grid.result = pipeline::run_ablation(config, opts);
            seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
            probe_seconds = grid.result.wf_probe_seconds;
        } catch (const std::exception& e) {
            error = e.what();
            error = error.substr(0, error.find('\n'));
        }
        std::cout << "ablation grid: " << fmt(seconds / 60, 3) << " min for " << seeds.size() << " seeds"
                  << std::endl;
        auto grid_criterion = [&](int n, const std::string& title, const std::function<Outcome()>& body,
                                  double limit_s) {
            if (!wanted.contains(n)) return;
            emit(n, title, [&] {
                if (!error.empty()) throw std::runtime_error(error);
                return body();
            }, 0);
            if (limit_s > 0 && seconds > limit_s) {
                all_pass = false;
                std::cout << "criterion " << n << ": FAIL [" << title << "] grid runtime " << fmt(seconds, 5)
                          << " s over " << fmt(limit_s, 5) << " s" << std::endl;
            }
        };
        grid_criterion(4, "initialization ordering", [&] { return init_grid_ordering(grid); }, 7200);
        grid_criterion(5, "shared-layer direction", [&] { return sharing_sweep_direction(grid); }, 0);
        grid_criterion(6, "weight fluctuation", [&] { return weight_fluctuation(grid, probe_seconds); }, 0);
        grid_criterion(7, "transfer vs scratch", [&] { return transfer_vs_scratch(grid); }, 0);
    }

    if (wanted.contains(8)) emit(8, "mechanical invariants", mechanical_invariants, 600);
    return all_pass ? 0 : 1;
}
