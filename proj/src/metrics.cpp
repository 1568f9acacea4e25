#include "transferi2i/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "transferi2i/errors.hpp"
#include "transferi2i/rng.hpp"

namespace transferi2i::metrics {

namespace {

constexpr double kCovarianceEps = 1e-6;

Eigen::MatrixXd psd_sqrt(const Eigen::MatrixXd& m) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (m + m.transpose()));
    Eigen::VectorXd ev = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
    return es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
}

Eigen::MatrixXd regularized(const Eigen::MatrixXd& cov) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(cov, Eigen::EigenvaluesOnly);
    if (es.eigenvalues().minCoeff() > kCovarianceEps) return cov;
    return cov + kCovarianceEps * Eigen::MatrixXd::Identity(cov.rows(), cov.cols());
}

void require_samples(const FeatureSet& s, const char* who) {
    if (s.size() < 2) throw DataError(std::string(who) + ": need at least two samples, got " + std::to_string(s.size()));
    if (!s.features.allFinite()) throw DataError(std::string(who) + ": non-finite features");
}

Eigen::MatrixXd rows(const Eigen::MatrixXd& m, const std::vector<int64_t>& idx) {
    Eigen::MatrixXd out(static_cast<Eigen::Index>(idx.size()), m.cols());
    for (size_t i = 0; i < idx.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = m.row(idx[i]);
    return out;
}

std::vector<int64_t> subset(int64_t n, int64_t m, torch::Generator& gen) {
    auto perm = torch::randperm(n, gen, torch::kLong).slice(0, 0, m).contiguous();
    return {perm.data_ptr<int64_t>(), perm.data_ptr<int64_t>() + m};
}

}  // namespace

Moments moments(const FeatureSet& set) {
    require_samples(set, "moments");
    Moments m;
    m.mean = set.features.colwise().mean().transpose();
    Eigen::MatrixXd centered = set.features.rowwise() - m.mean.transpose();
    m.covariance = centered.transpose() * centered / static_cast<double>(set.size() - 1);
    return m;
}

double frechet_distance(const Moments& a, const Moments& b) {
    if (a.mean.size() != b.mean.size()) throw ShapeError("frechet_distance: feature dimensions differ");
    const Eigen::MatrixXd sa = regularized(a.covariance);
    const Eigen::MatrixXd sb = regularized(b.covariance);
    const Eigen::MatrixXd root_a = psd_sqrt(sa);
    const Eigen::MatrixXd product = root_a * sb * root_a;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (product + product.transpose()), Eigen::EigenvaluesOnly);
    const double tr_sqrt = es.eigenvalues().cwiseMax(0.0).cwiseSqrt().sum();
    const double value = (a.mean - b.mean).squaredNorm() + sa.trace() + sb.trace() - 2.0 * tr_sqrt;
    if (!std::isfinite(value)) throw NumericalError("frechet_distance: non-finite result");
    return std::max(value, 0.0);
}

double fid(const FeatureSet& real, const FeatureSet& fake) {
    require_samples(real, "fid");
    require_samples(fake, "fid");
    return frechet_distance(moments(real), moments(fake));
}

double mmd2_unbiased(const Eigen::MatrixXd& x, const Eigen::MatrixXd& y) {
    const auto m = x.rows();
    const auto n = y.rows();
    if (m < 2 || n < 2) throw DataError("mmd2_unbiased: need at least two samples per set");
    if (x.cols() != y.cols()) throw ShapeError("mmd2_unbiased: feature dimensions differ");
    const double d = static_cast<double>(x.cols());
    auto kernel = [d](const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) -> Eigen::MatrixXd {
        return ((a * b.transpose()).array() / d + 1.0).cube().matrix();
    };
    const Eigen::MatrixXd kxx = kernel(x, x);
    const Eigen::MatrixXd kyy = kernel(y, y);
    const Eigen::MatrixXd kxy = kernel(x, y);
    const double sxx = (kxx.sum() - kxx.trace()) / static_cast<double>(m * (m - 1));
    const double syy = (kyy.sum() - kyy.trace()) / static_cast<double>(n * (n - 1));
    const double sxy = kxy.sum() / static_cast<double>(m * n);
    return sxx + syy - 2.0 * sxy;
}

double kid(const FeatureSet& real, const FeatureSet& fake, const KidOptions& options) {
    require_samples(real, "kid");
    require_samples(fake, "kid");
    if (options.subsets < 1 || options.subset_size < 2) throw ConfigError("kid: invalid subset protocol");
    const auto m = std::min({options.subset_size, real.size(), fake.size()});
    double total = 0;
    for (int64_t s = 0; s < options.subsets; ++s) {
        auto gen = step_generator(options.seed, Stream::subset, s);
        auto ri = subset(real.size(), m, gen);
        auto fi = subset(fake.size(), m, gen);
        total += mmd2_unbiased(rows(real.features, ri), rows(fake.features, fi));
    }
    return total / static_cast<double>(options.subsets);
}

ClassMetrics mean_class_metrics(const std::vector<ClassInput>& classes, const KidOptions& options) {
    if (classes.empty()) throw DataError("mean_class_metrics: no classes");
    ClassMetrics out;
    for (const auto& c : classes) {
        if (c.real.size() < 2 || c.fake.size() < 2) {
            out.excluded.push_back(c.label);
            continue;
        }
        ClassScore s;
        s.label = c.label;
        s.fid = fid(c.real, c.fake);
        s.kid = kid(c.real, c.fake, options);
        s.n_real = c.real.size();
        s.n_fake = c.fake.size();
        out.per_class.push_back(s);
    }
    if (out.per_class.empty()) throw DataError("mean_class_metrics: every class has fewer than two samples");
    for (const auto& s : out.per_class) {
        out.mfid += s.fid;
        out.mkid += s.kid;
    }
    out.mfid /= static_cast<double>(out.per_class.size());
    out.mkid /= static_cast<double>(out.per_class.size());
    return out;
}

RcFc rc_fc(const data::Batch& real_train, const data::Batch& real_test, const data::Batch& fake, int64_t num_classes,
           const ClassifierOptions& options, uint64_t seed) {
    if (num_classes < 2) throw DataError("rc_fc: the protocol needs at least two classes");
    RcFc out;
    auto real_clf = Classifier::train(real_train.images, real_train.labels, num_classes, options, seed);
    out.rc = real_clf.accuracy(fake.images, fake.labels);
    auto fake_clf = Classifier::train(fake.images, fake.labels, num_classes, options, seed);
    out.fc = fake_clf.accuracy(real_test.images, real_test.labels);
    return out;
}

Classifier build_feature_extractor(const data::Corpus& corpus, const ClassifierOptions& options, uint64_t seed) {
    const auto c = corpus.num_classes();
    if (c < 2) throw DataError("feature extractor: corpus needs at least two classes");
    auto labels = torch::tensor(corpus.labels(), torch::kLong);
    return Classifier::train(corpus.images(), labels, c, options, seed);
}

FeatureSet embed(const Classifier& extractor, const torch::Tensor& images, SourceTag tag,
                 std::optional<int64_t> label) {
    FeatureSet s;
    // Rows scaled to norm sqrt(d) keep the cubic kernel's argument in [-1, 1].
    Eigen::MatrixXd f = extractor.embed(images);
    const double scale = std::sqrt(static_cast<double>(f.cols()));
    for (Eigen::Index i = 0; i < f.rows(); ++i) {
        const double n = f.row(i).norm();
        if (n > 0) f.row(i) *= scale / n;
    }
    s.features = std::move(f);
    s.source_tag = tag;
    s.class_label = label;
    return s;
}

// ---------------------------------------------------------------------------

nlohmann::json MetricReport::to_json() const {
    nlohmann::json j;
    j["note"] = note;
    j["extractor_hash"] = extractor_hash;
    auto classes = nlohmann::json::array();
    for (const auto& s : per_class) {
        classes.push_back(
            {{"class", s.label}, {"fid", s.fid}, {"kid", s.kid}, {"n_real", s.n_real}, {"n_fake", s.n_fake}});
    }
    j["per_class"] = classes;
    j["excluded_classes"] = excluded_classes;
    j["mfid"] = mfid;
    j["mkid"] = mkid;
    j["rc"] = rc ? nlohmann::json(*rc) : nlohmann::json(nullptr);
    j["fc"] = fc ? nlohmann::json(*fc) : nlohmann::json(nullptr);
    j["kid_protocol"] = {{"seed", kid_seed}, {"subsets", kid_subsets}, {"subset_size", kid_subset_size}};
    return j;
}

MetricReport MetricReport::from_json(const nlohmann::json& j) {
    MetricReport r;
    r.note = j.at("note").get<std::string>();
    r.extractor_hash = j.at("extractor_hash").get<std::string>();
    for (const auto& c : j.at("per_class")) {
        r.per_class.push_back({c.at("class").get<int64_t>(), c.at("fid").get<double>(), c.at("kid").get<double>(),
                               c.at("n_real").get<int64_t>(), c.at("n_fake").get<int64_t>()});
    }
    r.excluded_classes = j.at("excluded_classes").get<std::vector<int64_t>>();
    r.mfid = j.at("mfid").get<double>();
    r.mkid = j.at("mkid").get<double>();
    if (!j.at("rc").is_null()) r.rc = j.at("rc").get<double>();
    if (!j.at("fc").is_null()) r.fc = j.at("fc").get<double>();
    const auto& k = j.at("kid_protocol");
    r.kid_seed = k.at("seed").get<uint64_t>();
    r.kid_subsets = k.at("subsets").get<int64_t>();
    r.kid_subset_size = k.at("subset_size").get<int64_t>();
    return r;
}

MetricReport make_report(const ClassMetrics& metrics, const std::string& extractor_hash, const KidOptions& options) {
    MetricReport r;
    r.extractor_hash = extractor_hash;
    r.per_class = metrics.per_class;
    r.excluded_classes = metrics.excluded;
    r.mfid = metrics.mfid;
    r.mkid = metrics.mkid;
    r.kid_seed = options.seed;
    r.kid_subsets = options.subsets;
    r.kid_subset_size = options.subset_size;
    return r;
}

}  // namespace transferi2i::metrics
