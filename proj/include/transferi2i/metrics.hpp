#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>
#include <torch/torch.h>

#include "transferi2i/classifier.hpp"
#include "transferi2i/data.hpp"

namespace transferi2i::metrics {

enum class SourceTag { real, generated };

struct FeatureSet {
    Eigen::MatrixXd features;  // N x d
    SourceTag source_tag = SourceTag::real;
    std::optional<int64_t> class_label;

    int64_t size() const { return features.rows(); }
    int64_t dim() const { return features.cols(); }
};

struct Moments {
    Eigen::VectorXd mean;
    Eigen::MatrixXd covariance;
};

/// Sample mean and unbiased covariance. Throws DataError for N < 2 or non-finite entries.
Moments moments(const FeatureSet& set);

/// ||mu_a - mu_b||^2 + Tr(S_a + S_b - 2 (S_a S_b)^{1/2}), with the square-root trace taken
/// as Tr((S_a^{1/2} S_b S_a^{1/2})^{1/2}) over clipped eigenvalues. Rank-deficient
/// covariances get 1e-6 I added first.
double frechet_distance(const Moments& a, const Moments& b);

double fid(const FeatureSet& real, const FeatureSet& fake);

/// Unbiased MMD^2 with k(x, y) = (x.y / d + 1)^3.
double mmd2_unbiased(const Eigen::MatrixXd& x, const Eigen::MatrixXd& y);

struct KidOptions {
    int64_t subsets = 10;
    int64_t subset_size = 100;
    uint64_t seed = 0;
};

/// Mean of mmd2_unbiased over random subsets of size min(subset_size, N_real, N_fake).
double kid(const FeatureSet& real, const FeatureSet& fake, const KidOptions& options = {});

struct ClassInput {
    int64_t label = 0;
    FeatureSet real;
    FeatureSet fake;
};

struct ClassScore {
    int64_t label = 0;
    double fid = 0;
    double kid = 0;
    int64_t n_real = 0;
    int64_t n_fake = 0;
};

struct ClassMetrics {
    std::vector<ClassScore> per_class;
    std::vector<int64_t> excluded;  // classes with fewer than two samples on either side
    double mfid = 0;
    double mkid = 0;
};

/// Per-class FID/KID and their unweighted means. Throws DataError when every class is excluded.
ClassMetrics mean_class_metrics(const std::vector<ClassInput>& classes, const KidOptions& options = {});

/// Real-classifier / fake-classifier accuracies.
struct RcFc {
    double rc = 0;
    double fc = 0;
};

/// RC: train on real_train, score on fake. FC: train on fake, score on real_test.
/// Both classifiers share architecture, budget and seed.
RcFc rc_fc(const data::Batch& real_train, const data::Batch& real_test, const data::Batch& fake, int64_t num_classes,
           const ClassifierOptions& options, uint64_t seed);

/// Classifier trained on `corpus`; its 64-d embedding layer, rescaled per row to norm
/// sqrt(64), is the FID/KID feature space.
Classifier build_feature_extractor(const data::Corpus& corpus, const ClassifierOptions& options, uint64_t seed);

FeatureSet embed(const Classifier& extractor, const torch::Tensor& images, SourceTag tag,
                 std::optional<int64_t> label = std::nullopt);

inline constexpr const char* kReportNote =
    "Scores use a small classifier embedding trained by this kit, not Inception features. "
    "Only orderings between runs that share the extractor hash are comparable.";

struct MetricReport {
    std::string note = kReportNote;
    std::string extractor_hash;
    std::vector<ClassScore> per_class;
    std::vector<int64_t> excluded_classes;
    double mfid = 0;
    double mkid = 0;  // raw estimator value; tables print x100
    std::optional<double> rc;
    std::optional<double> fc;
    uint64_t kid_seed = 0;
    int64_t kid_subsets = 0;
    int64_t kid_subset_size = 0;

    nlohmann::json to_json() const;
    static MetricReport from_json(const nlohmann::json& j);
};

MetricReport make_report(const ClassMetrics& metrics, const std::string& extractor_hash, const KidOptions& options);

}  // namespace transferi2i::metrics
