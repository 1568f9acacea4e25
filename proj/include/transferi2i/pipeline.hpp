#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "transferi2i/checkpoint.hpp"
#include "transferi2i/classifier.hpp"
#include "transferi2i/config.hpp"
#include "transferi2i/data.hpp"
#include "transferi2i/i2i.hpp"
#include "transferi2i/metrics.hpp"
#include "transferi2i/pretrain.hpp"
#include "transferi2i/selfinit.hpp"

namespace transferi2i::pipeline {

/// Every corpus a run touches. Two-class runs relabel the chosen source and
/// target classes to 0 and 1; conditional runs keep all classes.
struct Datasets {
    data::Corpus base;  // stand-in for the large pretraining set
    data::Corpus train;
    data::Corpus test;
    data::Corpus source_train, target_train;  // two-class views
    data::Corpus source_test, target_test;
    int64_t num_classes = 0;  // classes of the translation corpus
};

Datasets make_datasets(const StageConfig& config);

/// Architecture with num_classes filled in from the data (1 for two-class runs).
ArchitectureSpec resolved_spec(const StageConfig& config, const Datasets& datasets);

/// Stage (a)/(b) outputs, shared by every wiring of an ablation.
struct Artifacts {
    Checkpoint base;
    std::optional<Checkpoint> source;       // two-class pretrain
    std::optional<Checkpoint> target;       // two-class pretrain
    std::optional<Checkpoint> conditional;  // multi-class pretrain
    std::optional<Checkpoint> selfinit_1to2;
    std::optional<Checkpoint> selfinit_2to1;
    std::optional<Checkpoint> selfinit_conditional;
    std::optional<Checkpoint> selfinit_base;  // adaptor aligned on the base pair
};

/// Which wirings the artifacts must serve.
struct ArtifactNeeds {
    bool pretrain = true;
    bool selfinit = true;
    bool selfinit_base = false;
};

/// Seed of one stage of a run, derived from the run seed.
uint64_t stage_seed(uint64_t seed, uint64_t salt);

/// Loss logs keyed by stage name ("base", "source", "target", "conditional").
using LossLogs = std::map<std::string, std::vector<pretrain::LossRecord>>;

Artifacts train_base(const Datasets& datasets, const StageConfig& config, uint64_t seed, LossLogs* logs = nullptr);
void train_pretrain(Artifacts& artifacts, const Datasets& datasets, const StageConfig& config, uint64_t seed,
                    LossLogs* logs = nullptr);
/// Returns the stage results keyed by "1to2", "2to1", "conditional" or "base".
std::map<std::string, selfinit::SelfInitResult> train_selfinit(Artifacts& artifacts, const StageConfig& config,
                                                               uint64_t seed, bool on_base);
Artifacts prepare_artifacts(const Datasets& datasets, const StageConfig& config, uint64_t seed,
                            const ArtifactNeeds& needs);

/// Random adaptor for the self-init stage (seeded, independent of the other networks).
nets::Adaptor fresh_adaptor(const ArchitectureSpec& spec, bool conditional, uint64_t seed);

/// Initialization-grid rows.
enum class Wiring { both, source_target_only, self_init_only, scratch };
std::string to_string(Wiring wiring);
Wiring wiring_from_flags(bool source_target_init, bool self_init);
StageConfig with_wiring(StageConfig config, Wiring wiring);

std::vector<i2i::DirectionInit> direction_inits(const Artifacts& artifacts, const StageConfig& config);
std::vector<i2i::DirectionData> direction_data(const Datasets& datasets, const StageConfig& config);
/// Label sampler for conditional systems, otherwise nullopt.
std::optional<pretrain::LabelSampler> label_sampler(const Datasets& datasets, const StageConfig& config);

struct TrainedSystem {
    i2i::I2ISystem system;
    i2i::StageResult stage;
};

TrainedSystem train_i2i(const Artifacts& artifacts, const Datasets& datasets, const StageConfig& config,
                        uint64_t seed, const std::function<void(i2i::I2ISystem&)>& after_step = {});

/// Feature extractor over the translation classes plus the base classes.
Classifier make_extractor(const Datasets& datasets, const StageConfig& config, uint64_t seed);

struct Translations {
    std::vector<metrics::ClassInput> classes;  // embedded real test images vs translations, per output class
    data::Batch fakes;                        // every translation, labeled with its output class
};

/// Translates the test split: two-class runs map each domain's test images to the other
/// domain; conditional runs map every test image to every other class.
Translations translate_test_set(i2i::I2ISystem& system, const Datasets& datasets, const Classifier& extractor,
                                uint64_t seed);

metrics::MetricReport evaluate(i2i::I2ISystem& system, const Datasets& datasets, const Classifier& extractor,
                               const StageConfig& config, uint64_t seed, bool with_rc_fc);

// ---------------------------------------------------------------------------
// Ablations

struct AblationRow {
    std::string label;  // wiring name or "k=<n>"
    bool source_target_init = false;
    bool self_init = false;
    int64_t shared_resblocks = 0;
    uint64_t seed = 0;
    double mfid = 0;
    double mkid = 0;
    double seconds = 0;  // training plus evaluation
};

struct WeightFluctuationResult {
    uint64_t seed = 0;
    std::vector<double> with_aux;
    std::vector<double> without_aux;
};

struct AblationOptions {
    std::vector<uint64_t> seeds{0};
    bool init_grid = true;
    bool sharing_sweep = true;
    bool weight_fluctuation = true;
    std::vector<int64_t> k_values{1, 2, 3, 4};
    std::filesystem::path out_dir;  // empty: write nothing
};

struct AblationResult {
    std::vector<AblationRow> init_grid;
    std::vector<AblationRow> sharing_sweep;
    std::vector<WeightFluctuationResult> wf;
    double wf_probe_seconds = 0;  // Fisher estimation plus WF, all seeds
};

/// Per seed: shared stage (a)/(b) artifacts, then every requested I2I run, all
/// evaluated with one extractor.
AblationResult run_ablation(const StageConfig& config, const AblationOptions& options);

/// Per-ResBlock WF of the main generators (summed over directions) between two i2i checkpoints,
/// with the Fisher estimated at `before`.
std::vector<double> system_weight_fluctuation(const Checkpoint& before, const Checkpoint& after,
                                              const StageConfig& config, uint64_t seed);

}  // namespace transferi2i::pipeline
