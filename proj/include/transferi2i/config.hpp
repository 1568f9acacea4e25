#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "transferi2i/arch.hpp"
#include "transferi2i/optim.hpp"

namespace transferi2i {

/// Every scalar the stages read. Built from a flat `key = value` file plus
/// command-line overrides; see `config_keys()` for the schema.
struct StageConfig {
    // optimizer (learning-rate defaults depend on `conditional`, see defaults())
    std::string optimizer = "adam";
    double lr_g = 1e-5;
    double lr_ad = 1e-3;
    double beta1 = 0.0;
    double beta2 = 0.99;
    int64_t batch_size = 16;

    // stand-in for the pretrained GAN
    double base_lr_g = 2e-4;
    double base_lr_d = 2e-4;
    double base_beta1 = 0.0;
    double base_beta2 = 0.99;

    ArchitectureSpec arch;
    bool conditional = false;

    int64_t steps_base = 2000;
    int64_t steps_pretrain = 500;
    int64_t steps_selfinit = 1000;
    int64_t steps_i2i = 1000;

    double lambda_aux = 0.01;
    double lambda_rec = 1.0;
    // R1 penalty on real images, applied to every discriminator update (lazily, every r1_every steps)
    double r1_gamma = 1.0;
    int64_t r1_every = 4;
    std::vector<double> alpha;  // empty -> 1 per level
    std::vector<double> w;      // empty -> arch default injection weights
    int64_t shared_resblocks = 4;
    bool aux_generator = true;
    bool source_target_init = true;
    bool self_init = true;

    uint64_t seed = 0;

    // data
    std::string data_root;       // folder-per-class; empty -> synthetic corpus
    std::string base_data_root;  // corpus for the stand-in pretrained GAN; empty -> synthetic
    int64_t source_class = 0;
    int64_t target_class = 1;
    double split_fraction = 0.9;
    int64_t test_per_class = -1;  // >= 0 overrides split_fraction
    int64_t synthetic_classes = 2;
    int64_t synthetic_per_class = 100;
    int64_t synthetic_test_per_class = 100;
    int64_t base_synthetic_classes = 6;
    int64_t base_synthetic_per_class = 200;
    uint64_t data_seed = 7;

    // evaluation
    int64_t eval_every = 0;  // 0 -> only the final report
    int64_t fisher_batches = 256;
    int64_t kid_subsets = 10;
    int64_t kid_subset_size = 100;
    int64_t extractor_steps = 600;
    int64_t classifier_steps = 400;
    int64_t log_every = 50;

    /// Defaults for the two-class or the multi-class setting.
    static StageConfig defaults(bool conditional);

    std::vector<double> alpha_or_default() const;
    std::vector<double> w_or_default() const;

    AdamOptions generator_adam() const { return {lr_g, beta1, beta2}; }
    AdamOptions adaptor_discriminator_adam() const { return {lr_ad, beta1, beta2}; }

    /// Throws ConfigError on inconsistent values.
    void validate() const;

    nlohmann::json to_json() const;
    /// Flat `key = value` rendering that parse_config() reads back unchanged.
    std::string to_text() const;
};

/// Documented keys with a one-line description each.
const std::map<std::string, std::string>& config_keys();

/// Parses `key = value` lines ('#' starts a comment) and then applies
/// `overrides` ("key=value"), which win. Unknown keys are errors.
StageConfig parse_config(const std::string& text, const std::vector<std::string>& overrides = {});
StageConfig load_config(const std::filesystem::path& path, const std::vector<std::string>& overrides = {});

}  // namespace transferi2i
