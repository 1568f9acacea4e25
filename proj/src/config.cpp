#include "transferi2i/config.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <functional>
#include <sstream>

#include "transferi2i/errors.hpp"

namespace transferi2i {

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

double to_double(const std::string& key, const std::string& v) {
    try {
        size_t used = 0;
        double d = std::stod(v, &used);
        if (used != v.size()) throw std::invalid_argument(v);
        return d;
    } catch (const std::exception&) {
        throw ConfigError("key '" + key + "': expected a number, got '" + v + "'");
    }
}

int64_t to_int(const std::string& key, const std::string& v) {
    int64_t out = 0;
    auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || p != v.data() + v.size()) {
        throw ConfigError("key '" + key + "': expected an integer, got '" + v + "'");
    }
    return out;
}

uint64_t to_uint(const std::string& key, const std::string& v) {
    uint64_t out = 0;
    auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || p != v.data() + v.size()) {
        throw ConfigError("key '" + key + "': expected a non-negative integer, got '" + v + "'");
    }
    return out;
}

bool to_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
    if (v == "false" || v == "0" || v == "no" || v == "off") return false;
    throw ConfigError("key '" + key + "': expected a boolean, got '" + v + "'");
}

template <typename T, typename Parse>
std::vector<T> to_list(const std::string& key, const std::string& v, Parse parse) {
    std::vector<T> out;
    if (trim(v).empty()) return out;
    std::stringstream ss(v);
    std::string item;
    while (std::getline(ss, item, ',')) out.push_back(parse(key, trim(item)));
    return out;
}

std::string fmt(double d) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", d);
    return buf;
}

template <typename T>
std::string join(const std::vector<T>& v) {
    std::string s;
    for (size_t i = 0; i < v.size(); ++i) {
        if (i) s += ",";
        if constexpr (std::is_floating_point_v<T>) {
            s += fmt(v[i]);
        } else {
            s += std::to_string(v[i]);
        }
    }
    return s;
}

struct Field {
    std::string description;
    std::function<void(StageConfig&, const std::string&, const std::string&)> set;
    std::function<std::string(const StageConfig&)> get;
};

#define DOUBLE_FIELD(name, member, desc)                                                                 \
    {name, Field{desc, [](StageConfig& c, const std::string& k, const std::string& v) { c.member = to_double(k, v); }, \
                 [](const StageConfig& c) { return fmt(c.member); }}}
#define INT_FIELD(name, member, desc)                                                                    \
    {name, Field{desc, [](StageConfig& c, const std::string& k, const std::string& v) { c.member = to_int(k, v); }, \
                 [](const StageConfig& c) { return std::to_string(c.member); }}}
#define UINT_FIELD(name, member, desc)                                                                   \
    {name, Field{desc, [](StageConfig& c, const std::string& k, const std::string& v) { c.member = to_uint(k, v); }, \
                 [](const StageConfig& c) { return std::to_string(c.member); }}}
#define BOOL_FIELD(name, member, desc)                                                                   \
    {name, Field{desc, [](StageConfig& c, const std::string& k, const std::string& v) { c.member = to_bool(k, v); }, \
                 [](const StageConfig& c) { return std::string(c.member ? "true" : "false"); }}}
#define STRING_FIELD(name, member, desc)                                                                 \
    {name, Field{desc, [](StageConfig& c, const std::string&, const std::string& v) { c.member = v; },     \
                 [](const StageConfig& c) { return c.member; }}}

const std::map<std::string, Field>& fields() {
    static const std::map<std::string, Field> table{
        STRING_FIELD("optimizer", optimizer, "optimizer name (only 'adam')"),
        DOUBLE_FIELD("lr_g", lr_g, "generator learning rate (G, G_aux)"),
        DOUBLE_FIELD("lr_ad", lr_ad, "adaptor/discriminator learning rate (A, E, D)"),
        DOUBLE_FIELD("beta1", beta1, "Adam beta1"),
        DOUBLE_FIELD("beta2", beta2, "Adam beta2"),
        INT_FIELD("batch_size", batch_size, "batch size for every stage"),
        DOUBLE_FIELD("base_lr_g", base_lr_g, "generator learning rate of the stand-in pretrained GAN"),
        DOUBLE_FIELD("base_lr_d", base_lr_d, "discriminator learning rate of the stand-in pretrained GAN"),
        DOUBLE_FIELD("base_beta1", base_beta1, "Adam beta1 of the stand-in pretrained GAN"),
        DOUBLE_FIELD("base_beta2", base_beta2, "Adam beta2 of the stand-in pretrained GAN"),
        INT_FIELD("image_size", arch.image_size, "image side in pixels"),
        INT_FIELD("channels_base", arch.channels_base, "base channel width"),
        INT_FIELD("num_resblocks", arch.num_resblocks, "ResBlocks per network"),
        INT_FIELD("latent_dim", arch.latent_dim, "latent dimension Z"),
        INT_FIELD("num_classes", arch.num_classes, "classes of the conditional networks (1 = unconditional)"),
        INT_FIELD("class_embedding_dim", arch.class_embedding_dim, "generator class-embedding width"),
        {"pyramid_levels",
         Field{"comma-separated pyramid levels",
               [](StageConfig& c, const std::string& k, const std::string& v) {
                   c.arch.pyramid_levels = to_list<int64_t>(k, v, to_int);
               },
               [](const StageConfig& c) { return join(c.arch.pyramid_levels); }}},
        BOOL_FIELD("conditional", conditional, "multi-class conditional pipeline"),
        INT_FIELD("steps_base", steps_base, "training steps of the stand-in pretrained GAN"),
        INT_FIELD("steps_pretrain", steps_pretrain, "source-target finetuning steps"),
        INT_FIELD("steps_selfinit", steps_selfinit, "adaptor self-initialization steps"),
        INT_FIELD("steps_i2i", steps_i2i, "translation training steps"),
        DOUBLE_FIELD("lambda_aux", lambda_aux, "auxiliary-generator adversarial weight"),
        DOUBLE_FIELD("lambda_rec", lambda_rec, "reconstruction loss weight"),
        DOUBLE_FIELD("r1_gamma", r1_gamma, "R1 penalty weight on real images (0 disables)"),
        INT_FIELD("r1_every", r1_every, "discriminator steps between R1 evaluations"),
        {"alpha",
         Field{"comma-separated per-level reconstruction weights (empty = all 1)",
               [](StageConfig& c, const std::string& k, const std::string& v) {
                   c.alpha = to_list<double>(k, v, to_double);
               },
               [](const StageConfig& c) { return join(c.alpha); }}},
        {"w",
         Field{"comma-separated per-level injection weights (empty = architecture default)",
               [](StageConfig& c, const std::string& k, const std::string& v) { c.w = to_list<double>(k, v, to_double); },
               [](const StageConfig& c) { return join(c.w); }}},
        INT_FIELD("shared_resblocks", shared_resblocks, "ResBlocks shared with the auxiliary generator"),
        BOOL_FIELD("aux_generator", aux_generator, "train with the auxiliary generator"),
        BOOL_FIELD("source_target_init", source_target_init, "initialize G/D/E from finetuned GANs"),
        BOOL_FIELD("self_init", self_init, "initialize the adaptor from self-initialization"),
        UINT_FIELD("seed", seed, "run seed"),
        STRING_FIELD("data_root", data_root, "folder-per-class corpus (empty = synthetic shapes)"),
        STRING_FIELD("base_data_root", base_data_root, "corpus of the stand-in pretrained GAN (empty = synthetic)"),
        INT_FIELD("source_class", source_class, "source domain label (two-class)"),
        INT_FIELD("target_class", target_class, "target domain label (two-class)"),
        DOUBLE_FIELD("split_fraction", split_fraction, "train fraction per class"),
        INT_FIELD("test_per_class", test_per_class, "fixed test images per class (-1 = use split_fraction)"),
        INT_FIELD("synthetic_classes", synthetic_classes, "classes of the synthetic translation corpus"),
        INT_FIELD("synthetic_per_class", synthetic_per_class, "training images per class (synthetic)"),
        INT_FIELD("synthetic_test_per_class", synthetic_test_per_class, "held-out images per class (synthetic)"),
        INT_FIELD("base_synthetic_classes", base_synthetic_classes, "extra classes of the synthetic base corpus"),
        INT_FIELD("base_synthetic_per_class", base_synthetic_per_class, "images per class of the synthetic base corpus"),
        UINT_FIELD("data_seed", data_seed, "seed of the synthetic corpora and splits"),
        INT_FIELD("eval_every", eval_every, "steps between metric snapshots during translation training (0 = off)"),
        INT_FIELD("fisher_batches", fisher_batches, "batches for the diagonal Fisher estimate"),
        INT_FIELD("kid_subsets", kid_subsets, "KID subsets"),
        INT_FIELD("kid_subset_size", kid_subset_size, "KID subset size cap"),
        INT_FIELD("extractor_steps", extractor_steps, "training steps of the metric feature extractor"),
        INT_FIELD("classifier_steps", classifier_steps, "training steps of the RC/FC classifiers"),
        INT_FIELD("log_every", log_every, "steps between progress lines"),
    };
    return table;
}

#undef DOUBLE_FIELD
#undef INT_FIELD
#undef UINT_FIELD
#undef BOOL_FIELD
#undef STRING_FIELD

std::pair<std::string, std::string> split_pair(const std::string& line, const std::string& where) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(where + ": expected 'key = value', got '" + line + "'");
    return {trim(line.substr(0, eq)), trim(line.substr(eq + 1))};
}

}  // namespace

StageConfig StageConfig::defaults(bool conditional) {
    StageConfig c;
    c.conditional = conditional;
    if (conditional) {
        c.lr_g = 5e-5;
        c.lr_ad = 2e-4;
        c.beta1 = 0.0;
        c.beta2 = 0.999;
    } else {
        c.lr_g = 1e-5;
        c.lr_ad = 1e-3;
        c.beta1 = 0.0;
        c.beta2 = 0.99;
    }
    c.batch_size = 16;
    return c;
}

std::vector<double> StageConfig::alpha_or_default() const {
    return alpha.empty() ? std::vector<double>(arch.pyramid_levels.size(), 1.0) : alpha;
}

std::vector<double> StageConfig::w_or_default() const { return w.empty() ? arch.default_injection_weights() : w; }

void StageConfig::validate() const {
    arch.validate();
    if (optimizer != "adam") throw ConfigError("unsupported optimizer '" + optimizer + "'");
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (!alpha.empty() && alpha.size() != arch.pyramid_levels.size()) {
        throw ConfigError("alpha needs one weight per pyramid level");
    }
    if (!w.empty() && w.size() != arch.pyramid_levels.size()) {
        throw ConfigError("w needs one weight per pyramid level");
    }
    if (shared_resblocks < 0 || shared_resblocks > arch.num_resblocks) {
        throw ConfigError("shared_resblocks must be in [0, num_resblocks]");
    }
    if (lambda_aux < 0 || lambda_rec < 0) throw ConfigError("loss weights must be non-negative");
    if (r1_gamma < 0) throw ConfigError("r1_gamma must be non-negative");
    if (r1_every < 1) throw ConfigError("r1_every must be >= 1");
    for (auto s : {steps_base, steps_pretrain, steps_selfinit, steps_i2i}) {
        if (s < 0) throw ConfigError("step counts must be non-negative");
    }
    if (conditional && arch.num_classes < 1) throw ConfigError("conditional pipeline needs num_classes >= 1");
    if (!conditional && source_class == target_class) throw ConfigError("source_class equals target_class");
}

nlohmann::json StageConfig::to_json() const {
    nlohmann::json j = nlohmann::json::object();
    for (const auto& [key, field] : fields()) j[key] = field.get(*this);
    return j;
}

std::string StageConfig::to_text() const {
    std::string out;
    for (const auto& [key, field] : fields()) out += key + " = " + field.get(*this) + "\n";
    return out;
}

const std::map<std::string, std::string>& config_keys() {
    static const std::map<std::string, std::string> keys = [] {
        std::map<std::string, std::string> m;
        for (const auto& [k, f] : fields()) m.emplace(k, f.description);
        return m;
    }();
    return keys;
}

StageConfig parse_config(const std::string& text, const std::vector<std::string>& overrides) {
    std::vector<std::pair<std::string, std::string>> pairs;
    std::stringstream ss(text);
    std::string line;
    int lineno = 0;
    while (std::getline(ss, line)) {
        ++lineno;
        if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
        if (trim(line).empty()) continue;
        pairs.push_back(split_pair(line, "config line " + std::to_string(lineno)));
    }
    for (const auto& o : overrides) pairs.push_back(split_pair(o, "override"));

    bool conditional = false;
    for (const auto& [k, v] : pairs) {
        if (k == "conditional") conditional = to_bool(k, v);
    }
    StageConfig cfg = StageConfig::defaults(conditional);
    const auto& table = fields();
    for (const auto& [k, v] : pairs) {
        auto it = table.find(k);
        if (it == table.end()) throw ConfigError("unknown config key '" + k + "'");
        it->second.set(cfg, k, v);
    }
    cfg.validate();
    return cfg;
}

StageConfig load_config(const std::filesystem::path& path, const std::vector<std::string>& overrides) {
    std::ifstream f(path);
    if (!f) throw ConfigError("cannot read config '" + path.string() + "'");
    std::stringstream ss;
    ss << f.rdbuf();
    return parse_config(ss.str(), overrides);
}

}  // namespace transferi2i
