#include "transferi2i/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include <openssl/evp.h>

#include "transferi2i/errors.hpp"

namespace transferi2i {

static_assert(std::endian::native == std::endian::little, "checkpoint format assumes a little-endian host");

namespace {

constexpr char kMagic[8] = {'T', 'I', '2', 'I', 'C', 'K', 'P', 'T'};
constexpr uint32_t kVersion = 1;

uint8_t dtype_code(torch::ScalarType t) {
    switch (t) {
        case torch::kFloat: return 0;
        case torch::kDouble: return 1;
        case torch::kLong: return 2;
        case torch::kByte: return 3;
        default: throw CheckpointError(std::string("unsupported tensor dtype ") + c10::toString(t));
    }
}

torch::ScalarType dtype_from_code(uint8_t code) {
    switch (code) {
        case 0: return torch::kFloat;
        case 1: return torch::kDouble;
        case 2: return torch::kLong;
        case 3: return torch::kByte;
        default: throw CheckpointError("corrupt checkpoint: unknown dtype code " + std::to_string(code));
    }
}

template <typename T>
void put(std::string& out, T value) {
    char buf[sizeof(T)];
    std::memcpy(buf, &value, sizeof(T));
    out.append(buf, sizeof(T));
}

class Reader {
public:
    explicit Reader(const std::string& bytes) : bytes_(bytes) {}

    template <typename T>
    T get() {
        T value;
        std::memcpy(&value, take(sizeof(T)), sizeof(T));
        return value;
    }

    std::string str(size_t n) { return std::string(take(n), n); }

    const char* take(size_t n) {
        if (pos_ + n > bytes_.size()) throw CheckpointError("corrupt checkpoint: truncated");
        const char* p = bytes_.data() + pos_;
        pos_ += n;
        return p;
    }

    bool done() const { return pos_ == bytes_.size(); }

private:
    const std::string& bytes_;
    size_t pos_ = 0;
};

}  // namespace

std::string to_string(Stage stage) {
    switch (stage) {
        case Stage::base: return "base";
        case Stage::pretrain: return "pretrain";
        case Stage::selfinit: return "selfinit";
        case Stage::i2i: return "i2i";
    }
    return "unknown";
}

Stage stage_from_string(const std::string& s) {
    if (s == "base") return Stage::base;
    if (s == "pretrain") return Stage::pretrain;
    if (s == "selfinit") return Stage::selfinit;
    if (s == "i2i") return Stage::i2i;
    throw CheckpointError("unknown stage tag '" + s + "'");
}

std::string Checkpoint::serialize() const {
    nlohmann::json meta{{"stage", to_string(stage)},
                        {"step", step},
                        {"seed", seed},
                        {"spec", spec},
                        {"conditional", conditional},
                        {"sharing",
                         {{"num_shared_resblocks", sharing.num_shared_resblocks},
                          {"shared_param_names", sharing.shared_param_names}}},
                        {"extra", extra}};
    const std::string meta_text = meta.dump();

    std::string out(kMagic, sizeof(kMagic));
    put<uint32_t>(out, kVersion);
    put<uint64_t>(out, meta_text.size());
    out += meta_text;
    put<uint64_t>(out, tensors.size());
    for (const auto& [name, tensor] : tensors) {
        auto t = tensor.detach().to(torch::kCPU).contiguous();
        put<uint32_t>(out, static_cast<uint32_t>(name.size()));
        out += name;
        put<uint8_t>(out, dtype_code(t.scalar_type()));
        put<uint32_t>(out, static_cast<uint32_t>(t.dim()));
        for (auto d : t.sizes()) put<int64_t>(out, d);
        const auto nbytes = static_cast<uint64_t>(t.numel() * t.element_size());
        put<uint64_t>(out, nbytes);
        out.append(static_cast<const char*>(t.data_ptr()), nbytes);
    }
    return out;
}

Checkpoint Checkpoint::deserialize(const std::string& bytes) {
    Reader r(bytes);
    if (std::memcmp(r.take(sizeof(kMagic)), kMagic, sizeof(kMagic)) != 0) {
        throw CheckpointError("not a checkpoint file (bad magic)");
    }
    if (auto v = r.get<uint32_t>(); v != kVersion) {
        throw CheckpointError("unsupported checkpoint version " + std::to_string(v));
    }
    Checkpoint ck;
    const auto meta = nlohmann::json::parse(r.str(r.get<uint64_t>()));
    ck.stage = stage_from_string(meta.at("stage").get<std::string>());
    ck.step = meta.at("step").get<int64_t>();
    ck.seed = meta.at("seed").get<uint64_t>();
    ck.spec = meta.at("spec").get<ArchitectureSpec>();
    ck.conditional = meta.at("conditional").get<bool>();
    ck.sharing.num_shared_resblocks = meta.at("sharing").at("num_shared_resblocks").get<int64_t>();
    ck.sharing.shared_param_names = meta.at("sharing").at("shared_param_names").get<std::set<std::string>>();
    ck.extra = meta.at("extra");

    const auto count = r.get<uint64_t>();
    for (uint64_t i = 0; i < count; ++i) {
        auto name = r.str(r.get<uint32_t>());
        const auto dtype = dtype_from_code(r.get<uint8_t>());
        std::vector<int64_t> dims(r.get<uint32_t>());
        for (auto& d : dims) d = r.get<int64_t>();
        const auto nbytes = r.get<uint64_t>();
        auto t = torch::empty(dims, torch::TensorOptions().dtype(dtype));
        if (static_cast<uint64_t>(t.numel() * t.element_size()) != nbytes) {
            throw CheckpointError("corrupt checkpoint: size mismatch for '" + name + "'");
        }
        std::memcpy(t.data_ptr(), r.take(nbytes), nbytes);
        ck.tensors.emplace(std::move(name), std::move(t));
    }
    if (!r.done()) throw CheckpointError("corrupt checkpoint: trailing bytes");
    return ck;
}

void Checkpoint::save(const std::filesystem::path& path) const {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw CheckpointError("cannot open '" + path.string() + "' for writing");
    const auto bytes = serialize();
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw CheckpointError("write failed for '" + path.string() + "'");
}

Checkpoint Checkpoint::load(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw CheckpointError("missing checkpoint '" + path.string() + "'");
    std::ostringstream ss;
    ss << f.rdbuf();
    return deserialize(ss.str());
}

bool Checkpoint::has_prefix(const std::string& prefix) const {
    auto it = tensors.lower_bound(prefix + ".");
    return it != tensors.end() && it->first.rfind(prefix + ".", 0) == 0;
}

void store_module(Checkpoint& ckpt, const std::string& prefix, const torch::nn::Module& m) {
    for (const auto& p : m.named_parameters()) {
        ckpt.tensors[prefix + "." + p.key()] = p.value().detach().clone();
    }
}

void load_module(const Checkpoint& ckpt, const std::string& prefix, torch::nn::Module& m) {
    torch::NoGradGuard no_grad;
    for (auto& p : m.named_parameters()) {
        const auto name = prefix + "." + p.key();
        auto it = ckpt.tensors.find(name);
        if (it == ckpt.tensors.end()) throw CheckpointError("checkpoint has no tensor '" + name + "'");
        if (it->second.sizes() != p.value().sizes()) {
            throw CheckpointError("checkpoint tensor '" + name + "' has incompatible shape");
        }
        p.value().copy_(it->second);
    }
}

void require_stage(const Checkpoint& ckpt, Stage expected, const std::string& what) {
    if (ckpt.stage != expected) {
        throw StageTagError(what + ": expected a '" + to_string(expected) + "' checkpoint, got '" +
                            to_string(ckpt.stage) + "'");
    }
}

std::string sha256_hex(const std::string& bytes) {
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr);
    static constexpr char hex[] = "0123456789abcdef";
    std::string out;
    for (unsigned int i = 0; i < len; ++i) {
        out += hex[digest[i] >> 4];
        out += hex[digest[i] & 0xf];
    }
    return out;
}

std::string parameter_hash(const torch::nn::Module& m) {
    std::string bytes;
    for (const auto& p : m.named_parameters()) {
        auto t = p.value().detach().to(torch::kCPU).contiguous();
        bytes += p.key();
        bytes.append(static_cast<const char*>(t.data_ptr()), t.numel() * t.element_size());
    }
    return sha256_hex(bytes);
}

}  // namespace transferi2i
