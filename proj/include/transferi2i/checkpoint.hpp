#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>

#include <nlohmann/json.hpp>
#include <torch/torch.h>

#include "transferi2i/arch.hpp"
#include "transferi2i/nets.hpp"

namespace transferi2i {

enum class Stage { base, pretrain, selfinit, i2i };

std::string to_string(Stage stage);
Stage stage_from_string(const std::string& s);

/// Named tensors plus a metadata record; the hand-off unit between stages.
///
/// File layout (all integers little-endian):
///   "TI2ICKPT" | u32 version | u64 len | metadata JSON | u64 count |
///   count x { u32 len | name | u8 dtype | u32 ndim | i64 dims... | u64 nbytes | raw }
/// Tensors are written in name order, so save -> load -> save is byte-identical.
struct Checkpoint {
    Stage stage = Stage::base;
    int64_t step = 0;
    uint64_t seed = 0;
    ArchitectureSpec spec;
    bool conditional = false;
    nets::SharingPlan sharing;
    nlohmann::json extra = nlohmann::json::object();
    std::map<std::string, torch::Tensor> tensors;

    std::string serialize() const;
    static Checkpoint deserialize(const std::string& bytes);

    void save(const std::filesystem::path& path) const;
    static Checkpoint load(const std::filesystem::path& path);

    bool has_prefix(const std::string& prefix) const;
};

/// Stores every parameter of `m` under "<prefix>.<name>" (detached CPU copies).
void store_module(Checkpoint& ckpt, const std::string& prefix, const torch::nn::Module& m);

/// Loads "<prefix>.<name>" into every parameter of `m`; throws CheckpointError on missing names
/// or shape mismatch.
void load_module(const Checkpoint& ckpt, const std::string& prefix, torch::nn::Module& m);

/// Ensures the checkpoint carries the expected stage tag.
void require_stage(const Checkpoint& ckpt, Stage expected, const std::string& what);

/// SHA-256 over the names and raw bytes of every parameter of `m`, hex encoded.
std::string parameter_hash(const torch::nn::Module& m);

std::string sha256_hex(const std::string& bytes);

}  // namespace transferi2i
