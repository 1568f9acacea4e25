#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <vector>

#include <torch/torch.h>

#include "transferi2i/checkpoint.hpp"
#include "transferi2i/config.hpp"
#include "transferi2i/nets.hpp"

namespace transferi2i::selfinit {

/// Sum over levels of the per-level mean absolute difference.
torch::Tensor alignment_loss(const nets::FeaturePyramid& generated, const nets::FeaturePyramid& adapted);

struct AlignmentRecord {
    int64_t step = 0;
    double loss = 0;
};

void write_alignment_csv(const std::filesystem::path& path, const std::vector<AlignmentRecord>& log);

/// Trailing moving average with the given window.
std::vector<double> smoothed(const std::vector<AlignmentRecord>& log, int64_t window);

struct SelfInitResult {
    Checkpoint checkpoint;  // stage=selfinit: "A.", "G.", "D."
    std::vector<AlignmentRecord> log;
    double initial_loss = 0;  // on a fixed probe batch, before the first step
    double final_loss = 0;    // same probe batch, after the last step
};

/// Trains `adaptor` so that A(D(G(z))) matches the generator pyramid of G(z),
/// sampling latents only. G comes from "G." of `g_ckpt`, D from "D." of `d_ckpt`;
/// both stay frozen. Runs inside a DataFreeScope.
SelfInitResult self_initialize_adaptor(const Checkpoint& g_ckpt, const Checkpoint& d_ckpt, nets::Adaptor adaptor,
                                       int64_t steps, const StageConfig& config, uint64_t seed);

/// Data-free stand-in for the real-image reconstructions: each level of A(D(G(z)))
/// is pushed through the rest of the generator on its own and compared with G(z).
struct ProbeResult {
    double pixel_l1 = 0;          // averaged over levels
    std::vector<double> per_level;
    torch::Tensor original;       // (n, 3, H, W)
    torch::Tensor reconstructed;  // (n, 3, H, W) from the lowest-resolution level
};

ProbeResult reconstruction_probe(nets::Generator& g, nets::Discriminator& d, nets::Adaptor& a, int64_t n,
                                 uint64_t seed);

}  // namespace transferi2i::selfinit
