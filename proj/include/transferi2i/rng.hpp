#pragma once

#include <cstdint>

#include <ATen/CPUGeneratorImpl.h>
#include <torch/torch.h>

namespace transferi2i {

/// Independent random streams used by the training loops.
enum class Stream : uint64_t {
    batch_source = 1,
    batch_target = 2,
    latent = 3,
    labels = 4,
    probe = 5,
    subset = 6,
    shuffle = 7,
    render = 8,
};

inline uint64_t splitmix64(uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

inline uint64_t derive_seed(uint64_t seed, Stream stream, int64_t step) {
    return splitmix64(splitmix64(splitmix64(seed) ^ static_cast<uint64_t>(stream)) ^ static_cast<uint64_t>(step));
}

/// A generator whose state depends only on (seed, stream, step), so a run
/// resumed from a checkpoint at step s draws exactly what an uninterrupted run draws.
inline torch::Generator step_generator(uint64_t seed, Stream stream, int64_t step) {
    return at::make_generator<at::CPUGeneratorImpl>(derive_seed(seed, stream, step));
}

}  // namespace transferi2i
