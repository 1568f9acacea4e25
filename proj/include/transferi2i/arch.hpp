#pragma once

#include <cstdint>
#include <vector>

#include <nlohmann/json.hpp>

namespace transferi2i {

/// Shape contract shared by every network in the kit.
///
/// The generator starts from an `initial_size()` square and doubles the
/// resolution in each of `num_resblocks` ResBlocks; the discriminator (and the
/// encoder copied from it) halves it in each ResBlock. Pyramid level `l`
/// names the resolution `initial_size() << l`: on the generator side it is the
/// trunk activation entering ResBlock `l`, on the discriminator side it is the
/// output of ResBlock `num_resblocks - 1 - l`.
struct ArchitectureSpec {
    int64_t image_size = 32;
    int64_t channels_base = 64;
    int64_t num_resblocks = 4;
    int64_t latent_dim = 128;
    int64_t num_classes = 1;           // 1 = unconditional
    int64_t class_embedding_dim = 32;  // generator-side embedding width (conditional only)
    std::vector<int64_t> pyramid_levels{0, 1, 2, 3};

    /// Throws ConfigError naming the violated invariant.
    void validate() const;

    int64_t initial_size() const { return image_size >> num_resblocks; }
    int64_t level_resolution(int64_t level) const { return initial_size() << level; }

    /// Channels of the generator trunk entering ResBlock `level` (`level == num_resblocks`
    /// is the output of the last ResBlock).
    int64_t generator_channels(int64_t level) const;
    /// Output channels of discriminator ResBlock `block`.
    int64_t discriminator_channels(int64_t block) const;
    int64_t discriminator_block_for_level(int64_t level) const { return num_resblocks - 1 - level; }
    int64_t level_for_discriminator_block(int64_t block) const { return num_resblocks - 1 - block; }

    /// Injection weights: 1 everywhere except the 32x32 level, or the
    /// highest-resolution level when no level is 32x32, which gets 0.1.
    std::vector<double> default_injection_weights() const;

    bool operator==(const ArchitectureSpec&) const = default;
};

void to_json(nlohmann::json& j, const ArchitectureSpec& spec);
void from_json(const nlohmann::json& j, ArchitectureSpec& spec);

}  // namespace transferi2i
