#include "transferi2i/arch.hpp"

#include <algorithm>
#include <string>

#include "transferi2i/errors.hpp"

namespace transferi2i {

void ArchitectureSpec::validate() const {
    auto fail = [](const std::string& msg) { throw ConfigError("invalid architecture: " + msg); };
    if (num_resblocks < 1) fail("num_resblocks must be >= 1");
    if (channels_base < 1) fail("channels_base must be >= 1");
    if (latent_dim < 1) fail("latent_dim must be >= 1");
    if (num_classes < 1) fail("num_classes must be >= 1");
    if (class_embedding_dim < 1) fail("class_embedding_dim must be >= 1");
    if (image_size < (int64_t{1} << num_resblocks) || image_size % (int64_t{1} << num_resblocks) != 0) {
        fail("image_size (" + std::to_string(image_size) + ") must equal 2^num_resblocks (" +
             std::to_string(int64_t{1} << num_resblocks) + ") times the initial generator size");
    }
    if (pyramid_levels.empty()) fail("pyramid_levels must not be empty");
    for (size_t i = 0; i < pyramid_levels.size(); ++i) {
        const auto l = pyramid_levels[i];
        if (l < 0 || l >= num_resblocks) {
            fail("pyramid level " + std::to_string(l) + " outside [0, num_resblocks)");
        }
        if (i > 0 && pyramid_levels[i - 1] >= l) fail("pyramid_levels must be strictly increasing");
    }
}

int64_t ArchitectureSpec::generator_channels(int64_t level) const {
    const int64_t depth = std::max<int64_t>(num_resblocks - 1 - level, 0);
    return channels_base << std::min<int64_t>(depth, 2);
}

int64_t ArchitectureSpec::discriminator_channels(int64_t block) const {
    return channels_base << std::min<int64_t>(block, 2);
}

std::vector<double> ArchitectureSpec::default_injection_weights() const {
    std::vector<double> w(pyramid_levels.size(), 1.0);
    auto it = std::find_if(pyramid_levels.begin(), pyramid_levels.end(),
                           [&](int64_t l) { return level_resolution(l) == 32; });
    const size_t damped = it != pyramid_levels.end()
                              ? static_cast<size_t>(it - pyramid_levels.begin())
                              : pyramid_levels.size() - 1;
    w[damped] = 0.1;
    return w;
}

void to_json(nlohmann::json& j, const ArchitectureSpec& s) {
    j = nlohmann::json{{"image_size", s.image_size},
                       {"channels_base", s.channels_base},
                       {"num_resblocks", s.num_resblocks},
                       {"latent_dim", s.latent_dim},
                       {"num_classes", s.num_classes},
                       {"class_embedding_dim", s.class_embedding_dim},
                       {"pyramid_levels", s.pyramid_levels}};
}

void from_json(const nlohmann::json& j, ArchitectureSpec& s) {
    j.at("image_size").get_to(s.image_size);
    j.at("channels_base").get_to(s.channels_base);
    j.at("num_resblocks").get_to(s.num_resblocks);
    j.at("latent_dim").get_to(s.latent_dim);
    j.at("num_classes").get_to(s.num_classes);
    j.at("class_embedding_dim").get_to(s.class_embedding_dim);
    j.at("pyramid_levels").get_to(s.pyramid_levels);
}

}  // namespace transferi2i
