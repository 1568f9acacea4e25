#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "transferi2i/checkpoint.hpp"
#include "transferi2i/nets.hpp"

namespace transferi2i::fisher {

/// Diagonal Fisher keyed by generator parameter name ("rb0.conv1.weight", ...).
using DiagonalFisher = std::map<std::string, torch::Tensor>;

/// Mean over `batches` of the squared gradient of log D(G(z)) with respect to G's parameters.
DiagonalFisher estimate_generator_fisher(nets::Generator& g, nets::Discriminator& d, int64_t batches,
                                         int64_t batch_size, uint64_t seed);

/// delta^T diag(fisher) delta.
double quadratic_form(const torch::Tensor& delta, const torch::Tensor& fisher);

/// One value per generator ResBlock (index 0 is nearest the latent input):
/// sum over the block's parameters of fisher * (theta_before - theta_after)^2.
/// Parameters are read as "<prefix>.<name>" from both checkpoints.
std::vector<double> weight_fluctuation(const Checkpoint& before, const Checkpoint& after, const std::string& prefix,
                                       const DiagonalFisher& fisher, int64_t num_resblocks);

struct WeightFluctuationRow {
    int64_t resblock = 0;
    double with_aux = 0;
    double without_aux = 0;
};

void write_wf_table(const std::filesystem::path& path, const std::vector<WeightFluctuationRow>& rows);
void write_wf_plot(const std::filesystem::path& path, const std::vector<WeightFluctuationRow>& rows);

}  // namespace transferi2i::fisher
