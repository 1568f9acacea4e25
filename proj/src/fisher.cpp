#include "transferi2i/fisher.hpp"

#include <fstream>

#include "transferi2i/errors.hpp"
#include "transferi2i/image_io.hpp"
#include "transferi2i/rng.hpp"

namespace transferi2i::fisher {

DiagonalFisher estimate_generator_fisher(nets::Generator& g, nets::Discriminator& d, int64_t batches,
                                         int64_t batch_size, uint64_t seed) {
    if (batches < 1 || batch_size < 1) throw ConfigError("fisher: batches and batch size must be positive");
    nets::FrozenParameters frozen(*d);
    DiagonalFisher fisher;
    auto params = g->named_parameters();
    for (const auto& p : params) fisher[p.key()] = torch::zeros_like(p.value());

    for (int64_t b = 0; b < batches; ++b) {
        auto gen = step_generator(seed, Stream::probe, 1000 + b);
        auto z = torch::randn({batch_size, g->spec().latent_dim}, gen);
        std::optional<torch::Tensor> c;
        if (g->conditional()) c = torch::randint(g->spec().num_classes, {batch_size}, gen, torch::kLong);
        for (auto& p : params) p.value().mutable_grad() = torch::Tensor();
        auto loglik = torch::log_sigmoid(d->forward(g->forward(z, c).image, c).logit).mean();
        loglik.backward();
        torch::NoGradGuard no_grad;
        for (auto& p : params) {
            if (p.value().grad().defined()) fisher[p.key()] += p.value().grad().square();
        }
    }
    for (auto& p : params) p.value().mutable_grad() = torch::Tensor();
    for (auto& [name, f] : fisher) f /= static_cast<double>(batches);
    return fisher;
}

double quadratic_form(const torch::Tensor& delta, const torch::Tensor& fisher) {
    if (delta.sizes() != fisher.sizes()) throw ShapeError("quadratic_form: delta and fisher shapes differ");
    return (fisher.to(torch::kDouble) * delta.to(torch::kDouble).square()).sum().item<double>();
}

std::vector<double> weight_fluctuation(const Checkpoint& before, const Checkpoint& after, const std::string& prefix,
                                       const DiagonalFisher& fisher, int64_t num_resblocks) {
    std::vector<double> wf(static_cast<size_t>(num_resblocks), 0.0);
    for (int64_t i = 0; i < num_resblocks; ++i) {
        const auto block = "rb" + std::to_string(i) + ".";
        bool any = false;
        for (const auto& [name, f] : fisher) {
            if (name.rfind(block, 0) != 0) continue;
            const auto key = prefix + "." + name;
            auto a = before.tensors.find(key);
            auto b = after.tensors.find(key);
            if (a == before.tensors.end() || b == after.tensors.end()) {
                throw CheckpointError("weight_fluctuation: '" + key + "' missing from a checkpoint");
            }
            if (a->second.sizes() != b->second.sizes()) {
                throw CheckpointError("weight_fluctuation: '" + key + "' changed shape");
            }
            if ((f < 0).any().item<bool>()) throw NumericalError("weight_fluctuation: negative Fisher entry");
            wf[static_cast<size_t>(i)] += quadratic_form(a->second - b->second, f);
            any = true;
        }
        if (!any) throw CheckpointError("weight_fluctuation: no Fisher entries for ResBlock " + std::to_string(i));
    }
    return wf;
}

void write_wf_table(const std::filesystem::path& path, const std::vector<WeightFluctuationRow>& rows) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path);
    if (!out) throw DataError("cannot write '" + path.string() + "'");
    out << "resblock,wf_with_aux,wf_without_aux\n";
    out.precision(9);
    for (const auto& r : rows) out << "RB" << r.resblock << "," << r.with_aux << "," << r.without_aux << "\n";
}

void write_wf_plot(const std::filesystem::path& path, const std::vector<WeightFluctuationRow>& rows) {
    std::vector<std::string> labels;
    PlotSeries with{"with auxiliary generator", {}};
    PlotSeries without{"without auxiliary generator", {}};
    for (const auto& r : rows) {
        labels.push_back("RB" + std::to_string(r.resblock));
        with.values.push_back(r.with_aux);
        without.values.push_back(r.without_aux);
    }
    write_line_plot(path, "Weight fluctuation per ResBlock", labels, {with, without});
}

}  // namespace transferi2i::fisher
