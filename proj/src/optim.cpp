#include "transferi2i/optim.hpp"

#include <cmath>
#include <unordered_set>

#include "transferi2i/errors.hpp"

namespace transferi2i {

Adam::Adam(const std::vector<std::pair<std::string, const torch::nn::Module*>>& modules, AdamOptions options)
    : options_(options) {
    std::unordered_set<const void*> seen;
    for (const auto& [prefix, module] : modules) {
        for (const auto& p : module->named_parameters()) {
            if (!seen.insert(p.value().unsafeGetTensorImpl()).second) continue;
            params_.push_back({prefix + "." + p.key(), p.value(), torch::zeros_like(p.value()),
                               torch::zeros_like(p.value())});
        }
    }
}

void Adam::zero_grad() {
    for (auto& s : params_) {
        if (s.param.grad().defined()) s.param.mutable_grad() = torch::Tensor();
    }
}

void Adam::step() {
    torch::NoGradGuard no_grad;
    ++steps_;
    const double bc1 = 1.0 - std::pow(options_.beta1, static_cast<double>(steps_));
    const double bc2 = 1.0 - std::pow(options_.beta2, static_cast<double>(steps_));
    for (auto& s : params_) {
        const auto& g = s.param.grad();
        if (!g.defined()) continue;
        s.exp_avg.mul_(options_.beta1).add_(g, 1.0 - options_.beta1);
        s.exp_avg_sq.mul_(options_.beta2).addcmul_(g, g, 1.0 - options_.beta2);
        auto denom = (s.exp_avg_sq / bc2).sqrt_().add_(options_.eps);
        s.param.addcdiv_(s.exp_avg, denom, -options_.lr / bc1);
    }
}

void Adam::save(Checkpoint& ckpt, const std::string& prefix) const {
    ckpt.tensors[prefix + ".steps"] = torch::tensor({steps_}, torch::kLong);
    for (const auto& s : params_) {
        ckpt.tensors[prefix + ".m." + s.name] = s.exp_avg.clone();
        ckpt.tensors[prefix + ".v." + s.name] = s.exp_avg_sq.clone();
    }
}

void Adam::load(const Checkpoint& ckpt, const std::string& prefix) {
    torch::NoGradGuard no_grad;
    auto it = ckpt.tensors.find(prefix + ".steps");
    if (it == ckpt.tensors.end()) throw CheckpointError("checkpoint has no optimizer state '" + prefix + "'");
    steps_ = it->second.item<int64_t>();
    for (auto& s : params_) {
        auto m = ckpt.tensors.find(prefix + ".m." + s.name);
        auto v = ckpt.tensors.find(prefix + ".v." + s.name);
        if (m == ckpt.tensors.end() || v == ckpt.tensors.end()) {
            throw CheckpointError("checkpoint lacks optimizer moments for '" + s.name + "'");
        }
        s.exp_avg.copy_(m->second);
        s.exp_avg_sq.copy_(v->second);
    }
}

}  // namespace transferi2i
