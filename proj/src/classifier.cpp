#include "transferi2i/classifier.hpp"

#include "transferi2i/checkpoint.hpp"
#include "transferi2i/errors.hpp"
#include "transferi2i/optim.hpp"
#include "transferi2i/rng.hpp"

namespace transferi2i {

namespace F = torch::nn::functional;

namespace {

constexpr int64_t kEvalChunk = 256;

torch::nn::Conv2d conv3(int64_t in, int64_t out) {
    return torch::nn::Conv2d(torch::nn::Conv2dOptions(in, out, 3).padding(1));
}

}  // namespace

ClassifierNetImpl::ClassifierNetImpl(int64_t num_classes) : num_classes_(num_classes) {
    conv1_ = register_module("conv1", conv3(3, 16));
    conv2_ = register_module("conv2", conv3(16, 32));
    conv3_ = register_module("conv3", conv3(32, 64));
    embed_ = register_module("embed", torch::nn::Linear(64 * 2 * 2, kEmbeddingDim));
    head_ = register_module("head", torch::nn::Linear(kEmbeddingDim, num_classes));
}

torch::Tensor ClassifierNetImpl::embed(const torch::Tensor& x) {
    auto h = F::max_pool2d(torch::relu(conv1_(x)), F::MaxPool2dFuncOptions(2));
    h = F::max_pool2d(torch::relu(conv2_(h)), F::MaxPool2dFuncOptions(2));
    h = torch::relu(conv3_(h));
    h = F::adaptive_avg_pool2d(h, F::AdaptiveAvgPool2dFuncOptions({2, 2}));
    return embed_(h.flatten(1));
}

torch::Tensor ClassifierNetImpl::forward(const torch::Tensor& x) { return head_(torch::relu(embed(x))); }

Classifier Classifier::train(const torch::Tensor& images, const torch::Tensor& labels, int64_t num_classes,
                             const ClassifierOptions& options, uint64_t seed) {
    if (num_classes < 2) throw DataError("classifier: need at least two classes");
    if (images.size(0) != labels.size(0) || images.size(0) == 0) {
        throw DataError("classifier: images and labels must be non-empty and of equal length");
    }
    if (labels.min().item<int64_t>() < 0 || labels.max().item<int64_t>() >= num_classes) {
        throw DataError("classifier: label outside [0, " + std::to_string(num_classes) + ")");
    }
    torch::manual_seed(seed);
    ClassifierNet net(num_classes);
    Adam opt({{"C", net.get()}}, {options.lr, 0.9, 0.999});
    const auto n = images.size(0);
    for (int64_t step = 0; step < options.steps; ++step) {
        auto gen = step_generator(seed, Stream::batch_source, step);
        auto idx = torch::randint(n, {options.batch_size}, gen, torch::kLong);
        opt.zero_grad();
        auto loss = F::cross_entropy(net->forward(images.index_select(0, idx)), labels.index_select(0, idx));
        if (!torch::isfinite(loss).item<bool>()) {
            throw NumericalError("classifier: training diverged at step " + std::to_string(step));
        }
        loss.backward();
        opt.step();
    }
    net->eval();
    return Classifier(net);
}

torch::Tensor Classifier::predict(const torch::Tensor& images) const {
    torch::NoGradGuard no_grad;
    std::vector<torch::Tensor> out;
    for (int64_t i = 0; i < images.size(0); i += kEvalChunk) {
        out.push_back(net_->forward(images.slice(0, i, std::min(i + kEvalChunk, images.size(0)))).argmax(1));
    }
    return torch::cat(out);
}

double Classifier::accuracy(const torch::Tensor& images, const torch::Tensor& labels) const {
    if (images.size(0) == 0) throw DataError("classifier: empty evaluation set");
    return predict(images).eq(labels).to(torch::kDouble).mean().item<double>();
}

Eigen::MatrixXd Classifier::embed(const torch::Tensor& images) const {
    torch::NoGradGuard no_grad;
    std::vector<torch::Tensor> chunks;
    for (int64_t i = 0; i < images.size(0); i += kEvalChunk) {
        chunks.push_back(net_->embed(images.slice(0, i, std::min(i + kEvalChunk, images.size(0)))));
    }
    auto f = torch::cat(chunks).to(torch::kDouble).contiguous();
    Eigen::MatrixXd m(f.size(0), f.size(1));
    auto acc = f.accessor<double, 2>();
    for (int64_t r = 0; r < f.size(0); ++r)
        for (int64_t c = 0; c < f.size(1); ++c) m(r, c) = acc[r][c];
    return m;
}

std::string Classifier::hash() const { return parameter_hash(*net_); }

}  // namespace transferi2i
