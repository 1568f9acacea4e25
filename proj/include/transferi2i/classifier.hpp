#pragma once

#include <cstdint>
#include <string>

#include <Eigen/Dense>
#include <torch/torch.h>

namespace transferi2i {

constexpr int64_t kEmbeddingDim = 64;

/// Small convnet: three conv stages, a 64-d embedding layer and a linear head.
class ClassifierNetImpl : public torch::nn::Module {
public:
    explicit ClassifierNetImpl(int64_t num_classes);

    torch::Tensor forward(const torch::Tensor& x);
    /// Output of the embedding layer (before its activation).
    torch::Tensor embed(const torch::Tensor& x);

    int64_t num_classes() const { return num_classes_; }

private:
    int64_t num_classes_;
    torch::nn::Conv2d conv1_{nullptr}, conv2_{nullptr}, conv3_{nullptr};
    torch::nn::Linear embed_{nullptr}, head_{nullptr};
};
TORCH_MODULE(ClassifierNet);

struct ClassifierOptions {
    int64_t steps = 400;
    int64_t batch_size = 32;
    double lr = 1e-3;
};

/// Trained classifier; used both as the feature extractor and for RC/FC.
class Classifier {
public:
    /// images: (N,3,H,W) in [-1,1]; labels: (N,) int64 in [0, num_classes).
    static Classifier train(const torch::Tensor& images, const torch::Tensor& labels, int64_t num_classes,
                            const ClassifierOptions& options, uint64_t seed);

    double accuracy(const torch::Tensor& images, const torch::Tensor& labels) const;
    torch::Tensor predict(const torch::Tensor& images) const;
    /// (N, 64) embedding as a double matrix.
    Eigen::MatrixXd embed(const torch::Tensor& images) const;

    /// SHA-256 of the parameters.
    std::string hash() const;
    int64_t num_classes() const { return net_->num_classes(); }
    ClassifierNet& net() { return net_; }

private:
    explicit Classifier(ClassifierNet net) : net_(std::move(net)) {}
    mutable ClassifierNet net_;
};

}  // namespace transferi2i
