#pragma once

#include <span>
#include <string>
#include <vector>

#include "muten/network.hpp"

namespace muten {

enum class LossKind { cross_entropy, cw };

std::string to_string(LossKind kind);
LossKind loss_kind_from_string(const std::string& name);

/// Training loss or the logit-margin loss f(x') = max(Z_y - max_{i!=y} Z_i, -kappa).
struct LossSpec {
    LossKind kind = LossKind::cross_entropy;
    float kappa = 0.0f;

    static LossSpec cross_entropy() { return {}; }
    static LossSpec cw(float kappa = 0.0f) { return {LossKind::cw, kappa}; }
};

struct ForwardResult {
    std::vector<float> probs;
    std::vector<float> logits;
    std::vector<float> features;
    std::size_t predicted = 0;
};

struct LossGradient {
    Tensor wrt_input;
    double loss_value = 0.0;
    std::size_t predicted_class = 0;
    std::vector<float> class_probs;
};

struct Prediction {
    std::vector<float> probs;
    std::size_t label = 0;
};

/// Per trainable layer (in trainable_indices() order).
struct ParamGrad {
    FloatBuffer weights;
    FloatBuffer bias;
};
using WeightGradients = std::vector<ParamGrad>;

/// Index of the largest entry; ties go to the lowest index.
std::size_t argmax(std::span<const float> v);

/// softmax(logits / temperature).
std::vector<float> softmax(std::span<const float> logits, double temperature);

ForwardResult forward(const Network& net, const Tensor& x);
ForwardResult forward(const Network& net, std::span<const float> x);

LossGradient input_gradient(const Network& net, const Tensor& x, std::size_t label,
                            const LossSpec& loss = {});

/// Mean cross-entropy gradient over a batch; also returns the mean loss.
WeightGradients weight_gradient(const Network& net, std::span<const Tensor> batch,
                                std::span<const std::size_t> labels, double* mean_loss = nullptr);

/// Batch variant over flat samples, used by training. Uses `temperature`
/// instead of the network's own.
WeightGradients weight_gradient(const Network& net, std::span<const float* const> samples,
                                std::span<const std::size_t> labels, double temperature,
                                double* mean_loss);

WeightGradients zero_gradients(const Network& net);

}  // namespace muten
