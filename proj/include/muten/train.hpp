#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "muten/dataset.hpp"
#include "muten/engine.hpp"

namespace muten {

enum class OptimizerKind { sgd, adam };

OptimizerKind optimizer_from_string(const std::string& name);

struct TrainConfig {
    std::size_t epochs = 3;
    double learning_rate = 1e-3;
    /// Logits are divided by this during training only; the returned network
    /// runs at temperature 1.
    double temperature = 1.0;
    std::size_t batch_size = 32;
    std::uint64_t seed = 1;
    OptimizerKind optimizer = OptimizerKind::adam;
    double momentum = 0.9;
    /// Called after each epoch with the 1-based epoch number.
    std::function<void(std::size_t epoch, double mean_loss)> on_epoch;
};

struct TrainResult {
    Network net;
    double test_accuracy = -1.0;
    std::vector<double> epoch_loss;
};

/// Plain SGD with momentum. `velocity` is lazily sized on first use.
class SgdOptimizer {
public:
    explicit SgdOptimizer(double momentum = 0.0) : momentum_(momentum) {}
    void step(Network& net, const WeightGradients& grads, double lr);

private:
    double momentum_;
    WeightGradients velocity_;
};

class AdamOptimizer {
public:
    AdamOptimizer(double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
        : beta1_(beta1), beta2_(beta2), eps_(eps) {}
    void step(Network& net, const WeightGradients& grads, double lr);

private:
    double beta1_, beta2_, eps_;
    std::uint64_t t_ = 0;
    WeightGradients m_, v_;
};

/// Fraction of samples whose argmax prediction equals the label.
double accuracy(const Network& net, const Dataset& data);

/// Deterministic minibatch training from the network's current weights.
/// Throws TrainingError when the loss stops being finite.
TrainResult train(Network net, const Dataset& train_set, const Dataset* test_set, const TrainConfig& cfg);

}  // namespace muten
