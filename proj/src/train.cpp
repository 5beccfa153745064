#include "muten/train.hpp"

#include <cmath>
#include <numeric>
#include <random>

namespace muten {

OptimizerKind optimizer_from_string(const std::string& name) {
    if (name == "sgd") return OptimizerKind::sgd;
    if (name == "adam") return OptimizerKind::adam;
    throw ConfigError("unknown optimizer '" + name + "'");
}

namespace {

template <typename Fn>
void for_each_param(Network& net, Fn&& fn) {
    std::size_t slot = 0;
    for (auto& l : net.mutable_layers()) {
        if (!l.trainable()) continue;
        fn(slot, l.weights.data, l.bias.data);
        ++slot;
    }
}

}  // namespace

void SgdOptimizer::step(Network& net, const WeightGradients& grads, double lr) {
    if (velocity_.empty()) velocity_ = zero_gradients(net);
    const auto lr_f = static_cast<float>(lr);
    const auto mu = static_cast<float>(momentum_);
    for_each_param(net, [&](std::size_t slot, FloatBuffer& w, FloatBuffer& b) {
        auto update = [&](FloatBuffer& p, const FloatBuffer& g, FloatBuffer& v) {
            for (std::size_t i = 0; i < p.size(); ++i) {
                v[i] = mu * v[i] + g[i];
                p[i] -= lr_f * v[i];
            }
        };
        update(w, grads[slot].weights, velocity_[slot].weights);
        update(b, grads[slot].bias, velocity_[slot].bias);
    });
}

void AdamOptimizer::step(Network& net, const WeightGradients& grads, double lr) {
    if (m_.empty()) {
        m_ = zero_gradients(net);
        v_ = zero_gradients(net);
    }
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    const auto step = static_cast<float>(lr * std::sqrt(bc2) / bc1);
    const auto b1 = static_cast<float>(beta1_), b2 = static_cast<float>(beta2_);
    const auto eps = static_cast<float>(eps_ * std::sqrt(bc2));
    for_each_param(net, [&](std::size_t slot, FloatBuffer& w, FloatBuffer& b) {
        auto update = [&](FloatBuffer& p, const FloatBuffer& g, FloatBuffer& m,
                          FloatBuffer& v) {
            for (std::size_t i = 0; i < p.size(); ++i) {
                m[i] = b1 * m[i] + (1.0f - b1) * g[i];
                v[i] = b2 * v[i] + (1.0f - b2) * g[i] * g[i];
                p[i] -= step * m[i] / (std::sqrt(v[i]) + eps);
            }
        };
        update(w, grads[slot].weights, m_[slot].weights, v_[slot].weights);
        update(b, grads[slot].bias, m_[slot].bias, v_[slot].bias);
    });
}

double accuracy(const Network& net, const Dataset& data) {
    if (data.size() == 0) return 0.0;
    std::size_t correct = 0;
    for (std::size_t i = 0; i < data.size(); ++i) {
        if (forward(net, data.image(i)).predicted == data.labels[i]) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(data.size());
}

TrainResult train(Network net, const Dataset& train_set, const Dataset* test_set, const TrainConfig& cfg) {
    if (!(cfg.learning_rate > 0.0)) throw ConfigError("learning rate must be positive");
    if (cfg.batch_size == 0) throw ConfigError("batch size must be positive");
    if (train_set.size() == 0) throw ConfigError("training set is empty");
    if (train_set.image_size() != shape_size(net.input_shape())) throw ShapeError("dataset images do not fit the network input");
    for (auto l : train_set.labels) {
        if (l >= net.num_classes()) throw ConfigError("training label out of range");
    }

    std::mt19937_64 rng(cfg.seed);
    std::vector<std::size_t> order(train_set.size());
    std::iota(order.begin(), order.end(), std::size_t{0});

    SgdOptimizer sgd(cfg.momentum);
    AdamOptimizer adam;
    TrainResult result;
    std::vector<const float*> batch;
    std::vector<std::size_t> labels;

    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        double loss_sum = 0.0;
        std::size_t batches = 0;
        for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
            const std::size_t end = std::min(order.size(), start + cfg.batch_size);
            batch.clear();
            labels.clear();
            for (std::size_t i = start; i < end; ++i) {
                batch.push_back(train_set.image_ptr(order[i]));
                labels.push_back(train_set.labels[order[i]]);
            }
            double loss = 0.0;
            const auto grads = weight_gradient(net, batch, labels, cfg.temperature, &loss);
            if (!std::isfinite(loss)) {
                throw TrainingError("training diverged: non-finite loss in epoch " + std::to_string(epoch + 1),
                                    epoch + 1);
            }
            loss_sum += loss;
            ++batches;
            if (cfg.optimizer == OptimizerKind::adam) {
                adam.step(net, grads, cfg.learning_rate);
            } else {
                sgd.step(net, grads, cfg.learning_rate);
            }
        }
        for (const auto& l : net.layers()) {
            if (!l.weights.all_finite() || !l.bias.all_finite()) {
                throw TrainingError("training produced non-finite weights in epoch " + std::to_string(epoch + 1),
                                    epoch + 1);
            }
        }
        const double mean = loss_sum / static_cast<double>(std::max<std::size_t>(batches, 1));
        result.epoch_loss.push_back(mean);
        if (cfg.on_epoch) cfg.on_epoch(epoch + 1, mean);
    }

    net.set_temperature(1.0);
    net.training = {cfg.epochs, cfg.learning_rate, cfg.temperature, cfg.seed, -1.0};
    if (test_set) {
        result.test_accuracy = accuracy(net, *test_set);
        net.training.test_accuracy = result.test_accuracy;
    }
    result.net = std::move(net);
    return result;
}

}  // namespace muten
