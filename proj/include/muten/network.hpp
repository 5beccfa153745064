#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "muten/tensor.hpp"

namespace muten {

enum class LayerKind { dense, conv2d, maxpool2d, relu, flatten, softmax };

std::string to_string(LayerKind kind);
LayerKind layer_kind_from_string(const std::string& name);

/// One stage of a feedforward network. Only dense and conv2d carry
/// parameters. Dense weights are [units, inputs]; conv2d weights are
/// [out_channels, in_channels, kernel, kernel].
struct Layer {
    LayerKind kind = LayerKind::relu;
    Tensor weights;
    Tensor bias;

    std::size_t units = 0;         // dense
    std::size_t out_channels = 0;  // conv2d
    std::size_t kernel = 0;        // conv2d, maxpool2d
    std::size_t stride = 1;        // conv2d, maxpool2d
    std::size_t padding = 0;       // conv2d

    Shape in_shape;
    Shape out_shape;

    bool trainable() const noexcept { return kind == LayerKind::dense || kind == LayerKind::conv2d; }

    /// Number of neurons: dense units or conv filters.
    std::size_t neurons() const noexcept;

    /// Length of one neuron's incoming weight vector.
    std::size_t fan_in() const noexcept;
};

struct TrainingInfo {
    std::size_t epochs = 0;
    double learning_rate = 0.0;
    double temperature = 1.0;
    std::uint64_t seed = 0;
    double test_accuracy = -1.0;
};

/// Post-training mutation provenance carried by mutants.
struct MutationInfo {
    std::string op;
    double ratio = 0.0;
    std::uint64_t seed = 0;
    std::string parent_hash;
    double probe_accuracy = -1.0;
};

class Network {
public:
    Network() = default;
    Network(Shape input_shape, std::vector<Layer> layers, double temperature = 1.0);

    const Shape& input_shape() const noexcept { return input_shape_; }
    std::size_t num_classes() const noexcept { return num_classes_; }
    double temperature() const noexcept { return temperature_; }
    void set_temperature(double t);

    const std::vector<Layer>& layers() const noexcept { return layers_; }
    std::vector<Layer>& mutable_layers() noexcept { return layers_; }

    /// Indices into layers() of the dense/conv2d layers, in order.
    std::vector<std::size_t> trainable_indices() const;

    /// Index of the layer whose input is the last hidden representation.
    std::size_t feature_layer() const;
    std::size_t feature_size() const;

    /// Total number of weights (biases excluded) and of neurons over all
    /// trainable layers.
    std::size_t weight_count() const;
    std::size_t neuron_count() const;

    TrainingInfo training;
    std::optional<MutationInfo> mutation;

private:
    Shape input_shape_;
    std::vector<Layer> layers_;
    std::size_t num_classes_ = 0;
    double temperature_ = 1.0;
};

/// Fluent architecture builder; shapes are inferred layer by layer.
class NetworkBuilder {
public:
    explicit NetworkBuilder(Shape input_shape);

    NetworkBuilder& dense(std::size_t units);
    NetworkBuilder& conv2d(std::size_t out_channels, std::size_t kernel, std::size_t stride = 1,
                           std::size_t padding = 0);
    NetworkBuilder& maxpool2d(std::size_t kernel, std::size_t stride = 0);
    NetworkBuilder& relu();
    NetworkBuilder& flatten();
    NetworkBuilder& softmax();

    /// Builds with zero-initialized parameters.
    Network build(double temperature = 1.0) const;

private:
    NetworkBuilder& push(Layer layer);

    Shape input_shape_;
    Shape current_;
    std::vector<Layer> layers_;
};

struct LenetOptions {
    std::size_t conv1_filters = 6;
    std::size_t conv2_filters = 16;
    std::size_t dense1_units = 120;
    std::size_t dense2_units = 84;
    std::size_t num_classes = 10;
};

/// Lenet-5 style CNN for 1x28x28 inputs: two 5x5 same-padded conv + 2x2
/// max-pool blocks, then dense 120 and 84 with ReLU, then the class layer.
Network make_lenet(const LenetOptions& opts = {});

/// Uniform He-style fan-in initialization, biases zeroed.
void init_he_uniform(Network& net, std::uint64_t seed);

/// Bit-level equality of every parameter.
bool same_weights(const Network& a, const Network& b);

/// 64-bit FNV-1a over the raw parameter bytes, as 16 hex digits.
std::string weight_digest(const Network& net);

}  // namespace muten
