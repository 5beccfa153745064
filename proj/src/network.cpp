#include "muten/network.hpp"

#include <cmath>
#include <cstring>
#include <random>
#include <span>
#include <sstream>

namespace muten {

std::string shape_to_string(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ',';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

bool Tensor::all_finite() const noexcept {
    for (float v : data) {
        if (!std::isfinite(v)) return false;
    }
    return true;
}

std::string to_string(LayerKind kind) {
    switch (kind) {
        case LayerKind::dense: return "dense";
        case LayerKind::conv2d: return "conv2d";
        case LayerKind::maxpool2d: return "maxpool2d";
        case LayerKind::relu: return "relu";
        case LayerKind::flatten: return "flatten";
        case LayerKind::softmax: return "softmax";
    }
    return "unknown";
}

LayerKind layer_kind_from_string(const std::string& name) {
    for (auto k : {LayerKind::dense, LayerKind::conv2d, LayerKind::maxpool2d, LayerKind::relu,
                   LayerKind::flatten, LayerKind::softmax}) {
        if (to_string(k) == name) return k;
    }
    throw ConfigError("unknown layer kind '" + name + "'");
}

std::size_t Layer::neurons() const noexcept {
    switch (kind) {
        case LayerKind::dense: return units;
        case LayerKind::conv2d: return out_channels;
        default: return 0;
    }
}

std::size_t Layer::fan_in() const noexcept {
    const auto n = neurons();
    return n == 0 ? 0 : weights.size() / n;
}

namespace {

Shape infer_out_shape(const Layer& l, const Shape& in) {
    switch (l.kind) {
        case LayerKind::dense:
            if (in.size() != 1) {
                throw ShapeError("dense layer needs a flat input, got " + shape_to_string(in));
            }
            if (l.units == 0) throw ShapeError("dense layer with zero units");
            return {l.units};
        case LayerKind::conv2d: {
            if (in.size() != 3) {
                throw ShapeError("conv2d needs [C,H,W] input, got " + shape_to_string(in));
            }
            if (l.kernel == 0 || l.stride == 0 || l.out_channels == 0) {
                throw ShapeError("conv2d hyperparameters must be positive");
            }
            const auto h = in[1] + 2 * l.padding;
            const auto w = in[2] + 2 * l.padding;
            if (h < l.kernel || w < l.kernel) throw ShapeError("conv2d kernel larger than input");
            return {l.out_channels, (h - l.kernel) / l.stride + 1, (w - l.kernel) / l.stride + 1};
        }
        case LayerKind::maxpool2d: {
            if (in.size() != 3) {
                throw ShapeError("maxpool2d needs [C,H,W] input, got " + shape_to_string(in));
            }
            if (l.kernel == 0 || l.stride == 0) throw ShapeError("maxpool2d hyperparameters must be positive");
            if (in[1] < l.kernel || in[2] < l.kernel) throw ShapeError("pool window larger than input");
            return {in[0], (in[1] - l.kernel) / l.stride + 1, (in[2] - l.kernel) / l.stride + 1};
        }
        case LayerKind::relu: return in;
        case LayerKind::flatten: return {shape_size(in)};
        case LayerKind::softmax:
            if (in.size() != 1) throw ShapeError("softmax needs a flat input");
            return in;
    }
    throw ShapeError("unhandled layer kind");
}

Shape expected_weight_shape(const Layer& l) {
    if (l.kind == LayerKind::dense) return {l.units, l.in_shape[0]};
    if (l.kind == LayerKind::conv2d) return {l.out_channels, l.in_shape[0], l.kernel, l.kernel};
    return {};
}

}  // namespace

Network::Network(Shape input_shape, std::vector<Layer> layers, double temperature)
    : input_shape_(std::move(input_shape)), layers_(std::move(layers)) {
    if (layers_.empty()) throw ShapeError("network needs at least one layer");
    set_temperature(temperature);
    Shape cur = input_shape_;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
        auto& l = layers_[i];
        if (l.kind == LayerKind::softmax && i + 1 != layers_.size()) {
            throw ShapeError("softmax may only be the final layer");
        }
        l.in_shape = cur;
        l.out_shape = infer_out_shape(l, cur);
        if (l.trainable()) {
            const Shape ws = expected_weight_shape(l);
            if (l.weights.empty()) l.weights = Tensor(ws);
            if (l.bias.empty()) l.bias = Tensor(Shape{l.neurons()});
            if (l.weights.shape != ws) {
                throw ShapeError("layer " + std::to_string(i) + " weights " +
                                 shape_to_string(l.weights.shape) + ", expected " + shape_to_string(ws));
            }
            if (l.bias.shape != Shape{l.neurons()}) {
                throw ShapeError("layer " + std::to_string(i) + " bias has wrong shape");
            }
        } else if (!l.weights.empty() || !l.bias.empty()) {
            throw ShapeError(to_string(l.kind) + " layer cannot carry parameters");
        }
        cur = l.out_shape;
    }
    if (cur.size() != 1) throw ShapeError("network output must be flat, got " + shape_to_string(cur));
    num_classes_ = cur[0];
    if (trainable_indices().empty()) throw ShapeError("network has no trainable layer");
}

void Network::set_temperature(double t) {
    if (!(t > 0.0) || !std::isfinite(t)) throw ConfigError("temperature must be positive");
    temperature_ = t;
}

std::vector<std::size_t> Network::trainable_indices() const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
        if (layers_[i].trainable()) out.push_back(i);
    }
    return out;
}

std::size_t Network::feature_layer() const { return trainable_indices().back(); }

std::size_t Network::feature_size() const { return shape_size(layers_[feature_layer()].in_shape); }

std::size_t Network::weight_count() const {
    std::size_t n = 0;
    for (const auto& l : layers_) n += l.weights.size();
    return n;
}

std::size_t Network::neuron_count() const {
    std::size_t n = 0;
    for (const auto& l : layers_) n += l.neurons();
    return n;
}

NetworkBuilder::NetworkBuilder(Shape input_shape)
    : input_shape_(std::move(input_shape)), current_(input_shape_) {}

NetworkBuilder& NetworkBuilder::push(Layer layer) {
    layer.in_shape = current_;
    current_ = infer_out_shape(layer, current_);
    layers_.push_back(std::move(layer));
    return *this;
}

NetworkBuilder& NetworkBuilder::dense(std::size_t units) {
    Layer l;
    l.kind = LayerKind::dense;
    l.units = units;
    return push(std::move(l));
}

NetworkBuilder& NetworkBuilder::conv2d(std::size_t out_channels, std::size_t kernel, std::size_t stride,
                                       std::size_t padding) {
    Layer l;
    l.kind = LayerKind::conv2d;
    l.out_channels = out_channels;
    l.kernel = kernel;
    l.stride = stride;
    l.padding = padding;
    return push(std::move(l));
}

NetworkBuilder& NetworkBuilder::maxpool2d(std::size_t kernel, std::size_t stride) {
    Layer l;
    l.kind = LayerKind::maxpool2d;
    l.kernel = kernel;
    l.stride = stride == 0 ? kernel : stride;
    return push(std::move(l));
}

NetworkBuilder& NetworkBuilder::relu() {
    Layer l;
    l.kind = LayerKind::relu;
    return push(std::move(l));
}

NetworkBuilder& NetworkBuilder::flatten() {
    Layer l;
    l.kind = LayerKind::flatten;
    return push(std::move(l));
}

NetworkBuilder& NetworkBuilder::softmax() {
    Layer l;
    l.kind = LayerKind::softmax;
    return push(std::move(l));
}

Network NetworkBuilder::build(double temperature) const { return Network(input_shape_, layers_, temperature); }

Network make_lenet(const LenetOptions& opts) {
    return NetworkBuilder({1, 28, 28})
        .conv2d(opts.conv1_filters, 5, 1, 2)
        .relu()
        .maxpool2d(2)
        .conv2d(opts.conv2_filters, 5, 1, 2)
        .relu()
        .maxpool2d(2)
        .flatten()
        .dense(opts.dense1_units)
        .relu()
        .dense(opts.dense2_units)
        .relu()
        .dense(opts.num_classes)
        .build();
}

void init_he_uniform(Network& net, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    for (auto& l : net.mutable_layers()) {
        if (!l.trainable()) continue;
        const double limit = std::sqrt(6.0 / static_cast<double>(l.fan_in()));
        std::uniform_real_distribution<double> dist(-limit, limit);
        for (auto& w : l.weights.data) w = static_cast<float>(dist(rng));
        std::fill(l.bias.data.begin(), l.bias.data.end(), 0.0f);
    }
}

namespace {

bool bytes_equal(std::span<const float> a, std::span<const float> b) {
    return a.size() == b.size() && (a.empty() || std::memcmp(a.data(), b.data(), a.size() * sizeof(float)) == 0);
}

}  // namespace

bool same_weights(const Network& a, const Network& b) {
    if (a.layers().size() != b.layers().size()) return false;
    for (std::size_t i = 0; i < a.layers().size(); ++i) {
        const auto& la = a.layers()[i];
        const auto& lb = b.layers()[i];
        if (la.kind != lb.kind || la.weights.shape != lb.weights.shape) return false;
        if (!bytes_equal(la.weights.data, lb.weights.data) || !bytes_equal(la.bias.data, lb.bias.data)) {
            return false;
        }
    }
    return true;
}

std::string weight_digest(const Network& net) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    auto feed = [&h](std::span<const float> v) {
        const auto* p = reinterpret_cast<const unsigned char*>(v.data());
        for (std::size_t i = 0; i < v.size() * sizeof(float); ++i) {
            h ^= p[i];
            h *= 0x100000001b3ULL;
        }
    };
    for (const auto& l : net.layers()) {
        feed(l.weights.data);
        feed(l.bias.data);
    }
    static constexpr char hex[] = "0123456789abcdef";
    std::string out(16, '0');
    for (int i = 15; i >= 0; --i) {
        out[static_cast<std::size_t>(i)] = hex[h & 0xf];
        h >>= 4;
    }
    return out;
}

}  // namespace muten
