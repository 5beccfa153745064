#include "muten/engine.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>

namespace muten {

namespace {

using MatR = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using VecF = Eigen::VectorXf;
using ConstMatMap = Eigen::Map<const MatR>;
using MatMap = Eigen::Map<MatR>;
using ConstVecMap = Eigen::Map<const VecF>;
using VecMap = Eigen::Map<VecF>;

// Activations kept for the backward pass. acts[0] is the input and acts[i+1]
// the output of layer i.
struct Trace {
    std::vector<FloatBuffer> acts;
    std::vector<FloatBuffer> cols;
    std::vector<std::vector<std::uint32_t>> pool_idx;
};

void im2col(const Layer& l, const float* in, float* cols) {
    const std::size_t c_in = l.in_shape[0], h = l.in_shape[1], w = l.in_shape[2];
    const std::size_t oh = l.out_shape[1], ow = l.out_shape[2];
    const std::size_t k = l.kernel, s = l.stride;
    const auto pad = static_cast<std::ptrdiff_t>(l.padding);
    const std::size_t p = oh * ow;
    for (std::size_t c = 0; c < c_in; ++c) {
        const float* plane = in + c * h * w;
        for (std::size_t ky = 0; ky < k; ++ky) {
            for (std::size_t kx = 0; kx < k; ++kx) {
                float* row = cols + ((c * k + ky) * k + kx) * p;
                for (std::size_t oy = 0; oy < oh; ++oy) {
                    const auto iy = static_cast<std::ptrdiff_t>(oy * s + ky) - pad;
                    float* dst = row + oy * ow;
                    if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) {
                        std::fill(dst, dst + ow, 0.0f);
                        continue;
                    }
                    const float* src = plane + static_cast<std::size_t>(iy) * w;
                    for (std::size_t ox = 0; ox < ow; ++ox) {
                        const auto ix = static_cast<std::ptrdiff_t>(ox * s + kx) - pad;
                        dst[ox] = (ix < 0 || ix >= static_cast<std::ptrdiff_t>(w)) ? 0.0f
                                                                                   : src[ix];
                    }
                }
            }
        }
    }
}

void col2im_add(const Layer& l, const float* cols, float* dx) {
    const std::size_t c_in = l.in_shape[0], h = l.in_shape[1], w = l.in_shape[2];
    const std::size_t oh = l.out_shape[1], ow = l.out_shape[2];
    const std::size_t k = l.kernel, s = l.stride;
    const auto pad = static_cast<std::ptrdiff_t>(l.padding);
    const std::size_t p = oh * ow;
    for (std::size_t c = 0; c < c_in; ++c) {
        float* plane = dx + c * h * w;
        for (std::size_t ky = 0; ky < k; ++ky) {
            for (std::size_t kx = 0; kx < k; ++kx) {
                const float* row = cols + ((c * k + ky) * k + kx) * p;
                for (std::size_t oy = 0; oy < oh; ++oy) {
                    const auto iy = static_cast<std::ptrdiff_t>(oy * s + ky) - pad;
                    if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
                    float* dst = plane + static_cast<std::size_t>(iy) * w;
                    const float* src = row + oy * ow;
                    for (std::size_t ox = 0; ox < ow; ++ox) {
                        const auto ix = static_cast<std::ptrdiff_t>(ox * s + kx) - pad;
                        if (ix >= 0 && ix < static_cast<std::ptrdiff_t>(w)) dst[ix] += src[ox];
                    }
                }
            }
        }
    }
}

void run_forward(const Network& net, std::span<const float> x, Trace& t) {
    const auto& layers = net.layers();
    t.acts.resize(layers.size() + 1);
    t.cols.resize(layers.size());
    t.pool_idx.resize(layers.size());
    t.acts[0].assign(x.begin(), x.end());

    for (std::size_t i = 0; i < layers.size(); ++i) {
        const Layer& l = layers[i];
        const auto& in = t.acts[i];
        auto& out = t.acts[i + 1];
        out.resize(shape_size(l.out_shape));
        switch (l.kind) {
            case LayerKind::dense: {
                ConstMatMap w(l.weights.data.data(), static_cast<Eigen::Index>(l.units),
                              static_cast<Eigen::Index>(in.size()));
                VecMap y(out.data(), static_cast<Eigen::Index>(out.size()));
                y.noalias() = w * ConstVecMap(in.data(), static_cast<Eigen::Index>(in.size()));
                y += ConstVecMap(l.bias.data.data(), static_cast<Eigen::Index>(l.units));
                break;
            }
            case LayerKind::conv2d: {
                const std::size_t kdim = l.in_shape[0] * l.kernel * l.kernel;
                const std::size_t p = l.out_shape[1] * l.out_shape[2];
                auto& cols = t.cols[i];
                cols.resize(kdim * p);
                im2col(l, in.data(), cols.data());
                ConstMatMap w(l.weights.data.data(), static_cast<Eigen::Index>(l.out_channels),
                              static_cast<Eigen::Index>(kdim));
                MatMap y(out.data(), static_cast<Eigen::Index>(l.out_channels), static_cast<Eigen::Index>(p));
                y.noalias() = w * ConstMatMap(cols.data(), static_cast<Eigen::Index>(kdim),
                                              static_cast<Eigen::Index>(p));
                y.colwise() += ConstVecMap(l.bias.data.data(), static_cast<Eigen::Index>(l.out_channels));
                break;
            }
            case LayerKind::maxpool2d: {
                const std::size_t c_n = l.in_shape[0], h = l.in_shape[1], w = l.in_shape[2];
                const std::size_t oh = l.out_shape[1], ow = l.out_shape[2];
                auto& idx = t.pool_idx[i];
                idx.resize(out.size());
                for (std::size_t c = 0; c < c_n; ++c) {
                    for (std::size_t oy = 0; oy < oh; ++oy) {
                        for (std::size_t ox = 0; ox < ow; ++ox) {
                            std::size_t best = c * h * w + (oy * l.stride) * w + ox * l.stride;
                            for (std::size_t ky = 0; ky < l.kernel; ++ky) {
                                for (std::size_t kx = 0; kx < l.kernel; ++kx) {
                                    const std::size_t j = c * h * w + (oy * l.stride + ky) * w + ox * l.stride + kx;
                                    if (in[j] > in[best]) best = j;
                                }
                            }
                            const std::size_t o = (c * oh + oy) * ow + ox;
                            out[o] = in[best];
                            idx[o] = static_cast<std::uint32_t>(best);
                        }
                    }
                }
                break;
            }
            case LayerKind::relu:
                for (std::size_t j = 0; j < in.size(); ++j) out[j] = in[j] > 0.0f ? in[j] : 0.0f;
                break;
            case LayerKind::flatten:
            case LayerKind::softmax:
                std::copy(in.begin(), in.end(), out.begin());
                break;
        }
    }
}

// Logits are the output of the last non-softmax layer.
const FloatBuffer& logits_of(const Network& net, const Trace& t) {
    const auto n = net.layers().size();
    return net.layers().back().kind == LayerKind::softmax ? t.acts[n - 1] : t.acts[n];
}

// Backpropagates d(loss)/d(logits). Accumulates parameter gradients into
// `grads` when given; returns d(loss)/d(input) when `want_input` is set.
FloatBuffer run_backward(const Network& net, const Trace& t, FloatBuffer grad,
                                WeightGradients* grads, bool want_input) {
    const auto& layers = net.layers();
    std::size_t last = layers.size();
    if (layers.back().kind == LayerKind::softmax) --last;

    std::vector<std::size_t> slot(layers.size(), 0);
    std::size_t first_trainable = layers.size();
    {
        std::size_t s = 0;
        for (std::size_t i = 0; i < layers.size(); ++i) {
            if (layers[i].trainable()) {
                slot[i] = s++;
                first_trainable = std::min(first_trainable, i);
            }
        }
    }

    FloatBuffer next;
    for (std::size_t i = last; i-- > 0;) {
        const Layer& l = layers[i];
        const auto& in = t.acts[i];
        const bool need_dx = want_input || i > first_trainable;
        if (!need_dx && !l.trainable()) break;
        switch (l.kind) {
            case LayerKind::dense: {
                const auto units = static_cast<Eigen::Index>(l.units);
                const auto n_in = static_cast<Eigen::Index>(in.size());
                ConstVecMap dy(grad.data(), units);
                ConstMatMap w(l.weights.data.data(), units, n_in);
                if (grads) {
                    auto& g = (*grads)[slot[i]];
                    MatMap(g.weights.data(), units, n_in).noalias() += dy * ConstVecMap(in.data(), n_in).transpose();
                    VecMap(g.bias.data(), units) += dy;
                }
                if (need_dx) {
                    next.resize(in.size());
                    VecMap(next.data(), n_in).noalias() = w.transpose() * dy;
                }
                break;
            }
            case LayerKind::conv2d: {
                const auto oc = static_cast<Eigen::Index>(l.out_channels);
                const auto kdim = static_cast<Eigen::Index>(l.in_shape[0] * l.kernel * l.kernel);
                const auto p = static_cast<Eigen::Index>(l.out_shape[1] * l.out_shape[2]);
                ConstMatMap dy(grad.data(), oc, p);
                ConstMatMap cols(t.cols[i].data(), kdim, p);
                if (grads) {
                    auto& g = (*grads)[slot[i]];
                    MatMap(g.weights.data(), oc, kdim).noalias() += dy * cols.transpose();
                    VecMap(g.bias.data(), oc) += dy.rowwise().sum();
                }
                if (need_dx) {
                    ConstMatMap w(l.weights.data.data(), oc, kdim);
                    MatR dcols(kdim, p);
                    dcols.noalias() = w.transpose() * dy;
                    next.assign(in.size(), 0.0f);
                    col2im_add(l, dcols.data(), next.data());
                }
                break;
            }
            case LayerKind::maxpool2d: {
                next.assign(in.size(), 0.0f);
                const auto& idx = t.pool_idx[i];
                for (std::size_t j = 0; j < grad.size(); ++j) next[idx[j]] += grad[j];
                break;
            }
            case LayerKind::relu: {
                next.resize(in.size());
                for (std::size_t j = 0; j < in.size(); ++j) next[j] = in[j] > 0.0f ? grad[j] : 0.0f;
                break;
            }
            case LayerKind::flatten:
            case LayerKind::softmax:
                next = grad;
                break;
        }
        if (!need_dx) return {};
        grad.swap(next);
    }
    return grad;
}

void check_input(const Network& net, std::size_t n) {
    if (n != shape_size(net.input_shape())) {
        throw ShapeError("input has " + std::to_string(n) + " values, network expects " +
                         shape_to_string(net.input_shape()));
    }
}

struct LossTop {
    double loss = 0.0;
    FloatBuffer dlogits;
};

LossTop cross_entropy_top(std::span<const float> logits, std::span<const float> probs, std::size_t label,
                          double temperature) {
    LossTop top;
    double m = -std::numeric_limits<double>::infinity();
    for (float z : logits) m = std::max(m, static_cast<double>(z) / temperature);
    double sum = 0.0;
    for (float z : logits) sum += std::exp(static_cast<double>(z) / temperature - m);
    top.loss = std::log(sum) + m - static_cast<double>(logits[label]) / temperature;
    top.dlogits.resize(logits.size());
    const auto inv_t = static_cast<float>(1.0 / temperature);
    for (std::size_t i = 0; i < logits.size(); ++i) {
        const float target = i == label ? 1.0f : 0.0f;
        top.dlogits[i] = (probs[i] - target) * inv_t;
    }
    return top;
}

LossTop cw_top(std::span<const float> logits, std::size_t label, float kappa) {
    LossTop top;
    std::size_t other = label == 0 ? 1 : 0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        if (i != label && logits[i] > logits[other]) other = i;
    }
    const double margin = static_cast<double>(logits[label]) - static_cast<double>(logits[other]);
    top.dlogits.assign(logits.size(), 0.0f);
    if (margin > -static_cast<double>(kappa)) {
        top.loss = margin;
        top.dlogits[label] = 1.0f;
        top.dlogits[other] = -1.0f;
    } else {
        top.loss = -static_cast<double>(kappa);
    }
    return top;
}

}  // namespace

std::string to_string(LossKind kind) {
    return kind == LossKind::cross_entropy ? "cross_entropy" : "cw";
}

LossKind loss_kind_from_string(const std::string& name) {
    if (name == "cross_entropy" || name == "ce") return LossKind::cross_entropy;
    if (name == "cw" || name == "cw_loss") return LossKind::cw;
    throw ConfigError("unknown loss kind '" + name + "'");
}

std::size_t argmax(std::span<const float> v) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < v.size(); ++i) {
        if (v[i] > v[best]) best = i;
    }
    return best;
}

std::vector<float> softmax(std::span<const float> logits, double temperature) {
    std::vector<float> p(logits.size());
    const auto inv_t = static_cast<float>(1.0 / temperature);
    float m = -std::numeric_limits<float>::infinity();
    for (float z : logits) m = std::max(m, z);
    float sum = 0.0f;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        p[i] = std::exp((logits[i] - m) * inv_t);
        sum += p[i];
    }
    for (auto& v : p) v /= sum;
    return p;
}

ForwardResult forward(const Network& net, std::span<const float> x) {
    check_input(net, x.size());
    Trace t;
    run_forward(net, x, t);
    ForwardResult r;
    const auto& logits = logits_of(net, t);
    r.logits.assign(logits.begin(), logits.end());
    r.probs = softmax(r.logits, net.temperature());
    const auto& features = t.acts[net.feature_layer()];
    r.features.assign(features.begin(), features.end());
    r.predicted = argmax(r.probs);
    return r;
}

ForwardResult forward(const Network& net, const Tensor& x) {
    if (x.shape != net.input_shape() && !(x.shape.size() == 1 && x.size() == shape_size(net.input_shape()))) {
        throw ShapeError("input shape " + shape_to_string(x.shape) + " does not match network input " +
                         shape_to_string(net.input_shape()));
    }
    return forward(net, x.values());
}

LossGradient input_gradient(const Network& net, const Tensor& x, std::size_t label, const LossSpec& loss) {
    if (x.shape != net.input_shape() && !(x.shape.size() == 1 && x.size() == shape_size(net.input_shape()))) {
        throw ShapeError("input shape " + shape_to_string(x.shape) + " does not match network input " +
                         shape_to_string(net.input_shape()));
    }
    if (label >= net.num_classes()) throw ConfigError("label out of range");
    Trace t;
    run_forward(net, x.values(), t);
    const auto& logits = logits_of(net, t);

    LossGradient out;
    out.class_probs = softmax(logits, net.temperature());
    out.predicted_class = argmax(out.class_probs);

    LossTop top;
    switch (loss.kind) {
        case LossKind::cross_entropy:
            top = cross_entropy_top(logits, out.class_probs, label, net.temperature());
            break;
        case LossKind::cw:
            top = cw_top(logits, label, loss.kappa);
            break;
        default:
            throw ConfigError("unknown loss kind");
    }
    out.loss_value = top.loss;
    out.wrt_input = Tensor(x.shape, run_backward(net, t, std::move(top.dlogits), nullptr, true));
    return out;
}

WeightGradients zero_gradients(const Network& net) {
    WeightGradients g;
    for (auto i : net.trainable_indices()) {
        const auto& l = net.layers()[i];
        g.push_back({FloatBuffer(l.weights.size(), 0.0f), FloatBuffer(l.bias.size(), 0.0f)});
    }
    return g;
}

WeightGradients weight_gradient(const Network& net, std::span<const float* const> samples,
                                std::span<const std::size_t> labels, double temperature, double* mean_loss) {
    if (samples.empty()) throw ConfigError("weight_gradient needs a non-empty batch");
    if (samples.size() != labels.size()) throw ShapeError("batch and label counts differ");
    const std::size_t n_in = shape_size(net.input_shape());
    WeightGradients grads = zero_gradients(net);
    Trace t;
    double loss_sum = 0.0;
    for (std::size_t b = 0; b < samples.size(); ++b) {
        if (labels[b] >= net.num_classes()) throw ConfigError("label out of range");
        run_forward(net, std::span<const float>(samples[b], n_in), t);
        const auto& logits = logits_of(net, t);
        const auto probs = softmax(logits, temperature);
        auto top = cross_entropy_top(logits, probs, labels[b], temperature);
        loss_sum += top.loss;
        run_backward(net, t, std::move(top.dlogits), &grads, false);
    }
    const auto scale = static_cast<float>(1.0 / static_cast<double>(samples.size()));
    for (auto& g : grads) {
        for (auto& v : g.weights) v *= scale;
        for (auto& v : g.bias) v *= scale;
    }
    if (mean_loss) *mean_loss = loss_sum / static_cast<double>(samples.size());
    return grads;
}

WeightGradients weight_gradient(const Network& net, std::span<const Tensor> batch,
                                std::span<const std::size_t> labels, double* mean_loss) {
    std::vector<const float*> ptrs;
    ptrs.reserve(batch.size());
    for (const auto& x : batch) {
        check_input(net, x.size());
        ptrs.push_back(x.data.data());
    }
    return weight_gradient(net, ptrs, labels, net.temperature(), mean_loss);
}

}  // namespace muten
