#pragma once
// Test-only oracles and fixtures. Nothing here shares code with src/.

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <vector>

#include "muten/dataset.hpp"
#include "muten/engine.hpp"
#include "muten/network.hpp"

namespace testing {

using muten::Layer;
using muten::LayerKind;
using muten::Network;

// Double-precision reference forward pass written directly from the layer
// definitions. `pattern` records every branch taken (relu sign, pool argmax)
// so finite differences can detect when a perturbation crosses a kink.
struct NaiveNet {
    struct L {
        LayerKind kind;
        std::vector<double> w, b;
        std::size_t units = 0, oc = 0, k = 0, stride = 1, pad = 0;
        std::vector<std::size_t> in, out;
    };
    std::vector<L> layers;
    double temperature = 1.0;

    explicit NaiveNet(const Network& net) : temperature(net.temperature()) {
        for (const auto& l : net.layers()) {
            L n{l.kind, {l.weights.data.begin(), l.weights.data.end()}, {l.bias.data.begin(), l.bias.data.end()},
                l.units, l.out_channels, l.kernel, l.stride, l.padding, l.in_shape, l.out_shape};
            layers.push_back(std::move(n));
        }
    }

    std::vector<double> logits(std::vector<double> x, std::vector<int>* pattern = nullptr) const {
        for (const auto& l : layers) {
            std::vector<double> y;
            switch (l.kind) {
                case LayerKind::dense: {
                    const std::size_t n_in = l.in[0];
                    y.assign(l.units, 0.0);
                    for (std::size_t o = 0; o < l.units; ++o) {
                        double s = l.b[o];
                        for (std::size_t i = 0; i < n_in; ++i) s += l.w[o * n_in + i] * x[i];
                        y[o] = s;
                    }
                    break;
                }
                case LayerKind::conv2d: {
                    const std::size_t C = l.in[0], H = l.in[1], W = l.in[2];
                    const std::size_t OH = l.out[1], OW = l.out[2];
                    y.assign(l.oc * OH * OW, 0.0);
                    for (std::size_t o = 0; o < l.oc; ++o)
                        for (std::size_t r = 0; r < OH; ++r)
                            for (std::size_t c = 0; c < OW; ++c) {
                                double s = l.b[o];
                                for (std::size_t ci = 0; ci < C; ++ci)
                                    for (std::size_t kr = 0; kr < l.k; ++kr)
                                        for (std::size_t kc = 0; kc < l.k; ++kc) {
                                            const long ir = static_cast<long>(r * l.stride + kr) - static_cast<long>(l.pad);
                                            const long ic = static_cast<long>(c * l.stride + kc) - static_cast<long>(l.pad);
                                            if (ir < 0 || ic < 0 || ir >= static_cast<long>(H) || ic >= static_cast<long>(W)) continue;
                                            s += l.w[((o * C + ci) * l.k + kr) * l.k + kc] * x[(ci * H + ir) * W + ic];
                                        }
                                y[(o * OH + r) * OW + c] = s;
                            }
                    break;
                }
                case LayerKind::maxpool2d: {
                    const std::size_t C = l.in[0], H = l.in[1], W = l.in[2];
                    const std::size_t OH = l.out[1], OW = l.out[2];
                    y.assign(C * OH * OW, 0.0);
                    for (std::size_t ch = 0; ch < C; ++ch)
                        for (std::size_t r = 0; r < OH; ++r)
                            for (std::size_t c = 0; c < OW; ++c) {
                                double best = -std::numeric_limits<double>::infinity();
                                int arg = -1;
                                for (std::size_t kr = 0; kr < l.k; ++kr)
                                    for (std::size_t kc = 0; kc < l.k; ++kc) {
                                        const double v = x[(ch * H + r * l.stride + kr) * W + c * l.stride + kc];
                                        if (v > best) {
                                            best = v;
                                            arg = static_cast<int>(kr * l.k + kc);
                                        }
                                    }
                                y[(ch * OH + r) * OW + c] = best;
                                if (pattern) pattern->push_back(arg);
                            }
                    break;
                }
                case LayerKind::relu:
                    y = x;
                    for (auto& v : y) {
                        if (pattern) pattern->push_back(v > 0.0);
                        v = std::max(v, 0.0);
                    }
                    break;
                case LayerKind::flatten:
                case LayerKind::softmax:
                    y = x;
                    break;
            }
            x = std::move(y);
        }
        return x;
    }

    // Cross-entropy of softmax(z / T), or the C&W margin with kappa = 0.
    double loss(const std::vector<double>& x, std::size_t label, bool cw, std::vector<int>* pattern = nullptr) const {
        const auto z = logits(x, pattern);
        if (cw) {
            double other = -std::numeric_limits<double>::infinity();
            std::size_t arg = 0;
            for (std::size_t i = 0; i < z.size(); ++i) {
                if (i != label && z[i] > other) {
                    other = z[i];
                    arg = i;
                }
            }
            if (pattern) {
                pattern->push_back(static_cast<int>(arg));
                pattern->push_back(z[label] - other > 0.0);
            }
            return std::max(z[label] - other, 0.0);
        }
        double m = -std::numeric_limits<double>::infinity();
        for (double v : z) m = std::max(m, v / temperature);
        double s = 0.0;
        for (double v : z) s += std::exp(v / temperature - m);
        return -(z[label] / temperature - m - std::log(s));
    }

    std::vector<double> probs(const std::vector<double>& x) const {
        const auto z = logits(x);
        double m = -std::numeric_limits<double>::infinity();
        for (double v : z) m = std::max(m, v / temperature);
        std::vector<double> p(z.size());
        double s = 0.0;
        for (std::size_t i = 0; i < z.size(); ++i) s += p[i] = std::exp(z[i] / temperature - m);
        for (auto& v : p) v /= s;
        return p;
    }
};

struct GradCheck {
    double max_rel_err = 0.0;
    std::size_t checked = 0;
    std::size_t skipped = 0;  // perturbation crossed a relu/pool/argmax kink
};

// Relative error of one analytic/numeric pair. Components far below the
// gradient's own scale are compared against 1e-2 * scale so float rounding
// in near-zero entries does not dominate.
inline double rel_err(double analytic, double numeric, double scale) {
    const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-2 * scale, 1e-12});
    return std::abs(analytic - numeric) / denom;
}

// Central differences (h = 1e-5, double precision) of the naive oracle
// against the engine's analytic input gradient.
inline GradCheck check_input_gradient(const Network& net, const muten::Tensor& x, std::size_t label, bool cw) {
    const NaiveNet ref(net);
    const auto g = muten::input_gradient(net, x, label, cw ? muten::LossSpec::cw(0.0f) : muten::LossSpec{});
    const std::vector<double> x0(x.data.begin(), x.data.end());
    std::vector<int> base;
    ref.loss(x0, label, cw, &base);
    constexpr double h = 1e-5;
    std::vector<double> numeric(x0.size());
    std::vector<char> valid(x0.size(), 1);
    double scale = 0.0;
    for (std::size_t i = 0; i < x0.size(); ++i) {
        auto xp = x0, xm = x0;
        xp[i] += h;
        xm[i] -= h;
        std::vector<int> pp, pm;
        const double lp = ref.loss(xp, label, cw, &pp), lm = ref.loss(xm, label, cw, &pm);
        valid[i] = pp == base && pm == base;
        numeric[i] = (lp - lm) / (2 * h);
        if (valid[i]) scale = std::max(scale, std::abs(numeric[i]));
    }
    GradCheck out;
    for (std::size_t i = 0; i < x0.size(); ++i) {
        if (!valid[i]) {
            ++out.skipped;
            continue;
        }
        ++out.checked;
        out.max_rel_err = std::max(out.max_rel_err, rel_err(g.wrt_input.data[i], numeric[i], scale));
    }
    return out;
}

// Same for the cross-entropy weight and bias gradients of one sample.
inline GradCheck check_weight_gradient(const Network& net, const muten::Tensor& x, std::size_t label) {
    const std::vector<muten::Tensor> batch{x};
    const std::vector<std::size_t> labels{label};
    const auto grads = muten::weight_gradient(net, batch, labels);
    const std::vector<double> x0(x.data.begin(), x.data.end());
    NaiveNet ref(net);
    std::vector<int> base;
    ref.loss(x0, label, false, &base);
    constexpr double h = 1e-5;
    GradCheck out;
    const auto trainable = net.trainable_indices();
    for (std::size_t s = 0; s < trainable.size(); ++s) {
        auto& L = ref.layers[trainable[s]];
        for (int which = 0; which < 2; ++which) {
            auto& params = which == 0 ? L.w : L.b;
            const auto& analytic = which == 0 ? grads[s].weights : grads[s].bias;
            std::vector<double> numeric(params.size());
            std::vector<char> valid(params.size(), 1);
            double scale = 0.0;
            for (std::size_t i = 0; i < params.size(); ++i) {
                const double keep = params[i];
                std::vector<int> pp, pm;
                params[i] = keep + h;
                const double lp = ref.loss(x0, label, false, &pp);
                params[i] = keep - h;
                const double lm = ref.loss(x0, label, false, &pm);
                params[i] = keep;
                valid[i] = pp == base && pm == base;
                numeric[i] = (lp - lm) / (2 * h);
                if (valid[i]) scale = std::max(scale, std::abs(numeric[i]));
            }
            for (std::size_t i = 0; i < params.size(); ++i) {
                if (!valid[i]) {
                    ++out.skipped;
                    continue;
                }
                ++out.checked;
                out.max_rel_err = std::max(out.max_rel_err, rel_err(analytic[i], numeric[i], scale));
            }
        }
    }
    return out;
}

inline void fill_uniform(Network& net, std::mt19937_64& rng, float scale) {
    std::uniform_real_distribution<float> u(-scale, scale);
    for (auto& l : net.mutable_layers()) {
        for (auto& w : l.weights.data) w = u(rng);
        for (auto& b : l.bias.data) b = u(rng);
    }
}

// Small random architectures: either a conv stack or an MLP.
inline Network random_net(std::mt19937_64& rng, bool allow_conv = true) {
    auto pick = [&](std::size_t lo, std::size_t hi) { return std::uniform_int_distribution<std::size_t>(lo, hi)(rng); };
    const std::size_t classes = pick(2, 5);
    Network net;
    if (allow_conv && pick(0, 1) == 1) {
        const std::size_t c = pick(1, 2), h = pick(6, 9), w = pick(6, 9);
        muten::NetworkBuilder b({c, h, w});
        b.conv2d(pick(2, 4), pick(2, 3), pick(1, 2), pick(0, 1)).relu();
        if (pick(0, 1)) b.maxpool2d(2);
        b.flatten().dense(pick(3, 7)).relu().dense(classes);
        net = b.build(pick(0, 1) ? 1.0 : 2.5);
    } else {
        muten::NetworkBuilder b({pick(3, 12)});
        b.dense(pick(3, 8)).relu();
        if (pick(0, 1)) b.dense(pick(3, 8)).relu();
        b.dense(classes);
        net = b.build(pick(0, 1) ? 1.0 : 2.5);
    }
    fill_uniform(net, rng, 0.6f);
    return net;
}

inline muten::Tensor random_input(const Network& net, std::mt19937_64& rng) {
    muten::Tensor x(net.input_shape());
    std::uniform_real_distribution<float> u(0.0f, 1.0f);
    for (auto& v : x.data) v = u(rng);
    return x;
}

// Linearly separable toy images: class k lights up row band k.
inline muten::Dataset toy_dataset(std::size_t n, std::size_t classes, std::uint64_t seed, std::size_t side = 8) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<float> noise(0.0f, 0.25f);
    muten::Dataset d;
    d.rows = side;
    d.cols = side;
    d.pixels.resize(n * side * side);
    d.labels.resize(n);
    const std::size_t band = side / classes;
    for (std::size_t i = 0; i < n; ++i) {
        const auto y = static_cast<std::uint8_t>(i % classes);
        d.labels[i] = y;
        for (std::size_t r = 0; r < side; ++r)
            for (std::size_t c = 0; c < side; ++c) {
                float v = noise(rng);
                if (r / std::max<std::size_t>(band, 1) == y) v += 0.7f;
                d.pixels[(i * side + r) * side + c] = std::min(v, 1.0f);
            }
    }
    return d;
}

// A small conv net for toy_dataset images.
inline Network toy_cnn(std::size_t classes, std::size_t side = 8) {
    return muten::NetworkBuilder({1, side, side})
        .conv2d(4, 3, 1, 1)
        .relu()
        .maxpool2d(2)
        .flatten()
        .dense(12)
        .relu()
        .dense(classes)
        .build();
}

// ceil(percent * n / 100) in integers.
inline std::size_t expected(int percent, std::size_t n) { return (static_cast<std::size_t>(percent) * n + 99) / 100; }

inline std::vector<float> row(const Layer& l, std::size_t j) {
    const auto f = l.fan_in();
    return {l.weights.data.begin() + static_cast<std::ptrdiff_t>(j * f),
            l.weights.data.begin() + static_cast<std::ptrdiff_t>((j + 1) * f)};
}

inline std::size_t changed_weights(const Layer& a, const Layer& b) {
    std::size_t n = 0;
    for (std::size_t i = 0; i < a.weights.size(); ++i) n += a.weights.data[i] != b.weights.data[i];
    return n;
}

inline std::size_t changed_rows(const Layer& a, const Layer& b) {
    std::size_t n = 0;
    for (std::size_t j = 0; j < a.neurons(); ++j) n += row(a, j) != row(b, j) || a.bias.data[j] != b.bias.data[j];
    return n;
}

// Neurons of layer `a` whose outgoing weights in `next` were all set to zero.
inline std::size_t blocked(const Layer& layer, const Layer& next_before, const Layer& next_after) {
    const std::size_t n = layer.neurons();
    const std::size_t block = next_before.kind == LayerKind::conv2d ? next_before.kernel * next_before.kernel
                                                                    : next_before.in_shape[0] / n;
    std::size_t count = 0;
    for (std::size_t j = 0; j < n; ++j) {
        bool all_zero = true, any_changed = false;
        const std::size_t outs = next_before.neurons();
        const std::size_t fan = next_before.fan_in();
        for (std::size_t o = 0; o < outs; ++o)
            for (std::size_t k = 0; k < block; ++k) {
                const std::size_t at = o * fan + j * block + k;
                all_zero &= next_after.weights.data[at] == 0.0f;
                any_changed |= next_after.weights.data[at] != next_before.weights.data[at];
            }
        count += all_zero && any_changed;
    }
    return count;
}

}  // namespace testing
