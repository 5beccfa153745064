#include "muten/mutation.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <span>

#include "muten/rng.hpp"
#include "muten/train.hpp"

namespace muten {

std::string to_string(MutationOperator op) {
    switch (op) {
        case MutationOperator::GF: return "GF";
        case MutationOperator::WS: return "WS";
        case MutationOperator::NEB: return "NEB";
        case MutationOperator::NAI: return "NAI";
        case MutationOperator::NS: return "NS";
    }
    return "?";
}

MutationOperator mutation_operator_from_string(const std::string& name) {
    for (auto op : kMutationOperators) {
        if (to_string(op) == name) return op;
    }
    throw ConfigError("unknown mutation operator '" + name + "' (expected GF, WS, NEB, NAI or NS)");
}

bool MutationSpec::standard_ratio() const noexcept {
    return std::find(kMutationRatios.begin(), kMutationRatios.end(), ratio) != kMutationRatios.end();
}

std::array<std::pair<MutationOperator, double>, 20> operator_ratio_pairs() {
    std::array<std::pair<MutationOperator, double>, 20> out{};
    std::size_t i = 0;
    for (auto op : kMutationOperators) {
        for (double r : kMutationRatios) out[i++] = {op, r};
    }
    return out;
}

namespace {

bool weight_level(MutationOperator op) { return op == MutationOperator::GF; }

// Neuron operators other than WS act on hidden neurons only: the class
// layer has no outgoing connections and inverting or swapping class logits
// is a relabeling, not a mutation.
bool hidden_only(MutationOperator op) {
    return op == MutationOperator::NEB || op == MutationOperator::NAI || op == MutationOperator::NS;
}

std::size_t ceil_count(double ratio, std::size_t n) {
    if (n == 0) return 0;
    // Guard against 0.03 * 100 = 3.0000000000000004 style rounding.
    const double raw = ratio * static_cast<double>(n);
    const auto c = static_cast<std::size_t>(std::ceil(raw - 1e-9));
    return std::clamp<std::size_t>(c, 1, n);
}

std::vector<std::size_t> choose(std::size_t n, std::size_t k, std::mt19937_64& rng) {
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    for (std::size_t i = 0; i < k; ++i) {
        std::uniform_int_distribution<std::size_t> pick(i, n - 1);
        std::swap(idx[i], idx[pick(rng)]);
    }
    idx.resize(k);
    return idx;
}

double layer_std(std::span<const float> w) {
    double mean = 0.0;
    for (float v : w) mean += v;
    mean /= static_cast<double>(w.size());
    double var = 0.0;
    for (float v : w) var += (v - mean) * (v - mean);
    return std::sqrt(var / static_cast<double>(w.size()));
}

// Outgoing weights of neuron `j` of a trainable layer live in the next
// trainable layer: a channel slice for conv2d, a block of columns for dense
// (a flattened channel-major map contributes `block` consecutive inputs).
void zero_outgoing(Layer& next, std::size_t neurons, std::size_t j) {
    if (next.kind == LayerKind::conv2d) {
        const std::size_t kk = next.kernel * next.kernel;
        const std::size_t c_in = next.in_shape[0];
        for (std::size_t o = 0; o < next.out_channels; ++o) {
            float* p = next.weights.data.data() + (o * c_in + j) * kk;
            std::fill(p, p + kk, 0.0f);
        }
        return;
    }
    const std::size_t n_in = next.in_shape[0];
    const std::size_t block = n_in / neurons;
    for (std::size_t o = 0; o < next.units; ++o) {
        float* p = next.weights.data.data() + o * n_in + j * block;
        std::fill(p, p + block, 0.0f);
    }
}

void check_outgoing_layout(const Layer& layer, const Layer& next) {
    const std::size_t n = layer.neurons();
    const bool ok = next.kind == LayerKind::conv2d ? next.in_shape[0] == n
                                                   : (next.in_shape[0] % n == 0);
    if (!ok) throw ShapeError("cannot map neurons of a layer onto the next layer's inputs");
}

}  // namespace

std::vector<std::size_t> mutation_targets(const Network& net, const MutationSpec& spec) {
    const auto idx = net.trainable_indices();
    std::vector<std::size_t> counts(idx.size(), 0);
    for (std::size_t s = 0; s < idx.size(); ++s) {
        const Layer& l = net.layers()[idx[s]];
        const bool last = s + 1 == idx.size();
        if (hidden_only(spec.op) && last) continue;
        if (weight_level(spec.op)) {
            counts[s] = ceil_count(spec.ratio, l.weights.size());
            continue;
        }
        if (spec.op == MutationOperator::WS && l.fan_in() < 2) continue;
        if (spec.op == MutationOperator::NS) {
            if (l.neurons() < 2) continue;
            const std::size_t picked = ceil_count(spec.ratio, l.neurons());
            const std::size_t pairs = std::min((picked + 1) / 2, l.neurons() / 2);
            counts[s] = 2 * pairs;
            continue;
        }
        counts[s] = ceil_count(spec.ratio, l.neurons());
    }
    return counts;
}

Mutant mutate(const Network& net, const MutationSpec& spec) {
    if (!(spec.ratio > 0.0 && spec.ratio <= 1.0)) throw ConfigError("mutation ratio must lie in (0, 1]");
    const auto counts = mutation_targets(net, spec);
    if (std::accumulate(counts.begin(), counts.end(), std::size_t{0}) == 0) {
        throw DegenerateMutation(to_string(spec.op) + " selects no element in any layer of this network");
    }

    Mutant m{net, spec, weight_digest(net), -1.0};
    auto& layers = m.network.mutable_layers();
    const auto idx = m.network.trainable_indices();
    const auto op_tag = static_cast<std::uint64_t>(spec.op);

    for (std::size_t s = 0; s < idx.size(); ++s) {
        if (counts[s] == 0) continue;
        Layer& l = layers[idx[s]];
        std::mt19937_64 rng(derive_seed(spec.seed, {op_tag, s}));
        const std::size_t fan = l.fan_in();
        switch (spec.op) {
            case MutationOperator::GF: {
                const double sigma = 0.5 * layer_std(l.weights.data);
                std::normal_distribution<double> noise(0.0, sigma > 0.0 ? sigma : 1e-3);
                for (auto w : choose(l.weights.size(), counts[s], rng)) {
                    const float before = l.weights.data[w];
                    float after = before;
                    // A draw too small to change the float is redrawn so the
                    // selected weight always differs.
                    while (after == before) after = static_cast<float>(before + noise(rng));
                    l.weights.data[w] = after;
                }
                break;
            }
            case MutationOperator::WS: {
                std::vector<std::size_t> perm(fan);
                std::vector<float> buf(fan);
                for (auto j : choose(l.neurons(), counts[s], rng)) {
                    float* w = l.weights.data.data() + j * fan;
                    std::iota(perm.begin(), perm.end(), std::size_t{0});
                    do {
                        std::shuffle(perm.begin(), perm.end(), rng);
                    } while (std::is_sorted(perm.begin(), perm.end()));
                    for (std::size_t i = 0; i < fan; ++i) buf[i] = w[perm[i]];
                    std::copy(buf.begin(), buf.end(), w);
                }
                break;
            }
            case MutationOperator::NEB: {
                Layer& next = layers[idx[s + 1]];
                check_outgoing_layout(l, next);
                for (auto j : choose(l.neurons(), counts[s], rng)) zero_outgoing(next, l.neurons(), j);
                break;
            }
            case MutationOperator::NAI: {
                for (auto j : choose(l.neurons(), counts[s], rng)) {
                    float* w = l.weights.data.data() + j * fan;
                    for (std::size_t i = 0; i < fan; ++i) w[i] = -w[i];
                    l.bias.data[j] = -l.bias.data[j];
                }
                break;
            }
            case MutationOperator::NS: {
                const auto picked = choose(l.neurons(), counts[s], rng);
                for (std::size_t p = 0; p + 1 < picked.size(); p += 2) {
                    const std::size_t a = picked[p], b = picked[p + 1];
                    std::swap_ranges(l.weights.data.begin() + static_cast<std::ptrdiff_t>(a * fan),
                                     l.weights.data.begin() + static_cast<std::ptrdiff_t>((a + 1) * fan),
                                     l.weights.data.begin() + static_cast<std::ptrdiff_t>(b * fan));
                    std::swap(l.bias.data[a], l.bias.data[b]);
                }
                break;
            }
        }
    }
    m.network.mutation = MutationInfo{to_string(spec.op), spec.ratio, spec.seed, m.parent_hash, -1.0};
    return m;
}

FilterMode filter_mode_from_string(const std::string& name) {
    if (name == "diverse_default" || name == "diverse") return FilterMode::diverse_default;
    if (name == "similar") return FilterMode::similar;
    throw ConfigError("unknown filter mode '" + name + "'");
}

double filter_threshold(FilterMode mode) { return mode == FilterMode::similar ? 0.95 : 0.90; }

bool passes_filter(double mutant_accuracy, double parent_accuracy, FilterMode mode) {
    return mutant_accuracy >= filter_threshold(mode) * parent_accuracy;
}

bool accuracy_filter(Mutant& mutant, const Dataset& probe, double parent_accuracy, FilterMode mode) {
    if (probe.size() == 0) throw ConfigError("accuracy filter needs a non-empty probe set");
    mutant.probe_accuracy = accuracy(mutant.network, probe);
    if (mutant.network.mutation) mutant.network.mutation->probe_accuracy = mutant.probe_accuracy;
    return passes_filter(mutant.probe_accuracy, parent_accuracy, mode);
}

}  // namespace muten
