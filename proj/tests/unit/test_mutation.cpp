#include <doctest.h>

#include <algorithm>
#include <set>

#include "helpers.hpp"
#include "muten/errors.hpp"
#include "muten/mutation.hpp"

using namespace muten;

namespace {

using testing::blocked;
using testing::changed_rows;
using testing::changed_weights;
using testing::expected;
using testing::row;

Network lenet(std::uint64_t seed) {
    auto net = make_lenet();
    init_he_uniform(net, seed);
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<float> u(-0.1f, 0.1f);
    for (auto& l : net.mutable_layers())
        for (auto& b : l.bias.data) b = u(rng);
    return net;
}

}  // namespace

TEST_CASE("names and the 20 operator-ratio pairs") {
    std::set<std::pair<int, double>> seen;
    for (auto [op, r] : operator_ratio_pairs()) seen.insert({static_cast<int>(op), r});
    CHECK(seen.size() == 20);
    for (auto op : kMutationOperators) CHECK(mutation_operator_from_string(to_string(op)) == op);
    CHECK_THROWS_AS(mutation_operator_from_string("GFX"), ConfigError);
    CHECK(MutationSpec{MutationOperator::GF, 0.03, 0}.standard_ratio());
    CHECK_FALSE(MutationSpec{MutationOperator::GF, 0.05, 0}.standard_ratio());
}

TEST_CASE("each operator modifies exactly the expected number of elements") {
    const auto parent = lenet(1);
    const auto idx = parent.trainable_indices();
    for (int percent = 1; percent <= 4; ++percent) {
        const double ratio = percent / 100.0;
        for (auto op : kMutationOperators) {
            CAPTURE(to_string(op));
            CAPTURE(percent);
            const auto m = mutate(parent, {op, ratio, 1000u + static_cast<unsigned>(percent)});
            const auto counts = mutation_targets(parent, {op, ratio, 0});
            for (std::size_t s = 0; s < idx.size(); ++s) {
                const Layer& a = parent.layers()[idx[s]];
                const Layer& b = m.network.layers()[idx[s]];
                const bool last = s + 1 == idx.size();
                switch (op) {
                    case MutationOperator::GF:
                        CHECK(counts[s] == expected(percent, a.weights.size()));
                        CHECK(changed_weights(a, b) == counts[s]);
                        CHECK(a.bias.data == b.bias.data);
                        break;
                    case MutationOperator::WS: {
                        CHECK(counts[s] == expected(percent, a.neurons()));
                        CHECK(changed_rows(a, b) == counts[s]);
                        CHECK(a.bias.data == b.bias.data);
                        for (std::size_t j = 0; j < a.neurons(); ++j) {
                            auto ra = row(a, j), rb = row(b, j);
                            std::sort(ra.begin(), ra.end());
                            std::sort(rb.begin(), rb.end());
                            CHECK(ra == rb);
                        }
                        break;
                    }
                    case MutationOperator::NEB:
                        if (last) {
                            CHECK(counts[s] == 0);
                            break;
                        }
                        CHECK(counts[s] == expected(percent, a.neurons()));
                        // Only the next layer's incoming weights change.
                        CHECK(a.bias.data == b.bias.data);
                        if (s == 0) CHECK(changed_weights(a, b) == 0);
                        CHECK(blocked(a, parent.layers()[idx[s + 1]], m.network.layers()[idx[s + 1]]) == counts[s]);
                        break;
                    case MutationOperator::NAI: {
                        if (last) {
                            CHECK(counts[s] == 0);
                            CHECK(changed_rows(a, b) == 0);
                            break;
                        }
                        CHECK(counts[s] == expected(percent, a.neurons()));
                        std::size_t negated = 0;
                        for (std::size_t j = 0; j < a.neurons(); ++j) {
                            auto ra = row(a, j);
                            for (auto& v : ra) v = -v;
                            if (ra == row(b, j) && b.bias.data[j] == -a.bias.data[j]) ++negated;
                            else CHECK(row(a, j) == row(b, j));
                        }
                        CHECK(negated == counts[s]);
                        break;
                    }
                    case MutationOperator::NS: {
                        if (last) {
                            CHECK(counts[s] == 0);
                            break;
                        }
                        const std::size_t picked = expected(percent, a.neurons());
                        CHECK(counts[s] == 2 * std::min((picked + 1) / 2, a.neurons() / 2));
                        CHECK(changed_rows(a, b) == counts[s]);
                        std::multiset<std::vector<float>> ra, rb;
                        for (std::size_t j = 0; j < a.neurons(); ++j) {
                            ra.insert(row(a, j));
                            rb.insert(row(b, j));
                        }
                        CHECK(ra == rb);
                        break;
                    }
                }
            }
            if (op != MutationOperator::NEB) {
                // Nothing outside the mutated layers' own parameters moves.
                for (std::size_t i = 0; i < parent.layers().size(); ++i)
                    if (!parent.layers()[i].trainable()) CHECK(parent.layers()[i].weights.data == m.network.layers()[i].weights.data);
            }
        }
    }
}

TEST_CASE("NS and NAI applied twice restore the parent bit-exactly") {
    for (std::uint64_t seed : {1u, 2u, 3u}) {
        const auto parent = lenet(seed);
        for (auto op : {MutationOperator::NS, MutationOperator::NAI}) {
            for (double r : kMutationRatios) {
                const MutationSpec spec{op, r, seed * 31};
                const auto once = mutate(parent, spec);
                CHECK_FALSE(same_weights(once.network, parent));
                const auto twice = mutate(once.network, spec);
                CHECK(same_weights(twice.network, parent));
            }
        }
    }
}

TEST_CASE("mutation is deterministic in the seed") {
    const auto parent = lenet(4);
    for (auto op : kMutationOperators) {
        const auto a = mutate(parent, {op, 0.02, 5});
        const auto b = mutate(parent, {op, 0.02, 5});
        const auto c = mutate(parent, {op, 0.02, 6});
        CHECK(same_weights(a.network, b.network));
        CHECK_FALSE(same_weights(a.network, c.network));
        CHECK(a.parent_hash == weight_digest(parent));
        CHECK(a.spec.seed == 5);
    }
}

TEST_CASE("degenerate and invalid mutations") {
    auto single = NetworkBuilder({4}).dense(3).build();
    std::mt19937_64 rng(1);
    testing::fill_uniform(single, rng, 1.0f);
    for (auto op : {MutationOperator::NEB, MutationOperator::NAI, MutationOperator::NS})
        CHECK_THROWS_AS(mutate(single, {op, 0.01, 1}), DegenerateMutation);
    CHECK_NOTHROW(mutate(single, {MutationOperator::GF, 0.01, 1}));
    CHECK_NOTHROW(mutate(single, {MutationOperator::WS, 0.01, 1}));

    auto narrow = NetworkBuilder({1}).dense(1).build();
    CHECK_THROWS_AS(mutate(narrow, {MutationOperator::WS, 0.5, 1}), DegenerateMutation);

    CHECK_THROWS_AS(mutate(single, {MutationOperator::GF, 0.0, 1}), ConfigError);
    CHECK_THROWS_AS(mutate(single, {MutationOperator::GF, 1.5, 1}), ConfigError);
    CHECK_NOTHROW(mutate(single, {MutationOperator::GF, 1.0, 1}));
}

TEST_CASE("GF changes every selected weight even when sigma is zero") {
    auto net = NetworkBuilder({4}).dense(3).relu().dense(2).build();  // all-zero weights
    const auto m = mutate(net, {MutationOperator::GF, 0.5, 3});
    const auto idx = net.trainable_indices();
    CHECK(changed_weights(net.layers()[idx[0]], m.network.layers()[idx[0]]) == 6);
    CHECK(changed_weights(net.layers()[idx[1]], m.network.layers()[idx[1]]) == 3);
}

TEST_CASE("accuracy filter thresholds") {
    CHECK(filter_threshold(FilterMode::diverse_default) == 0.90);
    CHECK(filter_threshold(FilterMode::similar) == 0.95);
    CHECK(passes_filter(0.90, 1.0, FilterMode::diverse_default));
    CHECK_FALSE(passes_filter(0.89, 1.0, FilterMode::diverse_default));
    CHECK_FALSE(passes_filter(0.94, 1.0, FilterMode::similar));
    CHECK(filter_mode_from_string("similar") == FilterMode::similar);
    CHECK_THROWS_AS(filter_mode_from_string("odd"), ConfigError);

    const auto data = testing::toy_dataset(40, 2, 1);
    auto net = testing::toy_cnn(2);
    init_he_uniform(net, 1);
    auto m = mutate(net, {MutationOperator::GF, 0.01, 1});
    const bool ok = accuracy_filter(m, data, 0.0, FilterMode::similar);
    CHECK(ok);
    CHECK(m.probe_accuracy >= 0.0);
    CHECK(m.network.mutation->probe_accuracy == m.probe_accuracy);
    CHECK_THROWS_AS(accuracy_filter(m, Dataset{}, 0.5, FilterMode::similar), ConfigError);
}
