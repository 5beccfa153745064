#include <doctest.h>

#include <Eigen/Dense>
#include <Eigen/QR>

#include "helpers.hpp"
#include "muten/diversity.hpp"
#include "muten/errors.hpp"
#include "muten/train.hpp"

using namespace muten;

namespace {

Eigen::MatrixXd random_matrix(std::mt19937_64& rng, Eigen::Index r, Eigen::Index c) {
    std::normal_distribution<double> n(0.0, 1.0);
    Eigen::MatrixXd m(r, c);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
    return m;
}

// Kernel-form HSIC with explicit centering matrices, O(n^3).
double hsic(const Eigen::MatrixXd& k, const Eigen::MatrixXd& l) {
    const auto n = k.rows();
    const Eigen::MatrixXd h =
        Eigen::MatrixXd::Identity(n, n) - Eigen::MatrixXd::Constant(n, n, 1.0 / static_cast<double>(n));
    return (k * h * l * h).trace() / static_cast<double>((n - 1) * (n - 1));
}

double cka_oracle(const Eigen::MatrixXd& x, const Eigen::MatrixXd& y) {
    const Eigen::MatrixXd k = x * x.transpose(), l = y * y.transpose();
    return hsic(k, l) / std::sqrt(hsic(k, k) * hsic(l, l));
}

// Stationary vector by a direct linear solve of r = d*P*r + (1-d)/k * 1.
Eigen::VectorXd pagerank_oracle(const Eigen::MatrixXd& s, double d) {
    const auto k = s.rows();
    Eigen::MatrixXd p = s;
    for (Eigen::Index j = 0; j < k; ++j) {
        p(j, j) = 0.0;
        const double out = p.col(j).sum();
        if (out > 0.0) p.col(j) /= out;
        else p.col(j).setConstant(1.0 / static_cast<double>(k));
    }
    const Eigen::MatrixXd a = Eigen::MatrixXd::Identity(k, k) - d * p;
    const Eigen::VectorXd b = Eigen::VectorXd::Constant(k, (1.0 - d) / static_cast<double>(k));
    Eigen::VectorXd r = a.fullPivLu().solve(b);
    return r / r.sum();
}

}  // namespace

TEST_CASE("linear CKA basic properties") {
    std::mt19937_64 rng(1);
    for (int t = 0; t < 20; ++t) {
        const FeatureMatrix x{random_matrix(rng, 10, 4)}, y{random_matrix(rng, 10, 4)};
        CHECK(linear_cka(x, x) == doctest::Approx(1.0).epsilon(1e-9));
        CHECK(linear_cka(x, y) == doctest::Approx(linear_cka(y, x)).epsilon(1e-12));
        const double v = linear_cka(x, y);
        CHECK(v >= 0.0);
        CHECK(v <= 1.0 + 1e-12);
        CHECK(v == doctest::Approx(cka_oracle(x.values, y.values)).epsilon(1e-9));

        const Eigen::MatrixXd q = random_matrix(rng, 4, 4).householderQr().householderQ();
        CHECK(linear_cka(FeatureMatrix{x.values * q * 3.7}, y) == doctest::Approx(v).epsilon(1e-9));
        // Column offsets are removed by centering.
        Eigen::MatrixXd shifted = x.values;
        shifted.rowwise() += Eigen::RowVectorXd::Constant(4, 5.0);
        CHECK(linear_cka(FeatureMatrix{shifted}, y) == doctest::Approx(v).epsilon(1e-9));
    }
}

TEST_CASE("CKA handles different widths and rejects degenerate input") {
    std::mt19937_64 rng(2);
    const FeatureMatrix x{random_matrix(rng, 12, 3)}, y{random_matrix(rng, 12, 7)};
    CHECK(linear_cka(x, y) == doctest::Approx(cka_oracle(x.values, y.values)).epsilon(1e-9));
    const FeatureMatrix flat{Eigen::MatrixXd::Constant(12, 3, 2.0)};
    CHECK_THROWS_AS(linear_cka(flat, y), UndefinedSimilarity);
    CHECK_THROWS_AS(linear_cka(x, FeatureMatrix{random_matrix(rng, 11, 3)}), ShapeError);
}

TEST_CASE("similarity matrix validation and CSV") {
    std::mt19937_64 rng(3);
    std::vector<FeatureMatrix> f;
    for (int i = 0; i < 3; ++i) f.push_back({random_matrix(rng, 8, 3)});
    const auto s = similarity_matrix(f, {"a", "b", "c"});
    CHECK_NOTHROW(s.validate());
    CHECK(s.values(0, 0) == doctest::Approx(1.0));
    CHECK(s.values(0, 2) == s.values(2, 0));
    const double mean = (s.values(0, 1) + s.values(0, 2) + s.values(1, 2)) / 3.0;
    CHECK(s.mean_off_diagonal() == doctest::Approx(mean));
    const auto csv = s.to_csv();
    CHECK(csv.rfind("model,a,b,c\n", 0) == 0);
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 4);

    auto bad = s;
    bad.values(0, 1) = 1.5;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = s;
    bad.values(1, 1) = 0.9;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = s;
    bad.values(0, 1) += 0.01;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("pagerank is a probability vector and matches the linear-solve oracle") {
    std::mt19937_64 rng(4);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int t = 0; t < 50; ++t) {
        const Eigen::Index k = 2 + static_cast<Eigen::Index>(rng() % 7);
        Eigen::MatrixXd s = Eigen::MatrixXd::Identity(k, k);
        for (Eigen::Index i = 0; i < k; ++i)
            for (Eigen::Index j = i + 1; j < k; ++j) s(i, j) = s(j, i) = u(rng) < 0.2 ? 0.0 : u(rng);
        const auto r = pagerank(SimilarityMatrix{s, {}});
        double sum = 0.0;
        for (double v : r.scores) {
            CHECK(v >= 0.0);
            sum += v;
        }
        CHECK(sum == doctest::Approx(1.0).epsilon(1e-9));
        const auto oracle = pagerank_oracle(s, 0.85);
        for (Eigen::Index i = 0; i < k; ++i) CHECK(r.scores[static_cast<std::size_t>(i)] == doctest::Approx(oracle(i)).epsilon(1e-7));
    }
}

TEST_CASE("pagerank on symmetric complete graphs is uniform") {
    for (Eigen::Index k = 2; k <= 8; ++k) {
        Eigen::MatrixXd s = Eigen::MatrixXd::Constant(k, k, 0.6);
        s.diagonal().setOnes();
        for (double v : pagerank(SimilarityMatrix{s, {}}).scores) CHECK(v == doctest::Approx(1.0 / k).epsilon(1e-9));
    }
    CHECK_THROWS_AS(pagerank(SimilarityMatrix{Eigen::MatrixXd::Identity(1, 1), {}}), ConfigError);
}

TEST_CASE("a hub similar to everyone ranks highest") {
    Eigen::MatrixXd s = Eigen::MatrixXd::Identity(4, 4);
    for (int i = 1; i < 4; ++i) s(0, i) = s(i, 0) = 0.9;
    s(1, 2) = s(2, 1) = 0.1;
    const auto r = pagerank(SimilarityMatrix{s, {}}).scores;
    CHECK(std::max_element(r.begin(), r.end()) - r.begin() == 0);
}

namespace {

struct Trained {
    Network net;
    Dataset probe;
};

const Trained& trained_toy() {
    static const Trained t = [] {
        const auto data = testing::toy_dataset(300, 4, 11);
        auto net = testing::toy_cnn(4);
        init_he_uniform(net, 2);
        TrainConfig cfg;
        cfg.epochs = 3;
        cfg.batch_size = 8;
        auto r = train(net, data, nullptr, cfg);
        return Trained{std::move(r.net), testing::toy_dataset(64, 4, 12)};
    }();
    return t;
}

}  // namespace

TEST_CASE("feature extraction reads the last hidden layer") {
    const auto& t = trained_toy();
    const auto f = extract_features(t.net, t.probe);
    CHECK(f.rows() == 64);
    CHECK(f.cols() == 12);
    const auto r = forward(t.net, t.probe.tensor(5));
    for (Eigen::Index j = 0; j < f.cols(); ++j) CHECK(f.values(5, j) == doctest::Approx(r.features[static_cast<std::size_t>(j)]));
    CHECK_THROWS_AS(probe_model(t.net, t.probe.subset(std::vector<std::size_t>{0})), ConfigError);
}

TEST_CASE("greedy generation: size, determinism, evictions") {
    const auto& t = trained_toy();
    GreedyOptions o;
    o.n = 3;
    o.seed = 9;
    const auto a = greedy_generate(t.net, t.probe, o);
    const auto b = greedy_generate(t.net, t.probe, o);
    CHECK(a.mutants.size() == 3);
    CHECK_FALSE(a.partial);
    CHECK(a.generated == 12);
    CHECK(a.evictions.size() == a.generated - a.rejected - 3);
    for (std::size_t i = 0; i < a.mutants.size(); ++i) CHECK(same_weights(a.mutants[i].network, b.mutants[i].network));
    CHECK_NOTHROW(a.similarity.validate());
    CHECK(a.similarity.size() == 3);
    for (const auto& ev : a.evictions) {
        CHECK(ev.scores.size() == 4);
        CHECK(ev.scores[ev.evicted] == *std::max_element(ev.scores.begin(), ev.scores.end()));
    }
    for (const auto& m : a.mutants) CHECK(m.probe_accuracy >= 0.9 * a.parent_accuracy);

    o.rule = SelectionRule::evict_least_central;
    const auto s = greedy_generate(t.net, t.probe, o);
    for (const auto& ev : s.evictions) CHECK(ev.scores[ev.evicted] == *std::min_element(ev.scores.begin(), ev.scores.end()));

    o.rule = SelectionRule::first_n;
    const auto f = greedy_generate(t.net, t.probe, o);
    CHECK(f.evictions.empty());
    CHECK(f.mutants.size() == 3);
    CHECK(f.generated == 3 + f.rejected);

    o.n = 0;
    CHECK_THROWS_AS(greedy_generate(t.net, t.probe, o), ConfigError);
}
