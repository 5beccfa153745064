#include "muten/diversity.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <iomanip>
#include <random>
#include <sstream>

#include "muten/engine.hpp"
#include "muten/rng.hpp"

namespace muten {

ProbeRun probe_model(const Network& model, const Dataset& probe) {
    if (probe.size() < 2) throw ConfigError("probe set needs at least 2 samples");
    const auto m = static_cast<Eigen::Index>(probe.size());
    ProbeRun run;
    run.features.values.resize(m, static_cast<Eigen::Index>(model.feature_size()));
    std::size_t correct = 0;
    for (Eigen::Index i = 0; i < m; ++i) {
        const auto r = forward(model, probe.image(static_cast<std::size_t>(i)));
        for (std::size_t j = 0; j < r.features.size(); ++j) {
            run.features.values(i, static_cast<Eigen::Index>(j)) = r.features[j];
        }
        if (r.predicted == probe.labels[static_cast<std::size_t>(i)]) ++correct;
    }
    run.accuracy = static_cast<double>(correct) / static_cast<double>(m);
    return run;
}

FeatureMatrix extract_features(const Network& model, const Dataset& probe) {
    return probe_model(model, probe).features;
}

double linear_cka(const FeatureMatrix& h1, const FeatureMatrix& h2) {
    if (h1.rows() != h2.rows()) throw ShapeError("CKA inputs must share the probe set (row counts differ)");
    if (h1.rows() < 2) throw ShapeError("CKA needs at least 2 probe samples");
    const Eigen::MatrixXd x = h1.values.rowwise() - h1.values.colwise().mean();
    const Eigen::MatrixXd y = h2.values.rowwise() - h2.values.colwise().mean();
    const double xx = (x.transpose() * x).norm();
    const double yy = (y.transpose() * y).norm();
    if (!(xx > 0.0) || !(yy > 0.0)) {
        throw UndefinedSimilarity("CKA undefined: a feature matrix has zero variance");
    }
    const double yx = (y.transpose() * x).squaredNorm();
    return yx / (xx * yy);
}

void SimilarityMatrix::validate() const {
    constexpr double tol = 1e-6;
    if (values.rows() != values.cols()) throw ConfigError("similarity matrix is not square");
    if (!ids.empty() && ids.size() != size()) throw ConfigError("similarity ids do not match the matrix size");
    for (Eigen::Index i = 0; i < values.rows(); ++i) {
        if (std::abs(values(i, i) - 1.0) > tol) throw ConfigError("similarity diagonal must be 1");
        for (Eigen::Index j = 0; j < values.cols(); ++j) {
            const double v = values(i, j);
            if (!(v >= -tol && v <= 1.0 + tol)) throw ConfigError("similarity entries must lie in [0,1]");
            if (std::abs(v - values(j, i)) > tol) throw ConfigError("similarity matrix is not symmetric");
        }
    }
}

double SimilarityMatrix::mean_off_diagonal() const {
    const auto k = values.rows();
    if (k < 2) return 0.0;
    return (values.sum() - values.trace()) / static_cast<double>(k * (k - 1));
}

std::string SimilarityMatrix::to_csv() const {
    std::ostringstream os;
    os << std::setprecision(9);
    os << "model";
    for (const auto& id : ids) os << ',' << id;
    os << '\n';
    for (Eigen::Index i = 0; i < values.rows(); ++i) {
        os << (i < static_cast<Eigen::Index>(ids.size()) ? ids[static_cast<std::size_t>(i)] : std::to_string(i));
        for (Eigen::Index j = 0; j < values.cols(); ++j) os << ',' << values(i, j);
        os << '\n';
    }
    return os.str();
}

SimilarityMatrix similarity_matrix(const std::vector<FeatureMatrix>& features, std::vector<std::string> ids) {
    const auto k = static_cast<Eigen::Index>(features.size());
    SimilarityMatrix s{Eigen::MatrixXd::Identity(k, k), std::move(ids)};
    for (Eigen::Index i = 0; i < k; ++i) {
        for (Eigen::Index j = i + 1; j < k; ++j) {
            s.values(i, j) = s.values(j, i) =
                linear_cka(features[static_cast<std::size_t>(i)], features[static_cast<std::size_t>(j)]);
        }
    }
    return s;
}

RankVector pagerank(const SimilarityMatrix& sim, double damping, double tol, std::size_t max_iter) {
    const auto k = sim.values.rows();
    if (k < 2 || sim.values.cols() != k) throw ConfigError("pagerank needs a square matrix with at least 2 nodes");

    // Column-stochastic transition matrix: mass leaves node j along its
    // similarity edges (self-loops excluded).
    Eigen::MatrixXd p = sim.values;
    p.diagonal().setZero();
    p = p.cwiseMax(0.0);
    for (Eigen::Index j = 0; j < k; ++j) {
        const double out = p.col(j).sum();
        if (out > 0.0) {
            p.col(j) /= out;
        } else {
            p.col(j).setConstant(1.0 / static_cast<double>(k));
        }
    }

    Eigen::VectorXd r = Eigen::VectorXd::Constant(k, 1.0 / static_cast<double>(k));
    const double teleport = (1.0 - damping) / static_cast<double>(k);
    RankVector out;
    for (std::size_t it = 1; it <= max_iter; ++it) {
        Eigen::VectorXd next = (damping * (p * r)).array() + teleport;
        next /= next.sum();
        const double change = (next - r).cwiseAbs().maxCoeff();
        r = std::move(next);
        out.iterations = it;
        if (change < tol) break;
    }
    out.scores.assign(r.data(), r.data() + k);
    return out;
}

std::string to_string(SelectionRule rule) {
    switch (rule) {
        case SelectionRule::evict_most_central: return "diverse";
        case SelectionRule::evict_least_central: return "similar";
        case SelectionRule::first_n: return "random";
    }
    return "?";
}

namespace {

struct Candidate {
    Mutant mutant;
    FeatureMatrix features;
};

std::string mutant_id(const Mutant& m) {
    std::ostringstream os;
    os << to_string(m.spec.op) << '@' << m.spec.ratio << '#' << std::hex << m.spec.seed;
    return os.str();
}

}  // namespace

GreedyResult greedy_generate(const Network& model, const Dataset& probe, const GreedyOptions& opts) {
    if (opts.n == 0) throw ConfigError("greedy generation needs n >= 1");
    const std::size_t ite = opts.iterations == 0 ? 4 * opts.n : opts.iterations;
    if (ite < opts.n) throw ConfigError("iteration count must be at least n");

    GreedyResult result;
    result.parent_accuracy = probe_model(model, probe).accuracy;
    const auto pairs = operator_ratio_pairs();

    std::vector<Candidate> members;
    Eigen::MatrixXd d(0, 0);  // CKA over current members

    for (std::size_t it = 0; it < ite; ++it) {
        if (opts.rule == SelectionRule::first_n && members.size() == opts.n) break;

        std::mt19937_64 rng(derive_seed(opts.seed, {it}));
        std::uniform_int_distribution<std::size_t> pick(0, pairs.size() - 1);
        const auto [op, ratio] = pairs[pick(rng)];
        std::optional<Mutant> made;
        for (int attempt = 0; attempt < 16 && !made; ++attempt) {
            try {
                made = mutate(model, MutationSpec{op, ratio, rng()});
            } catch (const DegenerateMutation&) {
            }
        }
        if (!made) continue;
        ++result.generated;

        auto run = probe_model(made->network, probe);
        made->probe_accuracy = run.accuracy;
        made->network.mutation->probe_accuracy = run.accuracy;
        if (opts.filter && !passes_filter(run.accuracy, result.parent_accuracy, *opts.filter)) {
            ++result.rejected;
            continue;
        }

        // Similarities of the newcomer against every current member.
        const auto k = static_cast<Eigen::Index>(members.size());
        Eigen::MatrixXd grown = Eigen::MatrixXd::Identity(k + 1, k + 1);
        grown.topLeftCorner(k, k) = d;
        for (Eigen::Index i = 0; i < k; ++i) {
            grown(i, k) = grown(k, i) = linear_cka(members[static_cast<std::size_t>(i)].features, run.features);
        }
        members.push_back({std::move(*made), std::move(run.features)});

        if (members.size() <= opts.n) {
            d = std::move(grown);
            continue;
        }

        SimilarityMatrix cand{grown, {}};
        const auto rank = pagerank(cand);
        std::size_t evict = 0;
        for (std::size_t i = 1; i < rank.scores.size(); ++i) {
            const bool better = opts.rule == SelectionRule::evict_most_central ? rank.scores[i] >= rank.scores[evict]
                                                                               : rank.scores[i] <= rank.scores[evict];
            if (better) evict = i;
        }
        EvictionEvent ev;
        ev.iteration = it;
        ev.scores = rank.scores;
        ev.evicted = evict;
        for (const auto& c : members) ev.candidate_seeds.push_back(c.mutant.spec.seed);
        const double extreme = opts.rule == SelectionRule::evict_most_central
                                   ? *std::max_element(rank.scores.begin(), rank.scores.end())
                                   : *std::min_element(rank.scores.begin(), rank.scores.end());
        if (rank.scores[evict] != extreme) throw Error("internal: eviction did not pick the extreme PageRank score");
        result.evictions.push_back(std::move(ev));

        members.erase(members.begin() + static_cast<std::ptrdiff_t>(evict));
        std::vector<Eigen::Index> keep;
        for (Eigen::Index i = 0; i <= k; ++i) {
            if (i != static_cast<Eigen::Index>(evict)) keep.push_back(i);
        }
        d.resize(k, k);
        for (Eigen::Index a = 0; a < k; ++a) {
            for (Eigen::Index b = 0; b < k; ++b) d(a, b) = grown(keep[a], keep[b]);
        }
    }

    result.partial = members.size() < opts.n;
    std::vector<std::string> ids;
    for (auto& c : members) {
        ids.push_back(mutant_id(c.mutant));
        result.mutants.push_back(std::move(c.mutant));
    }
    result.similarity = SimilarityMatrix{d, std::move(ids)};
    return result;
}

}  // namespace muten
