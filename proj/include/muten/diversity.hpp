#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "muten/dataset.hpp"
#include "muten/mutation.hpp"

namespace muten {

/// Last-hidden-layer activations of one model on a probe set, one row per
/// probe sample.
struct FeatureMatrix {
    Eigen::MatrixXd values;

    Eigen::Index rows() const { return values.rows(); }
    Eigen::Index cols() const { return values.cols(); }
};

FeatureMatrix extract_features(const Network& model, const Dataset& probe);

/// Features and probe accuracy from a single pass over the probe set.
struct ProbeRun {
    FeatureMatrix features;
    double accuracy = 0.0;
};
ProbeRun probe_model(const Network& model, const Dataset& probe);

/// Linear CKA: with column-centered X and Y,
/// ||Y^T X||_F^2 / (||X^T X||_F ||Y^T Y||_F).
double linear_cka(const FeatureMatrix& h1, const FeatureMatrix& h2);

/// Symmetric similarity matrix with labeled rows.
struct SimilarityMatrix {
    Eigen::MatrixXd values;
    std::vector<std::string> ids;

    std::size_t size() const { return static_cast<std::size_t>(values.rows()); }

    /// Throws ConfigError when the matrix is not a valid CKA similarity
    /// matrix (unit diagonal, entries in [0,1], symmetric; all to 1e-6).
    void validate() const;

    /// Mean of the off-diagonal entries.
    double mean_off_diagonal() const;

    /// Header row of ids, then one row per model.
    std::string to_csv() const;
};

SimilarityMatrix similarity_matrix(const std::vector<FeatureMatrix>& features, std::vector<std::string> ids);

struct RankVector {
    std::vector<double> scores;
    std::size_t iterations = 0;
};

/// Weighted PageRank by power iteration. Edge weights are the off-diagonal
/// similarities; each column is normalized to sum to one, and a node with no
/// similarity to any other spreads its mass uniformly.
RankVector pagerank(const SimilarityMatrix& sim, double damping = 0.85, double tol = 1e-8,
                    std::size_t max_iter = 100000);

enum class SelectionRule {
    evict_most_central,   // diverse: drop the highest PageRank score
    evict_least_central,  // similar: drop the lowest score
    first_n,              // random: keep the first n accepted mutants
};

std::string to_string(SelectionRule rule);

struct GreedyOptions {
    std::size_t n = 5;
    /// Iterations; 0 means 4 * n.
    std::size_t iterations = 0;
    SelectionRule rule = SelectionRule::evict_most_central;
    std::optional<FilterMode> filter = FilterMode::diverse_default;
    std::uint64_t seed = 0;
};

struct EvictionEvent {
    std::size_t iteration = 0;
    std::vector<std::uint64_t> candidate_seeds;
    std::vector<double> scores;
    std::size_t evicted = 0;  // index into candidate_seeds / scores
};

struct GreedyResult {
    std::vector<Mutant> mutants;
    SimilarityMatrix similarity;
    std::vector<EvictionEvent> evictions;
    std::size_t generated = 0;
    std::size_t rejected = 0;
    double parent_accuracy = 0.0;
    /// Set when fewer than n mutants survived the filter within the budget.
    bool partial = false;
};

/// Greedy diverse-mutant generation. Each iteration draws an (operator,
/// ratio) pair uniformly from the 20 pairs, mutates the model, and either
/// adds the mutant to the set or, once the set holds n, ranks the n+1
/// candidates by PageRank over their CKA similarities and evicts one.
/// Deterministic in (model, probe, options).
GreedyResult greedy_generate(const Network& model, const Dataset& probe, const GreedyOptions& opts);

}  // namespace muten
