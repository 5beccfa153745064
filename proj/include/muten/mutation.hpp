#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "muten/dataset.hpp"
#include "muten/network.hpp"

namespace muten {

/// Model-level operators: Gaussian fuzzing, weight shuffling, neuron effect
/// blocking, neuron activation inverse, neuron switch.
enum class MutationOperator { GF, WS, NEB, NAI, NS };

inline constexpr std::array<MutationOperator, 5> kMutationOperators = {
    MutationOperator::GF, MutationOperator::WS, MutationOperator::NEB, MutationOperator::NAI,
    MutationOperator::NS};
inline constexpr std::array<double, 4> kMutationRatios = {0.01, 0.02, 0.03, 0.04};

std::string to_string(MutationOperator op);
MutationOperator mutation_operator_from_string(const std::string& name);

struct MutationSpec {
    MutationOperator op = MutationOperator::GF;
    double ratio = 0.01;
    std::uint64_t seed = 0;

    /// True when ratio is one of kMutationRatios.
    bool standard_ratio() const noexcept;
};

/// The 20 (operator, ratio) pairs, operator-major.
std::array<std::pair<MutationOperator, double>, 20> operator_ratio_pairs();

struct Mutant {
    Network network;
    MutationSpec spec;
    std::string parent_hash;
    double probe_accuracy = -1.0;
};

/// Number of targets the operator selects in each trainable layer (zero for
/// layers the operator does not touch).
std::vector<std::size_t> mutation_targets(const Network& net, const MutationSpec& spec);

/// Applies one operator to a copy of `net`. Every parameter outside the
/// selected targets keeps its exact bit pattern.
///
/// GF adds N(0, (0.5 * layer weight std)^2) noise to selected weights. WS
/// permutes the incoming weights of selected neurons. NEB zeroes the outgoing
/// weights of selected hidden neurons. NAI negates incoming weights and bias
/// of selected hidden neurons. NS swaps incoming weights and bias between
/// disjoint pairs of hidden neurons.
///
/// Throws DegenerateMutation when no layer has a target; the caller should
/// draw another seed.
Mutant mutate(const Network& net, const MutationSpec& spec);

enum class FilterMode { diverse_default, similar };

FilterMode filter_mode_from_string(const std::string& name);

/// Fraction of parent accuracy a mutant must keep: 0.90 or 0.95.
double filter_threshold(FilterMode mode);

bool passes_filter(double mutant_accuracy, double parent_accuracy, FilterMode mode);

/// Evaluates the mutant on the probe set, records probe_accuracy and returns
/// whether it keeps enough of the parent's accuracy.
bool accuracy_filter(Mutant& mutant, const Dataset& probe, double parent_accuracy, FilterMode mode);

}  // namespace muten
