#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "muten/attacks.hpp"
#include "muten/dataset.hpp"
#include "muten/diversity.hpp"

namespace muten {

enum class MutantMode { none, diverse, random, similar };

std::string to_string(MutantMode mode);
MutantMode mutant_mode_from_string(const std::string& name);

/// Greedy-generation settings that realize a mutant mode.
GreedyOptions greedy_options_for(MutantMode mode, std::size_t n, std::uint64_t seed, std::size_t iterations = 0);

struct AttackGrid {
    AttackFamily family = AttackFamily::fgsm;
    std::vector<double> params;
};

/// Standard MNIST grids: eps in {0.1,...,0.4} or c in {7,...,13}.
std::vector<double> default_grid(AttackFamily family);

struct ExperimentPlan {
    std::filesystem::path dataset;  // MNIST IDX directory
    std::filesystem::path victim;   // model file
    std::vector<AttackGrid> grid;
    std::size_t mutant_count = 5;
    MutantMode mode = MutantMode::diverse;
    std::size_t repeats = 5;
    std::size_t sample_budget = 500;
    std::uint64_t seed = 2021;
    std::size_t probe_size = 512;
    /// Greedy iterations; 0 means 4 * mutant_count.
    std::size_t iterations = 0;
    /// Also attack the bare victim (mode none) in every repeat.
    bool include_baseline = true;
    /// 0 means std::thread::hardware_concurrency().
    std::size_t workers = 0;
    std::function<void(const std::string&)> log;

    void validate() const;
};

struct SuccessRateRecord {
    std::string attack;
    double param = 0.0;
    std::size_t mutant_count = 0;
    std::string mode;
    std::size_t repeat = 0;
    double success_rate = 0.0;
    double mean_time_s = 0.0;
    bool baseline = false;

    std::size_t attacked = 0;   // correctly classified inputs attacked
    std::size_t succeeded = 0;
    double mean_queries = 0.0;
    std::uint64_t mutant_seed = 0;
    std::uint64_t attack_seed = 0;
    std::vector<std::string> mutant_specs;
};

/// Provenance of one repeat's mutant set.
struct RepeatInfo {
    std::size_t repeat = 0;
    std::size_t mutant_count = 0;
    std::string mode;
    std::uint64_t mutant_seed = 0;
    std::vector<std::string> mutant_specs;
    double mean_cka = 0.0;
    bool partial = false;
    std::size_t generated = 0;
    std::size_t rejected = 0;
};

struct ExperimentResult {
    std::vector<SuccessRateRecord> records;
    std::vector<RepeatInfo> repeats;
    std::size_t budget_samples = 0;
    std::size_t correct_samples = 0;
    double victim_accuracy = 0.0;
    std::map<std::string, std::string> notes;

    /// Mean success rate over repeats for one (attack, param, count, mode).
    double mean_success(const std::string& attack, double param, std::size_t mutant_count,
                        const std::string& mode) const;
    double mean_time(const std::string& attack, double param, std::size_t mutant_count, const std::string& mode) const;

    /// Per-run rows sorted, followed by across-repeat mean rows.
    std::string to_csv(bool with_means = true) const;
    /// Seeds, mutant specs, sample counts and notes as JSON.
    std::string metadata_json() const;
    void write(const std::filesystem::path& csv_path) const;
};

inline constexpr const char* kCsvHeader = "attack,param,mutant_count,mode,repeat,success_rate,mean_time_s,baseline";

/// Shared inputs of an experiment: test data, victim, probe set and the
/// correctly classified attack samples.
struct ExperimentContext {
    Dataset test;
    std::shared_ptr<const Network> victim;
    Dataset probe;
    std::vector<std::size_t> budget;   // sampled test indices
    std::vector<std::size_t> correct;  // subset of budget the victim gets right
    double victim_accuracy = 0.0;      // on the budget sample
};

ExperimentContext make_context(const ExperimentPlan& plan, Dataset test, std::shared_ptr<const Network> victim);

/// Runs every grid point against the baseline and/or ensemble for each repeat.
ExperimentResult run_experiment(const ExperimentPlan& plan);
ExperimentResult run_experiment(const ExperimentPlan& plan, const ExperimentContext& ctx);

/// One fixed grid point per attack, mutant counts in `counts` (0 = baseline).
ExperimentResult sweep_mutant_count(const ExperimentPlan& plan, const ExperimentContext& ctx,
                                    const std::vector<std::size_t>& counts,
                                    const std::vector<AttackConfig>& attacks);

/// Fixed parameters for the mutant-count sweep: eps 0.2 for FGSM/BIM/PGD
/// and c = 10 for C&W (MNIST-scale stand-ins for eps = 8/255, c = 0.3).
std::vector<AttackConfig> sweep_attack_defaults();

/// Same grid and seeds for each mode; ensembles of equal size.
ExperimentResult compare_mutant_modes(const ExperimentPlan& plan, const ExperimentContext& ctx,
                                      const std::vector<MutantMode>& modes);

/// |d loss / d x| per pixel, shaped like the image (rows x cols).
std::vector<std::vector<float>> gradient_map(const GradientProvider& provider, const Tensor& x, std::size_t label,
                                             const LossSpec& loss = {});
void write_gradient_map(const std::vector<std::vector<float>>& map, const std::filesystem::path& out);

/// Attacks `samples` with a single model and with ensembles of k members
/// (original + k-1 mutants) and returns mean per-sample attack time for
/// each k (k = 1 first).
std::vector<std::pair<std::size_t, double>> attack_time_by_members(
    const ExperimentContext& ctx, const std::vector<Mutant>& mutants, const std::vector<std::size_t>& ks,
    const AttackConfig& cfg, std::size_t samples, std::uint64_t seed);

/// Deterministic parallel loop; fn(i) runs once for each i in [0, n).
void parallel_for(std::size_t n, std::size_t workers, const std::function<void(std::size_t)>& fn);

}  // namespace muten
