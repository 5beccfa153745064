#include "muten/harness.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <exception>
#include <fstream>
#include <json.hpp>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>
#include <tuple>

#include "muten/model_io.hpp"
#include "muten/rng.hpp"

namespace muten {

std::string to_string(MutantMode mode) {
    switch (mode) {
        case MutantMode::none: return "none";
        case MutantMode::diverse: return "diverse";
        case MutantMode::random: return "random";
        case MutantMode::similar: return "similar";
    }
    return "?";
}

MutantMode mutant_mode_from_string(const std::string& name) {
    for (auto m : {MutantMode::none, MutantMode::diverse, MutantMode::random, MutantMode::similar}) {
        if (to_string(m) == name) return m;
    }
    throw ConfigError("unknown mutant mode '" + name + "' (expected none, diverse, random or similar)");
}

GreedyOptions greedy_options_for(MutantMode mode, std::size_t n, std::uint64_t seed, std::size_t iterations) {
    GreedyOptions o;
    o.n = n;
    o.iterations = iterations;
    o.seed = seed;
    switch (mode) {
        case MutantMode::diverse:
            o.rule = SelectionRule::evict_most_central;
            o.filter = FilterMode::diverse_default;
            break;
        case MutantMode::random:
            o.rule = SelectionRule::first_n;
            o.filter = FilterMode::diverse_default;
            break;
        case MutantMode::similar:
            o.rule = SelectionRule::evict_least_central;
            o.filter = FilterMode::similar;
            break;
        case MutantMode::none: throw ConfigError("mode none builds no mutants");
    }
    return o;
}

std::vector<double> default_grid(AttackFamily family) {
    if (family == AttackFamily::cw) return {7, 8, 9, 10, 11, 12, 13};
    return {0.1, 0.15, 0.2, 0.25, 0.3, 0.35, 0.4};
}

void ExperimentPlan::validate() const {
    if (repeats < 1) throw ConfigError("repeats must be at least 1");
    if (sample_budget < 1) throw ConfigError("sample budget must be at least 1");
    if (probe_size < 2) throw ConfigError("probe set needs at least 2 samples");
    if (mode != MutantMode::none && mutant_count == 0) throw ConfigError("mutant mode needs mutant_count >= 1");
}

void parallel_for(std::size_t n, std::size_t workers, const std::function<void(std::size_t)>& fn) {
    if (workers == 0) workers = std::max(1u, std::thread::hardware_concurrency());
    workers = std::min(workers, n);
    if (workers <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr error;
    std::mutex error_mu;
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) {
        pool.emplace_back([&] {
            for (std::size_t i = next++; i < n; i = next++) {
                try {
                    fn(i);
                } catch (...) {
                    std::lock_guard lock(error_mu);
                    if (!error) error = std::current_exception();
                }
            }
        });
    }
    for (auto& t : pool) t.join();
    if (error) std::rethrow_exception(error);
}

ExperimentContext make_context(const ExperimentPlan& plan, Dataset test, std::shared_ptr<const Network> victim) {
    plan.validate();
    if (!victim) throw ConfigError("experiment needs a victim model");
    if (test.image_size() != shape_size(victim->input_shape())) throw ShapeError("dataset does not fit the victim");
    ExperimentContext ctx;
    ctx.test = std::move(test);
    ctx.victim = std::move(victim);
    const auto probe_idx = sample_indices(ctx.test.size(), plan.probe_size, derive_seed(plan.seed, {0xb0be}));
    ctx.probe = ctx.test.subset(probe_idx);
    ctx.budget = sample_indices(ctx.test.size(), plan.sample_budget, derive_seed(plan.seed, {0xb0d9e7}));
    for (auto i : ctx.budget) {
        if (forward(*ctx.victim, ctx.test.image(i)).predicted == ctx.test.labels[i]) ctx.correct.push_back(i);
    }
    ctx.victim_accuracy = static_cast<double>(ctx.correct.size()) / static_cast<double>(ctx.budget.size());
    return ctx;
}

namespace {

struct SetOutcome {
    std::size_t attacked = 0;
    std::size_t succeeded = 0;
    double mean_time = 0.0;
    double mean_queries = 0.0;
};

std::uint64_t attack_seed_for(std::uint64_t master, std::size_t repeat, std::size_t sample) {
    return derive_seed(master, {2, repeat, sample});
}

SetOutcome attack_samples(const ExperimentContext& ctx, const GradientProvider& provider,
                          const GradientProvider& victim, const AttackConfig& cfg, std::uint64_t master,
                          std::size_t repeat, std::size_t workers) {
    const std::size_t n = ctx.correct.size();
    std::vector<char> ok(n, 0);
    std::vector<double> time(n, 0.0), queries(n, 0.0);
    parallel_for(n, workers, [&](std::size_t i) {
        const auto idx = ctx.correct[i];
        const auto x = ctx.test.tensor(idx);
        // Attack failures (e.g. an aborted C&W run) count as non-success.
        const auto r = run_attack(provider, victim, x, ctx.test.labels[idx], cfg, attack_seed_for(master, repeat, idx));
        ok[i] = r.success ? 1 : 0;
        time[i] = r.wall_time;
        queries[i] = static_cast<double>(r.queries);
    });
    SetOutcome out;
    out.attacked = n;
    for (std::size_t i = 0; i < n; ++i) {
        out.succeeded += static_cast<std::size_t>(ok[i]);
        out.mean_time += time[i];
        out.mean_queries += queries[i];
    }
    if (n) {
        out.mean_time /= static_cast<double>(n);
        out.mean_queries /= static_cast<double>(n);
    }
    return out;
}

std::string spec_label(const Mutant& m) {
    std::ostringstream os;
    os << to_string(m.spec.op) << '@' << m.spec.ratio << '#' << std::hex << m.spec.seed;
    return os.str();
}

struct MutantSet {
    std::vector<Mutant> mutants;
    RepeatInfo info;
};

MutantSet build_mutants(const ExperimentPlan& plan, const ExperimentContext& ctx, MutantMode mode, std::size_t n,
                        std::size_t repeat) {
    MutantSet set;
    set.info.repeat = repeat;
    set.info.mutant_count = n;
    set.info.mode = to_string(mode);
    set.info.mutant_seed = derive_seed(plan.seed, {1, repeat});
    const auto opts = greedy_options_for(mode, n, set.info.mutant_seed, plan.iterations);
    auto g = greedy_generate(*ctx.victim, ctx.probe, opts);
    set.info.mean_cka = g.similarity.mean_off_diagonal();
    set.info.partial = g.partial;
    set.info.generated = g.generated;
    set.info.rejected = g.rejected;
    for (const auto& m : g.mutants) set.info.mutant_specs.push_back(spec_label(m));
    set.mutants = std::move(g.mutants);
    if (plan.log) {
        std::ostringstream os;
        os << "repeat " << repeat << ": " << set.info.mode << " set of " << set.mutants.size()
           << " mutants, mean CKA " << set.info.mean_cka << (set.info.partial ? " (partial)" : "");
        plan.log(os.str());
    }
    return set;
}

SuccessRateRecord make_record(const AttackConfig& cfg, std::size_t count, const std::string& mode, std::size_t repeat,
                              const SetOutcome& o, bool baseline, const MutantSet* set, std::uint64_t master) {
    SuccessRateRecord rec;
    rec.attack = to_string(cfg.family);
    rec.param = cfg.param();
    rec.mutant_count = count;
    rec.mode = mode;
    rec.repeat = repeat;
    rec.attacked = o.attacked;
    rec.succeeded = o.succeeded;
    rec.success_rate = o.attacked ? static_cast<double>(o.succeeded) / static_cast<double>(o.attacked) : 0.0;
    rec.mean_time_s = o.mean_time;
    rec.mean_queries = o.mean_queries;
    rec.baseline = baseline;
    rec.attack_seed = derive_seed(master, {2, repeat});
    if (set) {
        rec.mutant_seed = set->info.mutant_seed;
        rec.mutant_specs = set->info.mutant_specs;
    }
    return rec;
}

void log_record(const ExperimentPlan& plan, const SuccessRateRecord& r) {
    if (!plan.log) return;
    std::ostringstream os;
    os << "  " << r.attack << " param=" << r.param << " mode=" << r.mode << " n=" << r.mutant_count
       << " repeat=" << r.repeat << " success=" << r.success_rate << " (" << r.succeeded << "/" << r.attacked
       << ") time/sample=" << r.mean_time_s << "s";
    plan.log(os.str());
}

void sort_records(std::vector<SuccessRateRecord>& records) {
    std::sort(records.begin(), records.end(), [](const auto& a, const auto& b) {
        return std::tie(a.attack, a.param, a.mutant_count, a.mode, a.repeat) <
               std::tie(b.attack, b.param, b.mutant_count, b.mode, b.repeat);
    });
}

std::vector<AttackConfig> grid_configs(const ExperimentPlan& plan) {
    std::vector<AttackConfig> out;
    for (const auto& g : plan.grid) {
        for (double p : g.params) out.push_back(AttackConfig::standard(g.family, p));
    }
    return out;
}

ExperimentResult begin_result(const ExperimentContext& ctx) {
    ExperimentResult res;
    res.budget_samples = ctx.budget.size();
    res.correct_samples = ctx.correct.size();
    res.victim_accuracy = ctx.victim_accuracy;
    res.notes["success_denominator"] = "inputs in the sample budget that the original model classifies correctly";
    res.notes["success_judge"] = "original model prediction on the adversarial example";
    return res;
}

}  // namespace

ExperimentResult run_experiment(const ExperimentPlan& plan, const ExperimentContext& ctx) {
    plan.validate();
    auto res = begin_result(ctx);
    const SingleModel victim(ctx.victim);
    const auto configs = grid_configs(plan);
    for (std::size_t r = 0; r < plan.repeats; ++r) {
        std::optional<MutantSet> set;
        std::optional<EnsembleModel> ens;
        if (plan.mode != MutantMode::none) {
            set = build_mutants(plan, ctx, plan.mode, plan.mutant_count, r);
            res.repeats.push_back(set->info);
            ens.emplace(ctx.victim, set->mutants);
        }
        for (const auto& cfg : configs) {
            if (plan.include_baseline || plan.mode == MutantMode::none) {
                const auto o = attack_samples(ctx, victim, victim, cfg, plan.seed, r, plan.workers);
                res.records.push_back(make_record(cfg, 0, "none", r, o, true, nullptr, plan.seed));
                log_record(plan, res.records.back());
            }
            if (ens) {
                const auto o = attack_samples(ctx, *ens, victim, cfg, plan.seed, r, plan.workers);
                res.records.push_back(
                    make_record(cfg, ens->member_count() - 1, to_string(plan.mode), r, o, false, &*set, plan.seed));
                log_record(plan, res.records.back());
            }
        }
    }
    sort_records(res.records);
    return res;
}

ExperimentResult run_experiment(const ExperimentPlan& plan) {
    auto victim = std::make_shared<const Network>(load_model(plan.victim));
    const auto ctx = make_context(plan, load_dataset(plan.dataset, Split::test), std::move(victim));
    return run_experiment(plan, ctx);
}

std::vector<AttackConfig> sweep_attack_defaults() {
    return {AttackConfig::standard(AttackFamily::fgsm, 0.2), AttackConfig::standard(AttackFamily::bim, 0.2),
            AttackConfig::standard(AttackFamily::pgd, 0.2), AttackConfig::standard(AttackFamily::cw, 10.0)};
}

ExperimentResult sweep_mutant_count(const ExperimentPlan& plan, const ExperimentContext& ctx,
                                    const std::vector<std::size_t>& counts, const std::vector<AttackConfig>& attacks) {
    plan.validate();
    const MutantMode mode = plan.mode == MutantMode::none ? MutantMode::diverse : plan.mode;
    auto res = begin_result(ctx);
    res.notes["sweep_parameters"] =
        "eps=0.2 and c=10 stand in for the CIFAR10-scale eps=8/255 and c=0.3 at MNIST scale";
    const SingleModel victim(ctx.victim);
    for (std::size_t r = 0; r < plan.repeats; ++r) {
        for (auto count : counts) {
            if (count == 0) {
                for (const auto& cfg : attacks) {
                    const auto o = attack_samples(ctx, victim, victim, cfg, plan.seed, r, plan.workers);
                    res.records.push_back(make_record(cfg, 0, "none", r, o, true, nullptr, plan.seed));
                    log_record(plan, res.records.back());
                }
                continue;
            }
            const auto set = build_mutants(plan, ctx, mode, count, r);
            res.repeats.push_back(set.info);
            const EnsembleModel ens(ctx.victim, set.mutants);
            for (const auto& cfg : attacks) {
                const auto o = attack_samples(ctx, ens, victim, cfg, plan.seed, r, plan.workers);
                res.records.push_back(make_record(cfg, count, to_string(mode), r, o, false, &set, plan.seed));
                log_record(plan, res.records.back());
            }
        }
    }
    sort_records(res.records);
    return res;
}

ExperimentResult compare_mutant_modes(const ExperimentPlan& plan, const ExperimentContext& ctx,
                                      const std::vector<MutantMode>& modes) {
    plan.validate();
    auto res = begin_result(ctx);
    const SingleModel victim(ctx.victim);
    const auto configs = grid_configs(plan);
    for (std::size_t r = 0; r < plan.repeats; ++r) {
        if (plan.include_baseline) {
            for (const auto& cfg : configs) {
                const auto o = attack_samples(ctx, victim, victim, cfg, plan.seed, r, plan.workers);
                res.records.push_back(make_record(cfg, 0, "none", r, o, true, nullptr, plan.seed));
                log_record(plan, res.records.back());
            }
        }
        for (auto mode : modes) {
            if (mode == MutantMode::none) continue;
            const auto set = build_mutants(plan, ctx, mode, plan.mutant_count, r);
            res.repeats.push_back(set.info);
            const EnsembleModel ens(ctx.victim, set.mutants);
            for (const auto& cfg : configs) {
                const auto o = attack_samples(ctx, ens, victim, cfg, plan.seed, r, plan.workers);
                res.records.push_back(
                    make_record(cfg, set.mutants.size(), to_string(mode), r, o, false, &set, plan.seed));
                log_record(plan, res.records.back());
            }
        }
    }
    sort_records(res.records);
    return res;
}

double ExperimentResult::mean_success(const std::string& attack, double param, std::size_t mutant_count,
                                      const std::string& mode) const {
    double sum = 0.0;
    std::size_t n = 0;
    for (const auto& r : records) {
        if (r.attack == attack && std::abs(r.param - param) < 1e-6 && r.mutant_count == mutant_count && r.mode == mode) {
            sum += r.success_rate;
            ++n;
        }
    }
    if (n == 0) throw ConfigError("no records for " + attack + " at the requested point");
    return sum / static_cast<double>(n);
}

double ExperimentResult::mean_time(const std::string& attack, double param, std::size_t mutant_count,
                                   const std::string& mode) const {
    double sum = 0.0;
    std::size_t n = 0;
    for (const auto& r : records) {
        if (r.attack == attack && std::abs(r.param - param) < 1e-6 && r.mutant_count == mutant_count && r.mode == mode) {
            sum += r.mean_time_s;
            ++n;
        }
    }
    if (n == 0) throw ConfigError("no records for " + attack + " at the requested point");
    return sum / static_cast<double>(n);
}

namespace {

std::string fmt(const char* f, double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, f, v);
    return buf;
}

}  // namespace

std::string ExperimentResult::to_csv(bool with_means) const {
    std::ostringstream os;
    os << kCsvHeader << '\n';
    for (const auto& r : records) {
        os << r.attack << ',' << fmt("%g", r.param) << ',' << r.mutant_count << ',' << r.mode << ',' << r.repeat << ','
           << fmt("%.6f", r.success_rate) << ',' << fmt("%.6g", r.mean_time_s) << ',' << (r.baseline ? 1 : 0) << '\n';
    }
    if (with_means) {
        using Key = std::tuple<std::string, double, std::size_t, std::string, bool>;
        std::set<Key> keys;
        for (const auto& r : records) keys.insert({r.attack, r.param, r.mutant_count, r.mode, r.baseline});
        for (const auto& [attack, param, count, mode, baseline] : keys) {
            os << attack << ',' << fmt("%g", param) << ',' << count << ',' << mode << ",mean,"
               << fmt("%.6f", mean_success(attack, param, count, mode)) << ','
               << fmt("%.6g", mean_time(attack, param, count, mode)) << ',' << (baseline ? 1 : 0) << '\n';
        }
    }
    return os.str();
}

std::string ExperimentResult::metadata_json() const {
    nlohmann::json j;
    j["budget_samples"] = budget_samples;
    j["correct_samples"] = correct_samples;
    j["victim_accuracy_on_budget"] = victim_accuracy;
    j["notes"] = notes;
    auto& reps = j["mutant_sets"] = nlohmann::json::array();
    for (const auto& r : repeats) {
        reps.push_back({{"repeat", r.repeat},
                        {"mutant_count", r.mutant_count},
                        {"mode", r.mode},
                        {"mutant_seed", r.mutant_seed},
                        {"mutants", r.mutant_specs},
                        {"mean_cka", r.mean_cka},
                        {"partial", r.partial},
                        {"generated", r.generated},
                        {"rejected", r.rejected}});
    }
    auto& recs = j["records"] = nlohmann::json::array();
    for (const auto& r : records) {
        recs.push_back({{"attack", r.attack},
                        {"param", r.param},
                        {"mutant_count", r.mutant_count},
                        {"mode", r.mode},
                        {"repeat", r.repeat},
                        {"attacked", r.attacked},
                        {"succeeded", r.succeeded},
                        {"mean_queries", r.mean_queries},
                        {"attack_seed", r.attack_seed},
                        {"mutant_seed", r.mutant_seed},
                        {"mutants", r.mutant_specs}});
    }
    return j.dump(2);
}

void ExperimentResult::write(const std::filesystem::path& csv_path) const {
    {
        std::ofstream os(csv_path);
        if (!os) throw IoError("cannot write '" + csv_path.string() + "'");
        os << to_csv();
    }
    auto meta = csv_path;
    meta += ".meta.json";
    std::ofstream os(meta);
    if (!os) throw IoError("cannot write '" + meta.string() + "'");
    os << metadata_json() << '\n';
}

std::vector<std::vector<float>> gradient_map(const GradientProvider& provider, const Tensor& x, std::size_t label,
                                             const LossSpec& loss) {
    const auto& shape = provider.input_shape();
    if (shape.size() < 2) throw ShapeError("gradient map needs an image-shaped input");
    const std::size_t rows = shape[shape.size() - 2], cols = shape[shape.size() - 1];
    const std::size_t channels = shape_size(shape) / (rows * cols);
    const auto g = provider.loss_gradient(x, label, loss);
    std::vector<std::vector<float>> map(rows, std::vector<float>(cols, 0.0f));
    for (std::size_t c = 0; c < channels; ++c) {
        for (std::size_t i = 0; i < rows; ++i) {
            for (std::size_t j = 0; j < cols; ++j) {
                map[i][j] = std::max(map[i][j], std::abs(g.wrt_input.data[(c * rows + i) * cols + j]));
            }
        }
    }
    return map;
}

void write_gradient_map(const std::vector<std::vector<float>>& map, const std::filesystem::path& out) {
    std::ofstream os(out);
    if (!os) throw IoError("cannot write '" + out.string() + "'");
    for (const auto& row : map) {
        for (std::size_t j = 0; j < row.size(); ++j) {
            if (j) os << ',';
            os << fmt("%.9g", row[j]);
        }
        os << '\n';
    }
}

std::vector<std::pair<std::size_t, double>> attack_time_by_members(const ExperimentContext& ctx,
                                                                   const std::vector<Mutant>& mutants,
                                                                   const std::vector<std::size_t>& ks,
                                                                   const AttackConfig& cfg, std::size_t samples,
                                                                   std::uint64_t seed) {
    const SingleModel victim(ctx.victim);
    samples = std::min(samples, ctx.correct.size());
    auto timed = [&](const GradientProvider& p) {
        double total = 0.0;
        for (std::size_t i = 0; i < samples; ++i) {
            const auto idx = ctx.correct[i];
            total += run_attack(p, victim, ctx.test.tensor(idx), ctx.test.labels[idx], cfg,
                                attack_seed_for(seed, 0, idx))
                         .wall_time;
        }
        return total / static_cast<double>(std::max<std::size_t>(samples, 1));
    };
    std::vector<std::pair<std::size_t, double>> out;
    out.emplace_back(1, timed(victim));
    for (auto k : ks) {
        if (k <= 1) continue;
        if (k - 1 > mutants.size()) throw ConfigError("not enough mutants for a " + std::to_string(k) + "-member ensemble");
        std::vector<std::shared_ptr<const Network>> members;
        for (std::size_t i = 0; i + 1 < k; ++i) members.push_back(std::make_shared<const Network>(mutants[i].network));
        const EnsembleModel ens(ctx.victim, std::move(members));
        out.emplace_back(k, timed(ens));
    }
    return out;
}

}  // namespace muten
