// muten: train victims, build mutant ensembles, run attack experiments.
#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <sstream>

#include "muten/attacks.hpp"
#include "muten/dataset.hpp"
#include "muten/diversity.hpp"
#include "muten/ensemble.hpp"
#include "muten/harness.hpp"
#include "muten/model_io.hpp"
#include "muten/mutation.hpp"
#include "muten/rng.hpp"
#include "muten/train.hpp"

namespace fs = std::filesystem;
using namespace muten;

namespace {

struct Options {
    std::string dataset;
    std::string model;
    std::vector<std::string> attacks;
    std::vector<double> eps;
    std::vector<double> c;
    std::size_t mutants = 5;
    std::string mode = "diverse";
    std::size_t repeats = 5;
    std::uint64_t seed = 2021;
    std::size_t budget = 500;
    std::string out;

    // train
    std::size_t epochs = 3;
    double lr = 1e-3;
    double temperature = 1.0;
    std::size_t batch = 32;
    // mutate
    std::string op = "GF";
    double ratio = 0.01;
    // ensemble
    std::vector<std::string> members;
    // attack / experiment
    std::size_t probe = 512;
    std::size_t iterations = 0;
    std::size_t workers = 0;
    std::size_t index = 0;
    std::vector<std::size_t> counts;
    std::vector<std::string> modes;
    bool quiet = false;
};

void log_line(const Options& o, const std::string& s) {
    if (!o.quiet) std::cerr << s << '\n';
}

void require(const std::string& value, const char* flag) {
    if (value.empty()) throw ConfigError(std::string("missing required flag ") + flag);
}

bool is_manifest(const std::string& path) { return fs::path(path).extension() == ".json"; }

// Model file or ensemble manifest.
std::unique_ptr<GradientProvider> load_provider(const std::string& path) {
    if (is_manifest(path)) return std::make_unique<EnsembleModel>(load_ensemble(path));
    return std::make_unique<SingleModel>(load_model(path));
}

std::shared_ptr<const Network> victim_of(const GradientProvider& p) {
    if (auto* e = dynamic_cast<const EnsembleModel*>(&p)) return e->members().front();
    return dynamic_cast<const SingleModel&>(p).shared();
}

std::vector<AttackGrid> build_grid(const Options& o) {
    std::vector<std::string> names = o.attacks;
    if (names.empty()) names = {"FGSM", "BIM", "PGD", "CW"};
    std::vector<AttackGrid> grid;
    for (const auto& n : names) {
        AttackGrid g;
        g.family = attack_family_from_string(n);
        const auto& custom = g.family == AttackFamily::cw ? o.c : o.eps;
        g.params = custom.empty() ? default_grid(g.family) : custom;
        grid.push_back(std::move(g));
    }
    return grid;
}

ExperimentPlan build_plan(const Options& o) {
    require(o.dataset, "--dataset");
    require(o.model, "--model");
    ExperimentPlan plan;
    plan.dataset = o.dataset;
    plan.victim = o.model;
    plan.grid = build_grid(o);
    plan.mutant_count = o.mutants;
    plan.mode = mutant_mode_from_string(o.mode);
    plan.repeats = o.repeats;
    plan.sample_budget = o.budget;
    plan.seed = o.seed;
    plan.probe_size = o.probe;
    plan.iterations = o.iterations;
    plan.workers = o.workers;
    if (!o.quiet) plan.log = [](const std::string& s) { std::cerr << s << '\n'; };
    return plan;
}

ExperimentContext load_context(const ExperimentPlan& plan) {
    auto victim = std::make_shared<const Network>(load_model(plan.victim));
    return make_context(plan, load_dataset(plan.dataset, Split::test), std::move(victim));
}

void emit(const ExperimentResult& res, const std::string& out) {
    if (out.empty()) {
        std::cout << res.to_csv();
    } else {
        res.write(out);
    }
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream os(path);
    if (!os) throw IoError("cannot write '" + path.string() + "'");
    os << text;
}

int cmd_train(const Options& o) {
    require(o.dataset, "--dataset");
    require(o.out, "--out");
    const auto train_set = load_dataset(o.dataset, Split::train);
    const auto test_set = load_dataset(o.dataset, Split::test);
    auto net = make_lenet();
    init_he_uniform(net, o.seed);
    TrainConfig cfg;
    cfg.epochs = o.epochs;
    cfg.learning_rate = o.lr;
    cfg.temperature = o.temperature;
    cfg.batch_size = o.batch;
    cfg.seed = o.seed;
    cfg.on_epoch = [&](std::size_t e, double loss) {
        log_line(o, "epoch " + std::to_string(e) + " loss " + std::to_string(loss));
    };
    const auto res = train(std::move(net), train_set, &test_set, cfg);
    save_model(res.net, o.out);
    std::printf("test_accuracy=%.4f\n", res.test_accuracy);
    return 0;
}

int cmd_mutate(const Options& o) {
    require(o.model, "--model");
    require(o.out, "--out");
    const auto net = load_model(o.model);
    MutationSpec spec{mutation_operator_from_string(o.op), o.ratio, o.seed};
    if (!spec.standard_ratio()) throw ConfigError("--ratio must be one of 0.01, 0.02, 0.03, 0.04");
    auto m = mutate(net, spec);
    if (!o.dataset.empty()) {
        const auto test = load_dataset(o.dataset, Split::test);
        const auto probe = test.subset(sample_indices(test.size(), std::min(o.probe, test.size()), o.seed));
        const double parent = accuracy(net, probe);
        const bool ok = accuracy_filter(m, probe, parent, FilterMode::diverse_default);
        std::printf("probe_accuracy=%.4f parent_accuracy=%.4f passes_filter=%d\n", m.probe_accuracy, parent, ok ? 1 : 0);
    }
    save_model(m.network, o.out);
    std::printf("mutant=%s digest=%s\n", o.out.c_str(), weight_digest(m.network).c_str());
    return 0;
}

// Generates a mutant set, writes the members, a manifest and the CKA matrix.
int cmd_diversify(const Options& o) {
    require(o.dataset, "--dataset");
    require(o.model, "--model");
    require(o.out, "--out");
    const auto net = load_model(o.model);
    const auto test = load_dataset(o.dataset, Split::test);
    const auto probe = test.subset(sample_indices(test.size(), std::min(o.probe, test.size()), derive_seed(o.seed, {0xb0be})));
    const auto mode = mutant_mode_from_string(o.mode);
    const auto g = greedy_generate(net, probe, greedy_options_for(mode, o.mutants, o.seed, o.iterations));

    fs::create_directories(o.out);
    const fs::path dir(o.out);
    const auto orig_name = fs::path(o.model).filename().string();
    fs::copy_file(o.model, dir / orig_name, fs::copy_options::overwrite_existing);
    std::vector<std::string> members{orig_name};
    for (std::size_t i = 0; i < g.mutants.size(); ++i) {
        const auto name = "mutant_" + std::to_string(i) + ".muten";
        save_model(g.mutants[i].network, dir / name);
        members.push_back(name);
    }
    save_ensemble_manifest(dir / "ensemble.json", members);
    write_text(dir / "cka.csv", g.similarity.to_csv());
    std::printf("mutants=%zu generated=%zu rejected=%zu evictions=%zu mean_cka=%.6f partial=%d\n", g.mutants.size(),
                g.generated, g.rejected, g.evictions.size(), g.similarity.mean_off_diagonal(), g.partial ? 1 : 0);
    return 0;
}

int cmd_ensemble(const Options& o) {
    require(o.model, "--model");
    require(o.out, "--out");
    std::vector<std::string> paths{o.model};
    paths.insert(paths.end(), o.members.begin(), o.members.end());
    const auto base = fs::absolute(o.out).parent_path();
    for (auto& p : paths) p = fs::relative(fs::absolute(p), base).string();
    save_ensemble_manifest(o.out, paths);
    const auto ens = load_ensemble(o.out);
    std::printf("manifest=%s members=%zu\n", o.out.c_str(), ens.member_count());
    if (!o.dataset.empty()) {
        const auto test = load_dataset(o.dataset, Split::test);
        const auto idx = sample_indices(test.size(), std::min(o.budget, test.size()), o.seed);
        std::size_t ok = 0;
        for (auto i : idx) ok += ens.predict(test.tensor(i)).label == test.labels[i];
        std::printf("accuracy=%.4f\n", static_cast<double>(ok) / static_cast<double>(idx.size()));
    }
    return 0;
}

// One attack over the sampled budget, against a model file or a manifest.
int cmd_attack(const Options& o) {
    require(o.dataset, "--dataset");
    require(o.model, "--model");
    if (o.attacks.size() != 1) throw ConfigError("attack takes exactly one --attack");
    const auto family = attack_family_from_string(o.attacks.front());
    const auto& params = family == AttackFamily::cw ? o.c : o.eps;
    const double param = params.empty() ? (family == AttackFamily::cw ? 10.0 : 0.3) : params.front();
    const auto provider = load_provider(o.model);
    const SingleModel victim(victim_of(*provider));

    ExperimentPlan plan;
    plan.sample_budget = o.budget;
    plan.seed = o.seed;
    plan.probe_size = o.probe;
    const auto ctx = make_context(plan, load_dataset(o.dataset, Split::test), victim.shared());
    const auto cfg = AttackConfig::standard(family, param);

    std::vector<char> ok(ctx.correct.size());
    std::vector<double> t(ctx.correct.size());
    parallel_for(ctx.correct.size(), o.workers, [&](std::size_t i) {
        const auto idx = ctx.correct[i];
        const auto r = run_attack(*provider, victim, ctx.test.tensor(idx), ctx.test.labels[idx], cfg,
                                  derive_seed(o.seed, {2, 0, idx}));
        ok[i] = r.success;
        t[i] = r.wall_time;
    });
    ExperimentResult res;
    SuccessRateRecord rec;
    rec.attack = to_string(family);
    rec.param = param;
    rec.mutant_count = provider->member_count() - 1;
    rec.mode = rec.mutant_count ? "manifest" : "none";
    rec.baseline = rec.mutant_count == 0;
    rec.attacked = ok.size();
    for (std::size_t i = 0; i < ok.size(); ++i) {
        rec.succeeded += static_cast<std::size_t>(ok[i]);
        rec.mean_time_s += t[i];
    }
    if (!ok.empty()) {
        rec.success_rate = static_cast<double>(rec.succeeded) / static_cast<double>(ok.size());
        rec.mean_time_s /= static_cast<double>(ok.size());
    }
    res.records.push_back(rec);
    res.budget_samples = ctx.budget.size();
    res.correct_samples = ctx.correct.size();
    res.victim_accuracy = ctx.victim_accuracy;
    std::cout << res.to_csv(false);
    if (!o.out.empty()) res.write(o.out);
    return 0;
}

int cmd_experiment(const Options& o) {
    const auto plan = build_plan(o);
    emit(run_experiment(plan, load_context(plan)), o.out);
    return 0;
}

int cmd_sweep(const Options& o) {
    auto plan = build_plan(o);
    std::vector<std::size_t> counts = o.counts;
    if (counts.empty()) {
        for (std::size_t k = 0; k <= o.mutants; ++k) counts.push_back(k);
    }
    std::vector<AttackConfig> attacks;
    if (o.attacks.empty() && o.eps.empty() && o.c.empty()) {
        attacks = sweep_attack_defaults();
    } else {
        for (const auto& g : build_grid(o)) attacks.push_back(AttackConfig::standard(g.family, g.params.front()));
    }
    if (plan.mode == MutantMode::none) plan.mode = MutantMode::diverse;
    emit(sweep_mutant_count(plan, load_context(plan), counts, attacks), o.out);
    return 0;
}

int cmd_compare(const Options& o) {
    auto plan = build_plan(o);
    std::vector<MutantMode> modes;
    for (const auto& m : o.modes) modes.push_back(mutant_mode_from_string(m));
    if (modes.empty()) modes = {MutantMode::diverse, MutantMode::random, MutantMode::similar};
    if (plan.mode == MutantMode::none) plan.mode = MutantMode::diverse;
    emit(compare_mutant_modes(plan, load_context(plan), modes), o.out);
    return 0;
}

// CKA matrix of the original model and a generated (or manifest) mutant set.
int cmd_cka(const Options& o) {
    require(o.dataset, "--dataset");
    require(o.model, "--model");
    const auto test = load_dataset(o.dataset, Split::test);
    const auto probe = test.subset(sample_indices(test.size(), std::min(o.probe, test.size()), derive_seed(o.seed, {0xb0be})));
    std::vector<FeatureMatrix> feats;
    std::vector<std::string> ids;
    if (is_manifest(o.model)) {
        const auto ens = load_ensemble(o.model);
        for (std::size_t i = 0; i < ens.members().size(); ++i) {
            feats.push_back(extract_features(*ens.members()[i], probe));
            ids.push_back(i == 0 ? "original" : "mutant_" + std::to_string(i - 1));
        }
    } else {
        const auto net = load_model(o.model);
        const auto mode = mutant_mode_from_string(o.mode);
        const auto g = greedy_generate(net, probe, greedy_options_for(mode, o.mutants, o.seed, o.iterations));
        feats.push_back(extract_features(net, probe));
        ids.push_back("original");
        for (std::size_t i = 0; i < g.mutants.size(); ++i) {
            feats.push_back(extract_features(g.mutants[i].network, probe));
            const auto& s = g.mutants[i].spec;
            std::ostringstream id;
            id << to_string(s.op) << '@' << s.ratio << '#' << i;
            ids.push_back(id.str());
        }
    }
    const auto sim = similarity_matrix(feats, ids);
    if (o.out.empty()) {
        std::cout << sim.to_csv();
    } else {
        write_text(o.out, sim.to_csv());
    }
    std::fprintf(stderr, "mean_off_diagonal_cka=%.6f\n", sim.mean_off_diagonal());
    return 0;
}

int cmd_grad_map(const Options& o) {
    require(o.dataset, "--dataset");
    require(o.model, "--model");
    require(o.out, "--out");
    const auto provider = load_provider(o.model);
    const auto test = load_dataset(o.dataset, Split::test);
    if (o.index >= test.size()) throw ConfigError("--index out of range");
    const auto map = gradient_map(*provider, test.tensor(o.index), test.labels[o.index]);
    write_gradient_map(map, o.out);
    float peak = 0.0f;
    for (const auto& row : map) {
        for (float v : row) peak = std::max(peak, v);
    }
    std::printf("max_abs_gradient=%.9g members=%zu\n", peak, provider->member_count());
    return 0;
}

std::string json_escape(const std::string& s) { return nlohmann::json(s).dump(); }

void error_line(const char* code, const std::string& message) {
    std::cerr << "{\"error\":" << json_escape(code) << ",\"message\":" << json_escape(message) << "}\n";
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Mutant-ensemble gradient attacks on gradient-masking models"};
    app.require_subcommand(1);
    Options o;

    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--dataset", o.dataset, "Directory with the MNIST IDX files");
        sub->add_option("--model", o.model, "Model file (or ensemble manifest .json)");
        sub->add_option("--seed", o.seed, "Master seed");
        sub->add_option("--out", o.out, "Output path");
        sub->add_flag("--quiet", o.quiet, "No progress on stderr");
    };
    auto add_attack = [&](CLI::App* sub) {
        sub->add_option("--attack", o.attacks, "FGSM, BIM, PGD or CW (repeatable)");
        sub->add_option("--eps", o.eps, "Epsilon values");
        sub->add_option("--c", o.c, "C&W constants");
        sub->add_option("--budget", o.budget, "Test inputs sampled per grid point");
        sub->add_option("--probe", o.probe, "Probe set size for mutant filtering and CKA");
        sub->add_option("--workers", o.workers, "Attack threads (0 = all cores)");
    };
    auto add_mutants = [&](CLI::App* sub) {
        sub->add_option("--mutants", o.mutants, "Mutants per ensemble");
        sub->add_option("--mode", o.mode, "diverse, random, similar or none");
        sub->add_option("--iterations", o.iterations, "Greedy iterations (0 = 4 x mutants)");
    };

    auto* train_cmd = app.add_subcommand("train", "Train a Lenet-5 victim on MNIST");
    add_common(train_cmd);
    train_cmd->add_option("--epochs", o.epochs);
    train_cmd->add_option("--lr", o.lr);
    train_cmd->add_option("--temperature", o.temperature, "Softmax temperature during training (100 masks gradients)");
    train_cmd->add_option("--batch", o.batch);

    auto* mutate_cmd = app.add_subcommand("mutate", "Apply one mutation operator");
    add_common(mutate_cmd);
    mutate_cmd->add_option("--op", o.op, "GF, WS, NEB, NAI or NS");
    mutate_cmd->add_option("--ratio", o.ratio);
    mutate_cmd->add_option("--probe", o.probe);

    auto* div_cmd = app.add_subcommand("diversify", "Generate a mutant set into a directory");
    add_common(div_cmd);
    add_mutants(div_cmd);
    div_cmd->add_option("--probe", o.probe);

    auto* ens_cmd = app.add_subcommand("ensemble", "Write an ensemble manifest");
    add_common(ens_cmd);
    ens_cmd->add_option("--member", o.members, "Mutant model files")->required();
    ens_cmd->add_option("--budget", o.budget, "Inputs for the accuracy check");

    auto* attack_cmd = app.add_subcommand("attack", "Attack a model or ensemble once");
    add_common(attack_cmd);
    add_attack(attack_cmd);

    auto* exp_cmd = app.add_subcommand("experiment", "Attack grid against baseline and ensembles");
    add_common(exp_cmd);
    add_attack(exp_cmd);
    add_mutants(exp_cmd);
    exp_cmd->add_option("--repeats", o.repeats);

    auto* sweep_cmd = app.add_subcommand("sweep-mutants", "Success rate against mutant count");
    add_common(sweep_cmd);
    add_attack(sweep_cmd);
    add_mutants(sweep_cmd);
    sweep_cmd->add_option("--repeats", o.repeats);
    sweep_cmd->add_option("--counts", o.counts, "Mutant counts (default 0..--mutants)");

    auto* cmp_cmd = app.add_subcommand("compare-modes", "Diverse vs random vs similar mutants");
    add_common(cmp_cmd);
    add_attack(cmp_cmd);
    add_mutants(cmp_cmd);
    cmp_cmd->add_option("--repeats", o.repeats);
    cmp_cmd->add_option("--modes", o.modes);

    auto* cka_cmd = app.add_subcommand("cka-matrix", "CKA similarity matrix as CSV");
    add_common(cka_cmd);
    add_mutants(cka_cmd);
    cka_cmd->add_option("--probe", o.probe);

    auto* grad_cmd = app.add_subcommand("grad-map", "Per-pixel |gradient| as CSV");
    add_common(grad_cmd);
    grad_cmd->add_option("--index", o.index, "Test sample index");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        error_line("usage", e.what());
        return 2;
    }

    try {
        if (*train_cmd) return cmd_train(o);
        if (*mutate_cmd) return cmd_mutate(o);
        if (*div_cmd) return cmd_diversify(o);
        if (*ens_cmd) return cmd_ensemble(o);
        if (*attack_cmd) return cmd_attack(o);
        if (*exp_cmd) return cmd_experiment(o);
        if (*sweep_cmd) return cmd_sweep(o);
        if (*cmp_cmd) return cmd_compare(o);
        if (*cka_cmd) return cmd_cka(o);
        if (*grad_cmd) return cmd_grad_map(o);
    } catch (const Error& e) {
        error_line(e.code(), e.what());
        return 1;
    } catch (const std::exception& e) {
        error_line("internal", e.what());
        return 1;
    }
    return 1;
}
