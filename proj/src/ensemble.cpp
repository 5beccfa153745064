#include "muten/ensemble.hpp"

#include <fstream>
#include <json.hpp>

#include "muten/model_io.hpp"

namespace muten {

SingleModel::SingleModel(std::shared_ptr<const Network> net) : net_(std::move(net)) {
    if (!net_) throw ConfigError("SingleModel needs a network");
}

SingleModel::SingleModel(Network net) : net_(std::make_shared<const Network>(std::move(net))) {}

LossGradient SingleModel::loss_gradient(const Tensor& x, std::size_t label, const LossSpec& loss) const {
    return input_gradient(*net_, x, label, loss);
}

Prediction SingleModel::predict(const Tensor& x) const {
    auto r = forward(*net_, x);
    return {std::move(r.probs), r.predicted};
}

EnsembleModel::EnsembleModel(std::shared_ptr<const Network> original,
                             std::vector<std::shared_ptr<const Network>> mutants) {
    if (!original) throw ConfigError("ensemble needs the original model");
    members_.push_back(std::move(original));
    for (auto& m : mutants) {
        if (!m) throw ConfigError("null ensemble member");
        if (m->input_shape() != members_.front()->input_shape() ||
            m->num_classes() != members_.front()->num_classes()) {
            throw ShapeError("ensemble members must share input shape and class count");
        }
        members_.push_back(std::move(m));
    }
}

namespace {

std::vector<std::shared_ptr<const Network>> share(std::vector<Mutant> mutants) {
    std::vector<std::shared_ptr<const Network>> out;
    out.reserve(mutants.size());
    for (auto& m : mutants) out.push_back(std::make_shared<const Network>(std::move(m.network)));
    return out;
}

}  // namespace

EnsembleModel::EnsembleModel(std::shared_ptr<const Network> original, std::vector<Mutant> mutants)
    : EnsembleModel(std::move(original), share(std::move(mutants))) {}

LossGradient EnsembleModel::loss_gradient(const Tensor& x, std::size_t label, const LossSpec& loss) const {
    std::vector<double> grad(x.size(), 0.0);
    std::vector<double> probs(num_classes(), 0.0);
    double loss_sum = 0.0;
    for (const auto& m : members_) {
        const auto g = input_gradient(*m, x, label, loss);
        for (std::size_t i = 0; i < grad.size(); ++i) grad[i] += g.wrt_input.data[i];
        for (std::size_t c = 0; c < probs.size(); ++c) probs[c] += g.class_probs[c];
        loss_sum += g.loss_value;
    }
    const double k = static_cast<double>(members_.size());
    LossGradient out;
    out.wrt_input = Tensor(x.shape);
    for (std::size_t i = 0; i < grad.size(); ++i) out.wrt_input.data[i] = static_cast<float>(grad[i] / k);
    out.class_probs.resize(probs.size());
    for (std::size_t c = 0; c < probs.size(); ++c) out.class_probs[c] = static_cast<float>(probs[c] / k);
    out.predicted_class = argmax(out.class_probs);
    out.loss_value = loss_sum / k;
    return out;
}

Prediction EnsembleModel::predict(const Tensor& x) const {
    std::vector<double> probs(num_classes(), 0.0);
    for (const auto& m : members_) {
        const auto r = forward(*m, x);
        for (std::size_t c = 0; c < probs.size(); ++c) probs[c] += r.probs[c];
    }
    Prediction p;
    p.probs.resize(probs.size());
    const double k = static_cast<double>(members_.size());
    for (std::size_t c = 0; c < probs.size(); ++c) p.probs[c] = static_cast<float>(probs[c] / k);
    p.label = argmax(p.probs);
    return p;
}

LossGradient ensemble_gradient(const EnsembleModel& ens, const Tensor& x, std::size_t label, const LossSpec& loss) {
    return ens.loss_gradient(x, label, loss);
}

Prediction ensemble_predict(const EnsembleModel& ens, const Tensor& x) { return ens.predict(x); }

void save_ensemble_manifest(const std::filesystem::path& path, const std::vector<std::string>& member_paths) {
    if (member_paths.empty()) throw ConfigError("ensemble manifest needs at least the original model");
    nlohmann::json j;
    j["strategy"] = "simple_average";
    j["members"] = member_paths;
    std::ofstream os(path);
    if (!os) throw IoError("cannot write '" + path.string() + "'");
    os << j.dump(2) << '\n';
}

EnsembleModel load_ensemble(const std::filesystem::path& manifest) {
    std::ifstream is(manifest);
    if (!is) throw IoError("cannot open '" + manifest.string() + "'");
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(is);
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("malformed ensemble manifest: ") + e.what());
    }
    if (j.value("strategy", std::string{"simple_average"}) != "simple_average") {
        throw ConfigError("unsupported ensemble strategy '" + j["strategy"].get<std::string>() + "'");
    }
    const auto paths = j.at("members").get<std::vector<std::string>>();
    if (paths.empty()) throw ConfigError("ensemble manifest lists no members");
    const auto base = manifest.parent_path();
    auto resolve = [&](const std::string& p) {
        std::filesystem::path fp(p);
        return fp.is_absolute() ? fp : base / fp;
    };
    auto original = std::make_shared<const Network>(load_model(resolve(paths.front())));
    std::vector<std::shared_ptr<const Network>> mutants;
    for (std::size_t i = 1; i < paths.size(); ++i) {
        mutants.push_back(std::make_shared<const Network>(load_model(resolve(paths[i]))));
    }
    return EnsembleModel(std::move(original), std::move(mutants));
}

}  // namespace muten
