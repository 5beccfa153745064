#pragma once

#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "muten/engine.hpp"
#include "muten/mutation.hpp"

namespace muten {

/// What an attack may ask of a model: loss gradients and predictions.
class GradientProvider {
public:
    virtual ~GradientProvider() = default;

    virtual LossGradient loss_gradient(const Tensor& x, std::size_t label, const LossSpec& loss) const = 0;
    virtual Prediction predict(const Tensor& x) const = 0;
    virtual const Shape& input_shape() const = 0;
    virtual std::size_t num_classes() const = 0;
    /// Base models consulted per gradient query.
    virtual std::size_t member_count() const = 0;
};

/// A single network behind the provider interface. Holds a shared reference
/// so providers can outlive the caller's handle.
class SingleModel final : public GradientProvider {
public:
    explicit SingleModel(std::shared_ptr<const Network> net);
    explicit SingleModel(Network net);

    LossGradient loss_gradient(const Tensor& x, std::size_t label, const LossSpec& loss) const override;
    Prediction predict(const Tensor& x) const override;
    const Shape& input_shape() const override { return net_->input_shape(); }
    std::size_t num_classes() const override { return net_->num_classes(); }
    std::size_t member_count() const override { return 1; }

    const Network& network() const { return *net_; }
    std::shared_ptr<const Network> shared() const { return net_; }

private:
    std::shared_ptr<const Network> net_;
};

/// Original model plus mutants under the simple-average strategy: gradients
/// and probabilities are plain means over members, summed in member order.
class EnsembleModel final : public GradientProvider {
public:
    EnsembleModel(std::shared_ptr<const Network> original, std::vector<std::shared_ptr<const Network>> mutants);
    EnsembleModel(std::shared_ptr<const Network> original, std::vector<Mutant> mutants);

    LossGradient loss_gradient(const Tensor& x, std::size_t label, const LossSpec& loss) const override;
    Prediction predict(const Tensor& x) const override;
    const Shape& input_shape() const override { return members_.front()->input_shape(); }
    std::size_t num_classes() const override { return members_.front()->num_classes(); }
    std::size_t member_count() const override { return members_.size(); }

    const Network& original() const { return *members_.front(); }
    const std::vector<std::shared_ptr<const Network>>& members() const { return members_; }
    std::string strategy() const { return "simple_average"; }

private:
    std::vector<std::shared_ptr<const Network>> members_;
};

/// Shorthand for EnsembleModel::loss_gradient.
LossGradient ensemble_gradient(const EnsembleModel& ens, const Tensor& x, std::size_t label,
                               const LossSpec& loss = {});
Prediction ensemble_predict(const EnsembleModel& ens, const Tensor& x);

/// Manifest: {"strategy": "simple_average", "members": [paths...]}, the
/// first member being the original model. Relative paths resolve against the
/// manifest's directory.
void save_ensemble_manifest(const std::filesystem::path& path, const std::vector<std::string>& member_paths);
EnsembleModel load_ensemble(const std::filesystem::path& manifest);

}  // namespace muten
