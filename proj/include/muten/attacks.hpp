#pragma once

#include <cstdint>
#include <functional>
#include <string>

#include "muten/ensemble.hpp"

namespace muten {

enum class AttackFamily { fgsm, bim, pgd, cw };

std::string to_string(AttackFamily family);
AttackFamily attack_family_from_string(const std::string& name);

struct AttackConfig {
    AttackFamily family = AttackFamily::fgsm;
    float epsilon = 0.3f;        // l-inf budget (FGSM/BIM/PGD)
    float step_size = 0.03f;     // BIM/PGD step
    std::size_t max_iter = 40;   // BIM/PGD iterations, C&W descent steps
    float c = 10.0f;             // C&W constant
    float learning_rate = 0.1f;  // C&W step
    float pixel_min = 0.0f;
    float pixel_max = 1.0f;
    /// BIM/PGD stop at the first iterate the victim misclassifies.
    bool early_exit = true;
    /// Called with every iterate (including the final one); test hook.
    std::function<void(const Tensor&)> observer;

    /// Standard settings for one grid point: `param` is epsilon for
    /// FGSM/BIM/PGD (step epsilon/10, 40 iterations) or c for C&W (learning
    /// rate 0.1, 100 iterations).
    static AttackConfig standard(AttackFamily family, double param);

    /// The grid parameter (epsilon or c).
    double param() const { return family == AttackFamily::cw ? c : epsilon; }
};

struct AttackResult {
    Tensor adversarial;
    /// Victim's prediction on `adversarial` differs from the true label.
    bool success = false;
    /// Gradient queries issued to the provider.
    std::size_t queries = 0;
    double wall_time = 0.0;
    double l2_dist = 0.0;
    double linf_dist = 0.0;
    /// C&W stopped on a non-finite objective.
    bool aborted = false;
};

/// x' = clip(x + eps * sign(grad)). The victim decides success; the
/// overloads without a victim judge against the provider itself.
AttackResult fgsm(const GradientProvider& provider, const GradientProvider& victim, const Tensor& x,
                  std::size_t label, const AttackConfig& cfg);
AttackResult fgsm(const GradientProvider& provider, const Tensor& x, std::size_t label, const AttackConfig& cfg);

/// Iterated sign steps of size step_size, each projected onto the
/// eps-ball around x intersected with the pixel box.
AttackResult bim(const GradientProvider& provider, const GradientProvider& victim, const Tensor& x,
                 std::size_t label, const AttackConfig& cfg);
AttackResult bim(const GradientProvider& provider, const Tensor& x, std::size_t label, const AttackConfig& cfg);

/// BIM from a uniform random start inside the eps-ball.
AttackResult pgd(const GradientProvider& provider, const GradientProvider& victim, const Tensor& x,
                 std::size_t label, const AttackConfig& cfg, std::uint64_t seed);
AttackResult pgd(const GradientProvider& provider, const Tensor& x, std::size_t label, const AttackConfig& cfg,
                 std::uint64_t seed);

/// Carlini-Wagner L2 with a fixed constant: plain gradient descent on
/// ||x'-x||^2 + c * f(x') in tanh space, f being the logit-margin loss with
/// kappa = 0. Returns the closest successful iterate, else the last one.
AttackResult cw_l2(const GradientProvider& provider, const GradientProvider& victim, const Tensor& x,
                   std::size_t label, const AttackConfig& cfg);
AttackResult cw_l2(const GradientProvider& provider, const Tensor& x, std::size_t label, const AttackConfig& cfg);

/// Dispatch on cfg.family. `seed` only matters for PGD.
AttackResult run_attack(const GradientProvider& provider, const GradientProvider& victim, const Tensor& x,
                        std::size_t label, const AttackConfig& cfg, std::uint64_t seed);

}  // namespace muten
