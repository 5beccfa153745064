#include "muten/attacks.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <random>

namespace muten {

std::string to_string(AttackFamily family) {
    switch (family) {
        case AttackFamily::fgsm: return "FGSM";
        case AttackFamily::bim: return "BIM";
        case AttackFamily::pgd: return "PGD";
        case AttackFamily::cw: return "CW";
    }
    return "?";
}

AttackFamily attack_family_from_string(const std::string& name) {
    std::string n;
    for (char ch : name) n += static_cast<char>(std::toupper(static_cast<unsigned char>(ch)));
    if (n == "FGSM") return AttackFamily::fgsm;
    if (n == "BIM" || n == "IFGSM" || n == "I-FGSM") return AttackFamily::bim;
    if (n == "PGD") return AttackFamily::pgd;
    if (n == "CW" || n == "C&W" || n == "CW2" || n == "CW_L2") return AttackFamily::cw;
    throw ConfigError("unknown attack '" + name + "' (expected FGSM, BIM, PGD or CW)");
}

AttackConfig AttackConfig::standard(AttackFamily family, double param) {
    AttackConfig cfg;
    cfg.family = family;
    if (family == AttackFamily::cw) {
        cfg.c = static_cast<float>(param);
        cfg.learning_rate = 0.1f;
        cfg.max_iter = 100;
    } else {
        if (!(param >= 0.0)) throw ConfigError("epsilon must be non-negative");
        cfg.epsilon = static_cast<float>(param);
        cfg.step_size = static_cast<float>(param / 10.0);
        cfg.max_iter = family == AttackFamily::fgsm ? 1 : 40;
    }
    return cfg;
}

namespace {

using Clock = std::chrono::steady_clock;

float sign(float v) { return v > 0.0f ? 1.0f : (v < 0.0f ? -1.0f : 0.0f); }

void finish(AttackResult& r, const Tensor& x, const GradientProvider& victim, std::size_t label,
            Clock::time_point start) {
    double l2 = 0.0, linf = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double d = static_cast<double>(r.adversarial.data[i]) - x.data[i];
        l2 += d * d;
        linf = std::max(linf, std::abs(d));
    }
    r.l2_dist = std::sqrt(l2);
    r.linf_dist = linf;
    r.success = victim.predict(r.adversarial).label != label;
    r.wall_time = std::chrono::duration<double>(Clock::now() - start).count();
}

void check_budget(const AttackConfig& cfg) {
    if (!(cfg.epsilon >= 0.0f) || !std::isfinite(cfg.epsilon)) throw ConfigError("epsilon must be non-negative");
    if (!(cfg.pixel_min <= cfg.pixel_max)) throw ConfigError("pixel bounds are inverted");
}

// Box of the eps-ball around x intersected with the pixel range.
struct Box {
    std::vector<float> lo, hi;
};

Box ball(const Tensor& x, const AttackConfig& cfg) {
    Box b{std::vector<float>(x.size()), std::vector<float>(x.size())};
    for (std::size_t i = 0; i < x.size(); ++i) {
        const float xi = x.data[i];
        float lo = xi - cfg.epsilon, hi = xi + cfg.epsilon;
        // x -/+ eps rounds; pull the edges in until |edge - x| <= eps holds in float.
        while (xi - lo > cfg.epsilon) lo = std::nextafter(lo, xi);
        while (hi - xi > cfg.epsilon) hi = std::nextafter(hi, xi);
        b.lo[i] = std::max(lo, cfg.pixel_min);
        b.hi[i] = std::min(hi, cfg.pixel_max);
    }
    return b;
}

AttackResult iterate_sign(const GradientProvider& provider, const GradientProvider& victim, const Tensor& x,
                          std::size_t label, const AttackConfig& cfg, Tensor start_point,
                          Clock::time_point start) {
    const Box box = ball(x, cfg);
    AttackResult r;
    r.adversarial = std::move(start_point);
    if (cfg.observer) cfg.observer(r.adversarial);
    bool done = cfg.early_exit && r.adversarial != x && victim.predict(r.adversarial).label != label;
    for (std::size_t t = 0; t < cfg.max_iter && !done; ++t) {
        const auto g = provider.loss_gradient(r.adversarial, label, LossSpec::cross_entropy());
        ++r.queries;
        for (std::size_t i = 0; i < x.size(); ++i) {
            const float v = r.adversarial.data[i] + cfg.step_size * sign(g.wrt_input.data[i]);
            r.adversarial.data[i] = std::clamp(v, box.lo[i], box.hi[i]);
        }
        if (cfg.observer) cfg.observer(r.adversarial);
        if (cfg.early_exit) done = victim.predict(r.adversarial).label != label;
    }
    finish(r, x, victim, label, start);
    return r;
}

}  // namespace

AttackResult fgsm(const GradientProvider& provider, const GradientProvider& victim, const Tensor& x,
                  std::size_t label, const AttackConfig& cfg) {
    const auto start = Clock::now();
    check_budget(cfg);
    AttackResult r;
    const auto g = provider.loss_gradient(x, label, LossSpec::cross_entropy());
    r.queries = 1;
    r.adversarial = x;
    const Box box = ball(x, cfg);
    for (std::size_t i = 0; i < x.size(); ++i) {
        const float v = x.data[i] + cfg.epsilon * sign(g.wrt_input.data[i]);
        r.adversarial.data[i] = std::clamp(v, box.lo[i], box.hi[i]);
    }
    if (cfg.observer) cfg.observer(r.adversarial);
    finish(r, x, victim, label, start);
    return r;
}

AttackResult fgsm(const GradientProvider& provider, const Tensor& x, std::size_t label, const AttackConfig& cfg) {
    return fgsm(provider, provider, x, label, cfg);
}

AttackResult bim(const GradientProvider& provider, const GradientProvider& victim, const Tensor& x,
                 std::size_t label, const AttackConfig& cfg) {
    const auto start = Clock::now();
    check_budget(cfg);
    return iterate_sign(provider, victim, x, label, cfg, x, start);
}

AttackResult bim(const GradientProvider& provider, const Tensor& x, std::size_t label, const AttackConfig& cfg) {
    return bim(provider, provider, x, label, cfg);
}

AttackResult pgd(const GradientProvider& provider, const GradientProvider& victim, const Tensor& x,
                 std::size_t label, const AttackConfig& cfg, std::uint64_t seed) {
    const auto start = Clock::now();
    check_budget(cfg);
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<float> u(-cfg.epsilon, cfg.epsilon);
    Tensor x0 = x;
    for (auto& v : x0.data) v = std::clamp(v + u(rng), cfg.pixel_min, cfg.pixel_max);
    // Rounding in v + u can step just outside the ball; clamp back into it.
    const Box box = ball(x, cfg);
    for (std::size_t i = 0; i < x0.size(); ++i) x0.data[i] = std::clamp(x0.data[i], box.lo[i], box.hi[i]);
    return iterate_sign(provider, victim, x, label, cfg, std::move(x0), start);
}

AttackResult pgd(const GradientProvider& provider, const Tensor& x, std::size_t label, const AttackConfig& cfg,
                 std::uint64_t seed) {
    return pgd(provider, provider, x, label, cfg, seed);
}

AttackResult cw_l2(const GradientProvider& provider, const GradientProvider& victim, const Tensor& x,
                   std::size_t label, const AttackConfig& cfg) {
    const auto start = Clock::now();
    constexpr double kSmooth = 0.999999;  // keeps atanh finite at pixel bounds
    const double lo = cfg.pixel_min, span = static_cast<double>(cfg.pixel_max) - cfg.pixel_min;
    if (!(span > 0.0)) throw ConfigError("C&W needs a non-empty pixel range");

    const std::size_t n = x.size();
    std::vector<double> w(n), th(n);
    for (std::size_t i = 0; i < n; ++i) {
        const double unit = (static_cast<double>(x.data[i]) - lo) / span;
        w[i] = std::atanh(std::clamp((2.0 * unit - 1.0) * kSmooth, -kSmooth, kSmooth));
    }

    AttackResult r;
    Tensor cur = x;
    Tensor best;
    double best_l2 = std::numeric_limits<double>::infinity();
    const bool self_judged = &provider == &victim;

    for (std::size_t t = 0;; ++t) {
        double l2 = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            th[i] = std::tanh(w[i]);
            cur.data[i] = static_cast<float>(lo + span * (th[i] + 1.0) / 2.0);
            const double d = static_cast<double>(cur.data[i]) - x.data[i];
            l2 += d * d;
        }
        if (cfg.observer) cfg.observer(cur);

        const bool stepping = t < cfg.max_iter;
        LossGradient g;
        std::size_t victim_label;
        if (stepping) {
            g = provider.loss_gradient(cur, label, LossSpec::cw(0.0f));
            ++r.queries;
            victim_label = self_judged ? g.predicted_class : victim.predict(cur).label;
        } else {
            victim_label = victim.predict(cur).label;
        }
        if (victim_label != label && l2 < best_l2) {
            best_l2 = l2;
            best = cur;
        }
        if (!stepping) break;

        const double objective = l2 + cfg.c * g.loss_value;
        if (!std::isfinite(objective)) {
            r.aborted = true;
            break;
        }
        for (std::size_t i = 0; i < n; ++i) {
            const double dx = 2.0 * (static_cast<double>(cur.data[i]) - x.data[i]) +
                              static_cast<double>(cfg.c) * g.wrt_input.data[i];
            const double dw = dx * span * (1.0 - th[i] * th[i]) / 2.0;
            w[i] -= cfg.learning_rate * dw;
        }
    }

    r.adversarial = best.empty() ? cur : std::move(best);
    finish(r, x, victim, label, start);
    if (r.aborted) r.success = false;
    return r;
}

AttackResult cw_l2(const GradientProvider& provider, const Tensor& x, std::size_t label, const AttackConfig& cfg) {
    return cw_l2(provider, provider, x, label, cfg);
}

AttackResult run_attack(const GradientProvider& provider, const GradientProvider& victim, const Tensor& x,
                        std::size_t label, const AttackConfig& cfg, std::uint64_t seed) {
    switch (cfg.family) {
        case AttackFamily::fgsm: return fgsm(provider, victim, x, label, cfg);
        case AttackFamily::bim: return bim(provider, victim, x, label, cfg);
        case AttackFamily::pgd: return pgd(provider, victim, x, label, cfg, seed);
        case AttackFamily::cw: return cw_l2(provider, victim, x, label, cfg);
    }
    throw ConfigError("unknown attack family");
}

}  // namespace muten
