#include <doctest.h>

#include "helpers.hpp"
#include "muten/attacks.hpp"
#include "muten/errors.hpp"

using namespace muten;

namespace {

bool contained(const Tensor& adv, const Tensor& x, float eps) {
    for (std::size_t i = 0; i < x.size(); ++i) {
        const float v = adv.data[i];
        if (!(v >= 0.0f && v <= 1.0f)) return false;
        if (std::abs(v - x.data[i]) > eps) return false;
    }
    return true;
}

// Logits equal the input: the class is the largest coordinate.
Network identity_net(std::size_t n) {
    auto net = NetworkBuilder({n}).dense(n).build();
    auto& w = net.mutable_layers()[0].weights.data;
    for (std::size_t i = 0; i < n; ++i) w[i * n + i] = 1.0f;
    return net;
}

}  // namespace

TEST_CASE("family names and standard settings") {
    for (auto f : {AttackFamily::fgsm, AttackFamily::bim, AttackFamily::pgd, AttackFamily::cw})
        CHECK(attack_family_from_string(to_string(f)) == f);
    CHECK(attack_family_from_string("c&w") == AttackFamily::cw);
    CHECK_THROWS_AS(attack_family_from_string("deepfool"), ConfigError);
    const auto b = AttackConfig::standard(AttackFamily::bim, 0.3);
    CHECK(b.step_size == doctest::Approx(0.03f));
    CHECK(b.max_iter == 40);
    CHECK(b.param() == doctest::Approx(0.3));
    const auto c = AttackConfig::standard(AttackFamily::cw, 11);
    CHECK(c.c == 11.0f);
    CHECK(c.learning_rate == doctest::Approx(0.1f));
    CHECK(c.max_iter == 100);
    CHECK_THROWS_AS(AttackConfig::standard(AttackFamily::fgsm, -0.1), ConfigError);
}

TEST_CASE("FGSM follows the sign formula exactly") {
    std::mt19937_64 rng(3);
    for (int t = 0; t < 20; ++t) {
        const auto net = testing::random_net(rng);
        const SingleModel m(net);
        const auto x = testing::random_input(net, rng);
        const std::size_t y = rng() % net.num_classes();
        const auto cfg = AttackConfig::standard(AttackFamily::fgsm, 0.1);
        const auto r = fgsm(m, x, y, cfg);
        const auto g = input_gradient(net, x, y);
        for (std::size_t i = 0; i < x.size(); ++i) {
            const float s = g.wrt_input.data[i] > 0 ? 1.0f : (g.wrt_input.data[i] < 0 ? -1.0f : 0.0f);
            // Equal up to the one-ulp pull-in that keeps |x' - x| <= eps in float.
            CHECK(r.adversarial.data[i] == doctest::Approx(std::clamp(x.data[i] + 0.1f * s, 0.0f, 1.0f)).epsilon(1e-6));
            CHECK(std::abs(r.adversarial.data[i] - x.data[i]) <= 0.1f);
        }
        CHECK(r.queries == 1);
        CHECK(r.success == (forward(net, r.adversarial).predicted != y));
    }
}

TEST_CASE("zero gradient leaves FGSM input unchanged") {
    auto net = NetworkBuilder({3}).dense(3).build();  // all zero: constant logits
    const SingleModel m(net);
    const Tensor x({3}, {0.2f, 0.5f, 0.9f});
    const auto r = fgsm(m, x, 1, AttackConfig::standard(AttackFamily::fgsm, 0.3));
    CHECK(r.adversarial == x);
    CHECK(r.linf_dist == 0.0);
}

TEST_CASE("iterative attacks stay in the ball and the pixel box") {
    std::mt19937_64 rng(5);
    for (int t = 0; t < 30; ++t) {
        const auto net = testing::random_net(rng);
        const SingleModel m(net);
        const auto x = testing::random_input(net, rng);
        const std::size_t y = rng() % net.num_classes();
        for (auto f : {AttackFamily::bim, AttackFamily::pgd}) {
            auto cfg = AttackConfig::standard(f, 0.05 + 0.1 * (t % 4));
            cfg.early_exit = t % 2 == 0;
            bool all_in = true;
            std::size_t calls = 0;
            cfg.observer = [&](const Tensor& it) {
                ++calls;
                all_in &= contained(it, x, cfg.epsilon);
            };
            const auto r = run_attack(m, m, x, y, cfg, 77);
            CHECK(all_in);
            CHECK(calls == r.queries + 1);
            CHECK(r.linf_dist <= cfg.epsilon * (1.0 + 1e-6));
            if (!cfg.early_exit) CHECK(r.queries == cfg.max_iter);
        }
    }
}

TEST_CASE("PGD is deterministic in its seed and starts inside the ball") {
    std::mt19937_64 rng(8);
    const auto net = testing::random_net(rng);
    const SingleModel m(net);
    const auto x = testing::random_input(net, rng);
    auto cfg = AttackConfig::standard(AttackFamily::pgd, 0.2);
    std::vector<Tensor> starts;
    cfg.observer = [&](const Tensor& it) {
        if (starts.empty()) starts.push_back(it);
    };
    const auto a = pgd(m, x, 0, cfg, 1);
    const auto b = pgd(m, x, 0, cfg, 1);
    CHECK(a.adversarial == b.adversarial);
    REQUIRE(!starts.empty());
    CHECK(contained(starts[0], x, 0.2f));
    CHECK(starts[0] != x);
}

TEST_CASE("BIM stops at the first misclassified iterate") {
    const auto net = identity_net(2);
    const SingleModel m(net);
    const Tensor x({2}, {0.55f, 0.45f});
    auto cfg = AttackConfig::standard(AttackFamily::bim, 0.3);
    const auto r = bim(m, x, 0, cfg);
    CHECK(r.success);
    CHECK(r.queries < cfg.max_iter);
    CHECK(forward(net, r.adversarial).predicted == 1);
    cfg.early_exit = false;
    CHECK(bim(m, x, 0, cfg).queries == cfg.max_iter);
}

TEST_CASE("the victim, not the provider, decides success") {
    const auto net = identity_net(2);
    auto flipped = net;
    auto& w = flipped.mutable_layers()[0].weights.data;
    w = {0.0f, 1.0f, 1.0f, 0.0f};  // predicts the other class
    const SingleModel honest(net), liar(flipped);
    const Tensor x({2}, {0.9f, 0.1f});
    const auto cfg = AttackConfig::standard(AttackFamily::fgsm, 0.05);
    // Through the victim's eyes the small step keeps class 0.
    CHECK_FALSE(fgsm(liar, honest, x, 0, cfg).success);
    CHECK(fgsm(liar, liar, x, 0, cfg).success);
}

TEST_CASE("C&W finds a close adversarial example and stays in bounds") {
    const auto net = identity_net(3);
    const SingleModel m(net);
    const Tensor x({3}, {0.6f, 0.4f, 0.1f});
    auto cfg = AttackConfig::standard(AttackFamily::cw, 10);
    bool in_box = true;
    cfg.observer = [&](const Tensor& it) {
        for (float v : it.data) in_box &= v >= 0.0f && v <= 1.0f;
    };
    const auto r = cw_l2(m, x, 0, cfg);
    CHECK(in_box);
    CHECK(r.success);
    CHECK(forward(net, r.adversarial).predicted != 0);
    // Optimal l2 to swap the top two coordinates is 0.2 / sqrt(2).
    CHECK(r.l2_dist < 0.5);
    CHECK(r.l2_dist > 0.14);
    CHECK(r.queries == 100);
}

TEST_CASE("C&W reports failure when no iterate succeeds") {
    const auto net = identity_net(2);
    const SingleModel m(net);
    const Tensor x({2}, {1.0f, 0.0f});
    auto cfg = AttackConfig::standard(AttackFamily::cw, 0.001);
    const auto r = cw_l2(m, x, 0, cfg);
    CHECK_FALSE(r.success);
    CHECK_FALSE(r.aborted);
}

TEST_CASE("invalid attack settings") {
    const auto net = identity_net(2);
    const SingleModel m(net);
    const Tensor x({2}, {0.5f, 0.4f});
    auto cfg = AttackConfig::standard(AttackFamily::bim, 0.1);
    cfg.epsilon = -1.0f;
    CHECK_THROWS_AS(bim(m, x, 0, cfg), ConfigError);
    cfg = AttackConfig::standard(AttackFamily::cw, 1);
    cfg.pixel_max = cfg.pixel_min;
    CHECK_THROWS_AS(cw_l2(m, x, 0, cfg), ConfigError);
}
