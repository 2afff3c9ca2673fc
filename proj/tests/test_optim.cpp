#include "hst/optim.hpp"

#include <cmath>
#include <cstring>
#include <vector>

#include "doctest.h"

#include "hst/error.hpp"

using namespace hst;

namespace {

// Deterministic fake gradient stream, decorrelated across (step, index).
double fake_grad(int64_t step, size_t k) {
    return std::sin(0.7 * static_cast<double>(step) + 1.3 * static_cast<double>(k)) +
           0.1 * static_cast<double>(k);
}

void set_grad(Tensor& p, int64_t step) {
    auto& g = p.impl()->grad;
    g.resize(p.numel());
    for (size_t k = 0; k < g.size(); ++k) g[k] = fake_grad(step, k);
}

}  // namespace

TEST_CASE("adam matches a hand-rolled scalar reference") {
    AdamConfig cfg;
    cfg.lr = 0.01;
    cfg.beta1 = 0.9;
    cfg.beta2 = 0.999;
    cfg.eps = 1e-8;

    SUBCASE("no weight decay") {}
    SUBCASE("decoupled weight decay") { cfg.weight_decay = 0.05; }

    Tensor p = Tensor::from({3}, {0.5, -1.25, 2.0}, true);
    Adam opt({p}, cfg);

    // Independent reference: the textbook update, scalar by scalar.
    std::vector<double> w = {0.5, -1.25, 2.0};
    std::vector<double> m(3, 0.0), v(3, 0.0);
    for (int64_t t = 1; t <= 100; ++t) {
        set_grad(p, t);
        opt.step();
        for (size_t k = 0; k < w.size(); ++k) {
            const double g = fake_grad(t, k);
            m[k] = cfg.beta1 * m[k] + (1 - cfg.beta1) * g;
            v[k] = cfg.beta2 * v[k] + (1 - cfg.beta2) * g * g;
            const double mhat = m[k] / (1 - std::pow(cfg.beta1, static_cast<double>(t)));
            const double vhat = v[k] / (1 - std::pow(cfg.beta2, static_cast<double>(t)));
            w[k] -= cfg.lr * (mhat / (std::sqrt(vhat) + cfg.eps) + cfg.weight_decay * w[k]);
        }
    }
    auto got = p.values();
    for (size_t k = 0; k < w.size(); ++k) CHECK(got[k] == doctest::Approx(w[k]).epsilon(1e-12));
    CHECK(opt.steps_taken() == 100);
}

TEST_CASE("adam skips parameters that have no gradient") {
    Tensor a = Tensor::from({2}, {1.0, 2.0}, true);
    Tensor b = Tensor::from({2}, {3.0, 4.0}, true);
    Adam opt({a, b}, {});
    set_grad(a, 1);
    opt.step();
    CHECK(a.values()[0] != 1.0);
    CHECK(b.values()[0] == 3.0);
    CHECK(b.values()[1] == 4.0);
}

TEST_CASE("lr=0 leaves parameters bit-identical") {
    AdamConfig cfg;
    cfg.lr = 0.0;
    cfg.weight_decay = 0.3;  // decay is inside the lr*(...) term, so lr=0 nullifies it too
    Tensor p = Tensor::from({4}, {0.1, -0.2, 0.3, -0.4}, true);
    std::vector<double> before(p.values().begin(), p.values().end());
    Adam opt({p}, cfg);
    for (int64_t t = 1; t <= 10; ++t) {
        set_grad(p, t);
        opt.step();
    }
    auto after = p.values();
    CHECK(std::memcmp(before.data(), after.data(), before.size() * sizeof(double)) == 0);
}

TEST_CASE("constructor validates its configuration") {
    Tensor p = Tensor::from({1}, {0.0}, true);
    AdamConfig bad;
    bad.lr = -1.0;
    CHECK_THROWS_AS(Adam({p}, bad), ConfigError);
    bad = {};
    bad.beta1 = 1.0;
    CHECK_THROWS_AS(Adam({p}, bad), ConfigError);
    bad = {};
    bad.beta2 = -0.1;
    CHECK_THROWS_AS(Adam({p}, bad), ConfigError);
    bad = {};
    bad.eps = 0.0;
    CHECK_THROWS_AS(Adam({p}, bad), ConfigError);
}

TEST_CASE("warmup ramps linearly to the peak") {
    ScheduleConfig sched;
    sched.kind = Schedule::kNone;
    sched.warmup = 4;
    CHECK(scheduled_lr(2.0, sched, 1) == doctest::Approx(0.5));
    CHECK(scheduled_lr(2.0, sched, 2) == doctest::Approx(1.0));
    CHECK(scheduled_lr(2.0, sched, 3) == doctest::Approx(1.5));
    CHECK(scheduled_lr(2.0, sched, 4) == doctest::Approx(2.0));
    CHECK(scheduled_lr(2.0, sched, 5) == doctest::Approx(2.0));  // NONE: flat after warmup
}

TEST_CASE("root-square decay follows peak*sqrt(warmup/step)") {
    ScheduleConfig sched;
    sched.kind = Schedule::kRootSquare;
    sched.warmup = 100;
    CHECK(scheduled_lr(1.0, sched, 100) == doctest::Approx(1.0));
    CHECK(scheduled_lr(1.0, sched, 400) == doctest::Approx(0.5));
    CHECK(scheduled_lr(1.0, sched, 10000) == doctest::Approx(0.1));
    // Continuous at the warmup boundary.
    CHECK(scheduled_lr(1.0, sched, 101) == doctest::Approx(std::sqrt(100.0 / 101.0)));

    ScheduleConfig no_warm;
    no_warm.kind = Schedule::kRootSquare;
    CHECK_THROWS_AS(scheduled_lr(1.0, no_warm, 1), ConfigError);
}

TEST_CASE("cosine decays to zero over total_steps") {
    ScheduleConfig sched;
    sched.kind = Schedule::kCosine;
    sched.warmup = 10;
    sched.total_steps = 110;
    CHECK(scheduled_lr(1.0, sched, 10) == doctest::Approx(1.0));
    CHECK(scheduled_lr(1.0, sched, 60) == doctest::Approx(0.5));   // halfway
    CHECK(scheduled_lr(1.0, sched, 110) == doctest::Approx(0.0));
    CHECK(scheduled_lr(1.0, sched, 500) == doctest::Approx(0.0));  // clamped past the end
    // Quarter point of the half-cosine.
    CHECK(scheduled_lr(1.0, sched, 35) == doctest::Approx(0.5 * (1.0 + std::cos(M_PI * 0.25))));

    ScheduleConfig bad = sched;
    bad.total_steps = 10;
    CHECK_THROWS_AS(scheduled_lr(1.0, bad, 11), ConfigError);
}

TEST_CASE("polynomial decay is linear to zero") {
    ScheduleConfig sched;
    sched.kind = Schedule::kPolynomial;
    sched.warmup = 0;
    sched.total_steps = 10;
    CHECK(scheduled_lr(4.0, sched, 1) == doctest::Approx(4.0 * 0.9));
    CHECK(scheduled_lr(4.0, sched, 5) == doctest::Approx(4.0 * 0.5));
    CHECK(scheduled_lr(4.0, sched, 10) == doctest::Approx(0.0));
    CHECK(scheduled_lr(4.0, sched, 99) == doctest::Approx(0.0));
}

TEST_CASE("schedule rejects nonpositive steps") {
    CHECK_THROWS_AS(scheduled_lr(1.0, {}, 0), DomainError);
    CHECK_THROWS_AS(scheduled_lr(1.0, {}, -3), DomainError);
}

TEST_CASE("adam applies the scheduled rate") {
    ScheduleConfig sched;
    sched.kind = Schedule::kPolynomial;
    sched.total_steps = 4;
    AdamConfig cfg;
    cfg.lr = 0.1;
    Tensor p = Tensor::from({1}, {1.0}, true);
    Adam opt({p}, cfg, sched);
    set_grad(p, 1);
    opt.step();
    CHECK(opt.last_lr() == doctest::Approx(0.1 * 0.75));
}
