#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "lvd/rng.hpp"
#include "lvd/schedule.hpp"
#include "testutil.hpp"

using namespace lvd;

namespace {

// all-zero noise level, valid by construction even though the factory rejects it
NoiseSchedule zero_beta_schedule(int T) {
    NoiseSchedule s;
    s.num_steps = T;
    s.betas.assign(T, 0.0);
    s.alphas.assign(T, 1.0);
    s.alpha_bars.assign(T, 1.0);
    s.posterior_variances.assign(T, 0.0);
    return s;
}

}  // namespace

TEST_CASE("single-step linear schedule") {
    NoiseSchedule s = make_beta_schedule(BetaKind::linear, 1, 1e-4, 0.02);
    CHECK(s.num_steps == 1);
    CHECK(s.beta(1) == doctest::Approx(1e-4).epsilon(1e-12));
    CHECK(s.alpha_bar(1) == doctest::Approx(0.9999).epsilon(1e-12));
    CHECK(s.posterior_variance(1) == 0.0);
}

TEST_CASE("alpha_bar against a high-precision product oracle") {
    const int T = 1000;
    NoiseSchedule s = make_beta_schedule(BetaKind::linear, T, 1e-4, 0.02);
    // independent product in extended precision
    long double prod = 1.0L;
    for (int i = 0; i < T; ++i) {
        long double beta = 1e-4L + (0.02L - 1e-4L) * i / (T - 1);
        prod *= (1.0L - beta);
    }
    CHECK(std::abs(static_cast<double>(prod) - s.alpha_bar(T)) <
          1e-12 * std::abs(static_cast<double>(prod)));
}

TEST_CASE("parameter domain errors") {
    CHECK_THROWS_AS(make_beta_schedule(BetaKind::linear, 10, 0.5, 1.5), std::invalid_argument);
    CHECK_THROWS_AS(make_beta_schedule(BetaKind::linear, 10, 0.0, 0.02), std::invalid_argument);
    CHECK_THROWS_AS(make_beta_schedule(BetaKind::linear, 0, 1e-4, 0.02), std::invalid_argument);
    CHECK_THROWS_AS(make_beta_schedule(BetaKind::linear, 10, -1e-4, 0.02),
                    std::invalid_argument);
}

TEST_CASE("schedule invariants") {
    for (BetaKind kind : {BetaKind::linear, BetaKind::scaled_linear}) {
        NoiseSchedule s = make_beta_schedule(kind, 200, 1e-4, 0.02);
        for (int t = 1; t <= 200; ++t) {
            CHECK(s.beta(t) > 0.0);
            CHECK(s.beta(t) < 1.0);
            if (t > 1) {
                CHECK(s.beta(t) >= s.beta(t - 1));
                CHECK(s.alpha_bar(t) < s.alpha_bar(t - 1));
                // recurrence holds exactly as computed
                CHECK(s.alpha_bar(t) == s.alpha_bar(t - 1) * s.alpha(t));
                CHECK(s.posterior_variance(t) ==
                      doctest::Approx(s.beta(t) * (1.0 - s.alpha_bar(t - 1)) /
                                      (1.0 - s.alpha_bar(t)))
                          .epsilon(1e-15));
            }
        }
        CHECK(s.alpha_bar(1) == s.alpha(1));
        CHECK(s.posterior_variance(1) == 0.0);
    }
}

TEST_CASE("q_step degenerate cases") {
    RngStream rng(7);
    Tensor z = Tensor::randn({1, 2, 2, 3, 3}, rng);
    Tensor noise = Tensor::randn({1, 2, 2, 3, 3}, rng);

    NoiseSchedule zero = zero_beta_schedule(4);
    Tensor out = q_step(z, 3, noise, zero);
    CHECK(lvdtest::bitwise_equal(out, z));

    NoiseSchedule s = make_beta_schedule(BetaKind::linear, 4, 0.1, 0.4);
    Tensor zeros = Tensor::zeros(z.shape());
    Tensor contracted = q_step(z, 2, zeros, s);
    double a = std::sqrt(1.0 - s.beta(2));
    for (int64_t i = 0; i < z.numel(); ++i)
        CHECK(contracted.data()[i] == doctest::Approx(a * z.data()[i]).epsilon(1e-15));

    Tensor bad = Tensor::zeros({1, 2, 2, 3, 4});
    CHECK_THROWS_AS(q_step(z, 2, bad, s), std::invalid_argument);
    CHECK_THROWS_AS(q_step(z, 0, noise, s), std::invalid_argument);
    CHECK_THROWS_AS(q_step(z, 5, noise, s), std::invalid_argument);
}

TEST_CASE("q_sample degenerate cases") {
    RngStream rng(8);
    Tensor z0 = Tensor::randn({1, 1, 2, 2, 2}, rng);
    Tensor noise = Tensor::randn({1, 1, 2, 2, 2}, rng);

    NoiseSchedule zero = zero_beta_schedule(5);
    for (int t = 1; t <= 5; ++t)
        CHECK(lvdtest::bitwise_equal(q_sample(z0, t, noise, zero), z0));

    NoiseSchedule s = make_beta_schedule(BetaKind::linear, 5, 0.05, 0.3);
    Tensor zeros = Tensor::zeros(z0.shape());
    Tensor scaled = q_sample(z0, 4, zeros, s);
    double a = std::sqrt(s.alpha_bar(4));
    for (int64_t i = 0; i < z0.numel(); ++i)
        CHECK(scaled.data()[i] == doctest::Approx(a * z0.data()[i]).epsilon(1e-15));
}

TEST_CASE("iterated q_step matches the closed-form marginal (Monte Carlo)") {
    const int T = 10;
    const int trials = 20000;
    NoiseSchedule s = make_beta_schedule(BetaKind::linear, T, 0.02, 0.2);
    RngStream rng(12345);

    Tensor z0 = Tensor::from_data({1, 1, 1, 1, 2}, {0.7, -1.3});
    double sum[2] = {0, 0}, sumsq[2] = {0, 0};
    for (int trial = 0; trial < trials; ++trial) {
        Tensor z = z0;
        for (int t = 1; t <= T; ++t) {
            Tensor noise = Tensor::randn(z0.shape(), rng);
            z = q_step(z, t, noise, s);
        }
        for (int i = 0; i < 2; ++i) {
            sum[i] += z.data()[i];
            sumsq[i] += z.data()[i] * z.data()[i];
        }
    }
    double want_var = 1.0 - s.alpha_bar(T);
    double pooled_var = 0.0;
    for (int i = 0; i < 2; ++i) {
        double mean = sum[i] / trials;
        pooled_var += (sumsq[i] / trials - mean * mean) / 2.0;
        double want_mean = std::sqrt(s.alpha_bar(T)) * z0.data()[i];
        double se = std::sqrt(want_var / trials);
        CHECK(std::abs(mean - want_mean) < 3.0 * se);
    }
    CHECK(std::abs(pooled_var - want_var) / want_var < 0.02);
}

TEST_CASE("q_sample variance matches 1 - alpha_bar (Monte Carlo)") {
    const int T = 10;
    const int trials = 50000;
    NoiseSchedule s = make_beta_schedule(BetaKind::linear, T, 0.02, 0.2);
    RngStream rng(999);
    Tensor z0 = Tensor::zeros({1, 1, 1, 1, 1});
    for (int t : {1, 5, 10}) {
        double sum = 0, sumsq = 0;
        for (int trial = 0; trial < trials; ++trial) {
            Tensor noise = Tensor::randn(z0.shape(), rng);
            double v = q_sample(z0, t, noise, s).data()[0];
            sum += v;
            sumsq += v * v;
        }
        double mean = sum / trials;
        double var = sumsq / trials - mean * mean;
        double want = 1.0 - s.alpha_bar(t);
        CHECK(std::abs(var - want) / want < 0.02);
    }
}

TEST_CASE("p_sample_step is deterministic at t=1") {
    RngStream rng(3);
    NoiseSchedule s = make_beta_schedule(BetaKind::linear, 6, 0.01, 0.2);
    Tensor z = Tensor::randn({1, 1, 1, 2, 2}, rng);
    Tensor eps = Tensor::randn(z.shape(), rng);
    Tensor n1 = Tensor::randn(z.shape(), rng);
    Tensor n2 = Tensor::randn(z.shape(), rng);
    Tensor a = p_sample_step(z, eps, 1, n1, s);
    Tensor b = p_sample_step(z, eps, 1, n2, s);
    CHECK(lvdtest::bitwise_equal(a, b));
}

TEST_CASE("p_sample_step inverts q_sample at T=1") {
    RngStream rng(4);
    NoiseSchedule s = make_beta_schedule(BetaKind::linear, 1, 0.02, 0.02);
    Tensor z0 = Tensor::randn({2, 1, 1, 2, 2}, rng);
    Tensor eps = Tensor::randn(z0.shape(), rng);
    Tensor z1 = q_sample(z0, 1, eps, s);
    Tensor rec = p_sample_step(z1, eps, 1, Tensor::zeros(z0.shape()), s);
    CHECK(lvdtest::max_abs_diff(rec, z0) < 1e-12);
}

// ancestral chain with the implied-noise oracle: eps_hat = (z_t - sqrt(abar) z0)/sqrt(1-abar)
TEST_CASE("oracle-model ancestral round trip") {
    const int T = 50;
    NoiseSchedule s = make_beta_schedule(BetaKind::linear, T, 1e-3, 0.05);
    RngStream rng(11);
    Tensor z0 = Tensor::randn({1, 2, 2, 4, 4}, rng);
    Tensor eps = Tensor::randn(z0.shape(), rng);
    Tensor z = q_sample(z0, T, eps, s);
    for (int t = T; t >= 1; --t) {
        double a = std::sqrt(s.alpha_bar(t));
        double b = std::sqrt(1.0 - s.alpha_bar(t));
        Tensor eps_hat = Tensor::zeros(z.shape());
        for (int64_t i = 0; i < z.numel(); ++i)
            eps_hat.data()[i] = (z.data()[i] - a * z0.data()[i]) / b;
        Tensor fresh = Tensor::randn(z.shape(), rng);
        z = p_sample_step(z, eps_hat, t, fresh, s);
    }
    CHECK(lvdtest::max_abs_diff(z, z0) < 1e-3);
}
