#include <doctest.h>

#include <cmath>

#include "vseg/diffusion.hpp"

using namespace vseg;

namespace {

// independent product-loop oracle for alpha_bar
double alpha_bar_oracle(int T, double b0, double b1, int t) {
    double prod = 1.0;
    for (int i = 1; i <= t; ++i) {
        double b = T == 1 ? b0 : b0 + (b1 - b0) * (i - 1) / static_cast<double>(T - 1);
        prod *= 1.0 - b;
    }
    return prod;
}

NoiseSchedule synthetic_schedule(double beta, double abar) {
    NoiseSchedule s;
    s.T = 1;
    s.beta_start = s.beta_end = beta;
    s.beta = {beta};
    s.alpha_bar = {abar};
    return s;
}

}  // namespace

TEST_CASE("linear schedule: single step product") {
    auto s = make_linear_schedule(1, 0.5, 0.5);
    CHECK(s.alpha_bar_at(1) == doctest::Approx(0.5).epsilon(1e-15));
}

TEST_CASE("linear schedule: canonical endpoints vs product oracle") {
    auto s = make_linear_schedule(1000, 1e-4, 0.02);
    CHECK(s.alpha_bar_at(1000) == doctest::Approx(alpha_bar_oracle(1000, 1e-4, 0.02, 1000)).epsilon(1e-12));
    CHECK(s.alpha_bar_at(1000) < 1e-4);
    CHECK(s.alpha_bar_at(500) == doctest::Approx(alpha_bar_oracle(1000, 1e-4, 0.02, 500)).epsilon(1e-12));
}

TEST_CASE("linear schedule: invariants") {
    auto s = make_linear_schedule(100, 1e-3, 0.1);
    for (int t = 2; t <= 100; ++t) {
        CHECK(s.alpha_bar_at(t) < s.alpha_bar_at(t - 1));
        CHECK(s.beta_at(t) > s.beta_at(t - 1));
        // alpha_bar_t = (1-beta_t) alpha_bar_{t-1}
        CHECK(std::abs(s.alpha_bar_at(t) - (1.0 - s.beta_at(t)) * s.alpha_bar_at(t - 1)) <= 1e-12);
    }
    CHECK(s.alpha_bar_at(1) < 1.0);
    // recomputing alpha_bar from beta reproduces the stored values
    double prod = 1.0;
    for (int t = 1; t <= 100; ++t) {
        prod *= 1.0 - s.beta_at(t);
        CHECK(std::abs(prod - s.alpha_bar_at(t)) <= 1e-12);
    }
}

TEST_CASE("linear schedule: rejects bad arguments") {
    CHECK_THROWS_AS(make_linear_schedule(0, 1e-4, 0.02), std::invalid_argument);
    CHECK_THROWS_AS(make_linear_schedule(10, 0.0, 0.02), std::invalid_argument);
    CHECK_THROWS_AS(make_linear_schedule(10, 1e-4, 1.0), std::invalid_argument);
    CHECK_THROWS_AS(make_linear_schedule(10, 0.02, 1e-4), std::invalid_argument);
    CHECK_THROWS_AS(make_linear_schedule(10, 0.02, 0.02), std::invalid_argument);
}

TEST_CASE("schedule kv round trip") {
    auto s = make_linear_schedule(200, 1e-4, 0.1);
    auto s2 = NoiseSchedule::from_kv(s.to_kv());
    REQUIRE(s2.T == s.T);
    for (int t = 1; t <= s.T; ++t) CHECK(s2.alpha_bar_at(t) == s.alpha_bar_at(t));
}

TEST_CASE("forward sample: limiting coefficients") {
    Rng rng(7);
    Tensor x0 = rng.uniform_tensor({4, 4}, 0.0, 1.0);
    Tensor eps = rng.normal_tensor({4, 4});

    auto all_signal = synthetic_schedule(1e-8, 1.0);
    auto st = forward_sample(x0, 1, eps, all_signal);
    for (std::int64_t i = 0; i < x0.size(); ++i) CHECK(st.x_t[i] == doctest::Approx(x0[i]).epsilon(1e-15));

    auto all_noise = synthetic_schedule(0.5, 0.0);
    st = forward_sample(x0, 1, eps, all_noise);
    for (std::int64_t i = 0; i < x0.size(); ++i) CHECK(st.x_t[i] == doctest::Approx(eps[i]).epsilon(1e-15));
}

TEST_CASE("forward sample: monte-carlo mean and variance") {
    auto s = make_linear_schedule(1000, 1e-4, 0.02);
    const int t = 400;
    Tensor x0({8, 8});  // all zero
    Rng rng(123);
    const int draws = 1600;  // 1600 * 64 = 102400 samples
    double sum = 0.0, sumsq = 0.0;
    std::int64_t n = 0;
    for (int d = 0; d < draws; ++d) {
        Tensor eps = rng.normal_tensor({8, 8});
        auto st = forward_sample(x0, t, eps, s);
        for (std::int64_t i = 0; i < st.x_t.size(); ++i) {
            sum += st.x_t[i];
            sumsq += st.x_t[i] * st.x_t[i];
            ++n;
        }
    }
    double mean = sum / n;
    double var = sumsq / n - mean * mean;
    double want_var = 1.0 - s.alpha_bar_at(t);
    double sigma_of_mean = std::sqrt(want_var / n);
    CHECK(std::abs(mean) < 4.0 * sigma_of_mean);
    CHECK(std::abs(var - want_var) / want_var < 0.02);
}

TEST_CASE("forward sample: rejects bad input") {
    auto s = make_linear_schedule(10, 1e-4, 0.02);
    Tensor x0({4, 4});
    Tensor eps({4, 5});
    CHECK_THROWS_AS(forward_sample(x0, 1, eps, s), std::invalid_argument);
    Tensor eps2({4, 4});
    CHECK_THROWS_AS(forward_sample(x0, 0, eps2, s), std::out_of_range);
    CHECK_THROWS_AS(forward_sample(x0, 11, eps2, s), std::out_of_range);
}

TEST_CASE("posterior step: exact inversion at t=1") {
    auto s = make_linear_schedule(10, 1e-4, 0.02);
    Rng rng(5);
    Tensor x0 = rng.uniform_tensor({6, 6}, -1.0, 1.0);
    Tensor eps = rng.normal_tensor({6, 6});
    auto st = forward_sample(x0, 1, eps, s);
    Tensor rec = posterior_step_deterministic(st.x_t, eps, 1, s);
    for (std::int64_t i = 0; i < x0.size(); ++i) CHECK(rec[i] == doctest::Approx(x0[i]).epsilon(1e-6));
}

TEST_CASE("posterior step: identity in the beta->0 limit") {
    auto s = synthetic_schedule(1e-12, 1.0 - 1e-12);
    Rng rng(9);
    Tensor x = rng.normal_tensor({5, 5});
    Tensor eps0({5, 5});
    Tensor out = posterior_step_deterministic(x, eps0, 1, s);
    for (std::int64_t i = 0; i < x.size(); ++i) CHECK(out[i] == doctest::Approx(x[i]).epsilon(1e-9));
}

TEST_CASE("posterior step: closed-loop inversion oracle over the full chain") {
    // oracle noise predictor: the exact eps that relates x_t to x0
    auto s = make_linear_schedule(50, 1e-3, 0.08);
    Rng rng(17);
    Tensor x0({16, 16});
    for (std::int64_t i = 0; i < x0.size(); ++i) x0[i] = rng.uniform() < 0.3 ? 1.0 : -1.0;
    Tensor eps = rng.normal_tensor({16, 16});
    Tensor x = forward_sample(x0, s.T, eps, s).x_t;
    for (int t = s.T; t >= 1; --t) {
        double ab = s.alpha_bar_at(t);
        Tensor eps_true(x.shape());
        for (std::int64_t i = 0; i < x.size(); ++i)
            eps_true[i] = (x[i] - std::sqrt(ab) * x0[i]) / std::sqrt(1.0 - ab);
        x = posterior_step_deterministic(x, eps_true, t, s);
    }
    for (std::int64_t i = 0; i < x.size(); ++i) CHECK(std::abs(x[i] - x0[i]) < 1e-3);
}

TEST_CASE("denoising loss: examples and oracle") {
    Rng rng(3);
    Tensor a = rng.normal_tensor({8, 8});
    CHECK(denoising_loss(a, a) == 0.0);

    Tensor b = a;
    for (std::int64_t i = 0; i < b.size(); ++i) b[i] += 1.0;
    CHECK(denoising_loss(a, b) == doctest::Approx(1.0).epsilon(1e-12));

    // naive double-loop oracle
    Tensor p = rng.normal_tensor({8, 8});
    double want = 0.0;
    for (int i = 0; i < 8; ++i)
        for (int j = 0; j < 8; ++j) {
            double d = a[i * 8 + j] - p[i * 8 + j];
            want += d * d;
        }
    want /= 64.0;
    CHECK(std::abs(denoising_loss(a, p) - want) < 1e-10);

    Tensor c({4, 4});
    CHECK_THROWS_AS(denoising_loss(a, c), std::invalid_argument);
}

TEST_CASE("denoising loss: finite differences match the analytic gradient") {
    Rng rng(11);
    Tensor eps_true = rng.normal_tensor({5, 5});
    Tensor eps_hat = rng.normal_tensor({5, 5});
    Tensor g = denoising_loss_grad(eps_true, eps_hat);
    const double h = 1e-6;
    for (std::int64_t i = 0; i < eps_hat.size(); ++i) {
        Tensor hi = eps_hat, lo = eps_hat;
        hi[i] += h;
        lo[i] -= h;
        double fd = (denoising_loss(eps_true, hi) - denoising_loss(eps_true, lo)) / (2 * h);
        CHECK(std::abs(fd - g[i]) / std::max(1e-12, std::abs(fd)) < 1e-5);
    }
}

TEST_CASE("mask scaling round trip") {
    Tensor m({4});
    m[0] = 0;
    m[1] = 1;
    m[2] = 1;
    m[3] = 0;
    Tensor sig = mask_to_signal(m);
    CHECK(sig[0] == -1.0);
    CHECK(sig[1] == 1.0);
    Tensor back = signal_to_mask(sig);
    for (int i = 0; i < 4; ++i) CHECK(back[i] == m[i]);
    Tensor bad({1}, 0.5);
    CHECK_THROWS_AS(mask_to_signal(bad), std::invalid_argument);
}
