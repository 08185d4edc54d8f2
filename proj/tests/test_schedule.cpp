#include <doctest.h>

#include <cmath>
#include <vector>

#include "pve/denoiser.hpp"
#include "pve/rng.hpp"
#include "pve/schedule.hpp"

using namespace pve;

TEST_CASE("make_linear_schedule at T=1") {
    auto s = make_linear_schedule(1, 1e-4, 0.02);
    CHECK(s.beta[1] == doctest::Approx(1e-4));
    CHECK(s.alpha_bar[1] == doctest::Approx(1.0 - 1e-4));
}

TEST_CASE("alpha_bar_1000 matches the 64-bit cumulative-product oracle") {
    auto s = make_linear_schedule(1000, 1e-4, 0.02);
    // independent recomputation in double
    double prod = 1.0;
    for (int i = 1; i <= 1000; ++i) prod *= 1.0 - (1e-4 + (0.02 - 1e-4) * (i - 1) / 999.0);
    CHECK(std::fabs(s.alpha_bar[1000] - prod) / prod < 1e-6);
    // frozen high-precision value
    CHECK(std::fabs(s.alpha_bar[1000] - 4.0358297653756835e-05) / 4.0358297653756835e-05 < 1e-6);
}

TEST_CASE("schedule bounds are validated") {
    CHECK_THROWS_AS(make_linear_schedule(1000, 1e-4, 1.0), ScheduleError);
    CHECK_THROWS_AS(make_linear_schedule(0, 1e-4, 0.02), ScheduleError);
    CHECK_THROWS_AS(make_linear_schedule(10, 0.0, 0.02), ScheduleError);
    CHECK_THROWS_AS(make_linear_schedule(10, 0.03, 0.02), ScheduleError);
}

TEST_CASE("alpha_bar is strictly decreasing and betas non-decreasing") {
    auto s = make_linear_schedule(500, 1e-4, 0.02);
    for (int i = 1; i <= 500; ++i) {
        CHECK(s.alpha_bar[static_cast<size_t>(i)] < s.alpha_bar[static_cast<size_t>(i) - 1]);
        if (i > 1) CHECK(s.beta[static_cast<size_t>(i)] >= s.beta[static_cast<size_t>(i) - 1]);
    }
}

TEST_CASE("step_from_fraction rounds half down") {
    CHECK(step_from_fraction(0.9, 1000) == 900);
    CHECK(step_from_fraction(0.5, 1000) == 500);
    CHECK(step_from_fraction(0.0, 1000) == 0);
    CHECK(step_from_fraction(1.0, 1000) == 1000);
    CHECK(step_from_fraction(0.0015, 1000) == 1);   // 1.5 -> 1
    CHECK(step_from_fraction(0.0025, 1000) == 2);   // 2.5 -> 2
    CHECK(step_from_fraction(0.0026, 1000) == 3);
}

TEST_CASE("add_noise identity and closed forms") {
    auto s = make_linear_schedule(100, 1e-4, 0.02);
    RngStream r{1, RngPurpose::Sampling, 0};
    VideoTensor v0 = gaussian(r, {1, 2, 2, 1});
    VideoTensor eps = gaussian(r, {1, 2, 2, 1});

    VideoTensor id = add_noise(v0, 0, eps, s);
    CHECK(max_abs_diff(id, v0) == 0.0f);

    VideoTensor zero(1, 2, 2, 1);
    VideoTensor out = add_noise(zero, 37, eps, s);
    for (int64_t i = 0; i < out.size(); ++i) CHECK(out[i] == doctest::Approx(s.sqrt_one_minus_ab(37) * eps[i]));

    CHECK_THROWS_AS(add_noise(v0, 101, eps, s), StepIndexError);
}

TEST_CASE("add_noise near the pure-noise limit") {
    auto s = make_linear_schedule(1000, 1e-4, 0.02);
    RngStream r{2, RngPurpose::Sampling, 0};
    VideoTensor v0 = gaussian(r, {1, 2, 2, 1});
    VideoTensor eps = gaussian(r, {1, 2, 2, 1});
    VideoTensor vt = add_noise(v0, 1000, eps, s);
    float mv = 0, me = 0;
    for (int64_t i = 0; i < v0.size(); ++i) {
        mv = std::max(mv, std::fabs(v0[i]));
        me = std::max(me, std::fabs(eps[i]));
    }
    float bound = s.sqrt_ab(1000) * mv + (1.0f - s.sqrt_one_minus_ab(1000)) * me;
    CHECK(max_abs_diff(vt, eps) <= bound + 1e-6f);
}

TEST_CASE("add_noise is linear in (v0, eps) for affine combinations") {
    auto s = make_linear_schedule(100, 1e-4, 0.02);
    RngStream r{3, RngPurpose::Sampling, 0};
    for (int t = 0; t < 20; ++t) {
        VideoTensor u = gaussian(r, {1, 2, 2, 1}), w = gaussian(r, {1, 2, 2, 1});
        VideoTensor e1 = gaussian(r, {1, 2, 2, 1}), e2 = gaussian(r, {1, 2, 2, 1});
        float a = static_cast<float>(r.next_uniform());
        float b = 1.0f - a;
        int i = static_cast<int>(r.next_below(100)) + 1;
        VideoTensor lhs = add_noise(axpby(a, u, b, w), i, axpby(a, e1, b, e2), s);
        VideoTensor rhs = axpby(a, add_noise(u, i, e1, s), b, add_noise(w, i, e2, s));
        CHECK(max_abs_diff(lhs, rhs) < 1e-5f);
    }
}

TEST_CASE("ddpm_step recovers v0 at i=1 with the true eps") {
    auto s = make_linear_schedule(100, 1e-4, 0.02);
    RngStream r{4, RngPurpose::Sampling, 0};
    VideoTensor v0 = gaussian(r, {1, 2, 2, 1});
    VideoTensor eps = gaussian(r, {1, 2, 2, 1});
    VideoTensor v1 = add_noise(v0, 1, eps, s);
    VideoTensor zero(1, 2, 2, 1);
    VideoTensor back = ddpm_step(v1, EpsPrediction{eps, 1}, 1, &zero, s);
    CHECK(max_abs_diff(back, v0) < 1e-5f);
}

TEST_CASE("ddpm_step is deterministic with injected noise") {
    auto s = make_linear_schedule(100, 1e-4, 0.02);
    RngStream r{5, RngPurpose::Sampling, 0};
    VideoTensor v = gaussian(r, {1, 2, 2, 1});
    VideoTensor eps = gaussian(r, {1, 2, 2, 1});
    VideoTensor n = gaussian(r, {1, 2, 2, 1});
    VideoTensor a = ddpm_step(v, EpsPrediction{eps, 50}, 50, &n, s);
    VideoTensor b = ddpm_step(v, EpsPrediction{eps, 50}, 50, &n, s);
    CHECK(max_abs_diff(a, b) == 0.0f);
}

TEST_CASE("ddpm_step without noise source at sigma > 0 is a contract error") {
    auto s = make_linear_schedule(100, 1e-4, 0.02);
    VideoTensor v(1, 1, 1, 1), eps(1, 1, 1, 1);
    CHECK_THROWS_AS(ddpm_step(v, EpsPrediction{eps, 50}, 50, nullptr, s, nullptr), ContractError);
}

TEST_CASE("ddpm chain outputs match GMM mixture moments") {
    // sample x0 from the mixture, noise to v_T exactly, denoise with the exact
    // score and fresh per-step noise; outputs must be mixture-distributed
    auto s = make_linear_schedule(50, 1e-3, 0.03);
    GmmOracle oracle({0.3, 0.7}, {{-1.0}, {1.5}}, {0.25, 0.5}, s);
    RngStream r{6, RngPurpose::Sampling, 0};
    const int N = 4000;
    double sum = 0.0, sq = 0.0;
    for (int k = 0; k < N; ++k) {
        double u = r.next_uniform();
        double x0d = u < 0.3 ? -1.0 + 0.5 * r.next_normal() : 1.5 + std::sqrt(0.5) * r.next_normal();
        VideoTensor x0(1, 1, 1, 1);
        x0[0] = static_cast<float>(x0d);
        VideoTensor eps = gaussian(r, {1, 1, 1, 1});
        VideoTensor v = add_noise(x0, 50, eps, s);
        for (int i = 50; i >= 1; --i) {
            EpsPrediction p = analytic_eps(oracle, v, i, s);
            v = ddpm_step(v, p, i, nullptr, s, &r);
        }
        sum += v[0];
        sq += static_cast<double>(v[0]) * v[0];
    }
    double mean = sum / N, var = sq / N - mean * mean;
    double tm = oracle.mixture_mean(0), tv = oracle.mixture_var(0);
    double se_mean = std::sqrt(tv / N);
    double se_var = tv * std::sqrt(2.0 / N);  // normal-theory approximation
    CHECK(std::fabs(mean - tm) < 3 * se_mean + 0.02);
    CHECK(std::fabs(var - tv) < 3 * se_var + 0.05);
}

TEST_CASE("ddim_step: zero noise equals no noise") {
    auto s = make_linear_schedule(100, 1e-4, 0.02);
    RngStream r{7, RngPurpose::Sampling, 0};
    VideoTensor v = gaussian(r, {1, 2, 2, 1});
    VideoTensor eps = gaussian(r, {1, 2, 2, 1});
    VideoTensor zero(1, 2, 2, 1);
    VideoTensor a = ddim_step(v, EpsPrediction{eps, 40}, 40, 39, &zero, s);
    VideoTensor b = ddim_step(v, EpsPrediction{eps, 40}, 40, 39, nullptr, s);
    CHECK(max_abs_diff(a, b) == 0.0f);
}

TEST_CASE("ddim stepwise descent with the true eps recovers v0") {
    auto s = make_linear_schedule(100, 1e-4, 0.02);
    RngStream r{8, RngPurpose::Sampling, 0};
    VideoTensor v0 = gaussian(r, {1, 2, 2, 1});
    VideoTensor eps = gaussian(r, {1, 2, 2, 1});
    VideoTensor v = add_noise(v0, 100, eps, s);
    for (int i = 100; i >= 1; --i) v = ddim_step(v, EpsPrediction{eps, i}, i, i - 1, nullptr, s);
    CHECK(max_abs_diff(v, v0) <= 1e-4f);
}

TEST_CASE("ddim skipped schedule matches a 64-bit reference") {
    auto s = make_linear_schedule(1000, 1e-4, 0.02);
    RngStream r{9, RngPurpose::Sampling, 0};
    VideoTensor v0 = gaussian(r, {1, 2, 2, 1});
    VideoTensor eps = gaussian(r, {1, 2, 2, 1});
    VideoTensor v = add_noise(v0, 1000, eps, s);

    // double-precision reference over the same {1000, 900, ..., 100, 0} grid
    std::vector<double> ab(1001);
    double prod = 1.0;
    ab[0] = 1.0;
    for (int i = 1; i <= 1000; ++i) {
        prod *= 1.0 - (1e-4 + (0.02 - 1e-4) * (i - 1) / 999.0);
        ab[static_cast<size_t>(i)] = prod;
    }
    std::vector<double> ref(static_cast<size_t>(v.size()));
    for (int64_t k = 0; k < v.size(); ++k) ref[static_cast<size_t>(k)] = v[k];
    VideoTensor cur = v;
    for (int i = 1000; i >= 100; i -= 100) {
        int ip = i - 100 >= 100 ? i - 100 : 0;
        double sab_i = std::sqrt(ab[static_cast<size_t>(i)]);
        double somb_i = std::sqrt(1.0 - ab[static_cast<size_t>(i)]);
        double sab_p = std::sqrt(ab[static_cast<size_t>(ip)]);
        double somb_p = std::sqrt(1.0 - ab[static_cast<size_t>(ip)]);
        for (size_t k = 0; k < ref.size(); ++k) {
            double x0 = (ref[k] - somb_i * eps[static_cast<int64_t>(k)]) / sab_i;
            ref[k] = sab_p * x0 + somb_p * eps[static_cast<int64_t>(k)];
        }
        cur = ddim_step(cur, EpsPrediction{eps, i}, i, ip, nullptr, s);
        if (ip == 0) break;
    }
    for (int64_t k = 0; k < cur.size(); ++k) {
        double denom = std::max(std::fabs(ref[static_cast<size_t>(k)]), 1e-6);
        CHECK(std::fabs(cur[k] - ref[static_cast<size_t>(k)]) / denom < 1e-5);
    }
}

TEST_CASE("ddim index-order violations are step-index errors") {
    auto s = make_linear_schedule(100, 1e-4, 0.02);
    VideoTensor v(1, 1, 1, 1), eps(1, 1, 1, 1);
    CHECK_THROWS_AS(ddim_step(v, EpsPrediction{eps, 10}, 10, 10, nullptr, s), StepIndexError);
    CHECK_THROWS_AS(ddim_step(v, EpsPrediction{eps, 10}, 10, 11, nullptr, s), StepIndexError);
    CHECK_THROWS_AS(ddim_step(v, EpsPrediction{eps, 101}, 101, 99, nullptr, s), StepIndexError);
}

TEST_CASE("cfg_combine endpoints and the paper scale") {
    RngStream r{10, RngPurpose::Sampling, 0};
    VideoTensor u = gaussian(r, {1, 2, 2, 1});
    VideoTensor c = gaussian(r, {1, 2, 2, 1});
    EpsPrediction pu{u, 5}, pc{c, 5};
    CHECK(max_abs_diff(cfg_combine(pu, pc, 1.0f).eps, c) == 0.0f);
    CHECK(max_abs_diff(cfg_combine(pu, pc, 0.0f).eps, u) == 0.0f);

    VideoTensor zero(1, 2, 2, 1);
    VideoTensor one(1, 2, 2, 1);
    for (int64_t i = 0; i < one.size(); ++i) one[i] = 1.0f;
    EpsPrediction comb = cfg_combine(EpsPrediction{zero, 5}, EpsPrediction{one, 5}, 7.0f);
    for (int64_t i = 0; i < comb.eps.size(); ++i) CHECK(comb.eps[i] == 7.0f);
}

TEST_CASE("schedule rebuilt from an echoed config is identical") {
    auto a = make_linear_schedule(777, 2e-4, 0.015);
    auto b = make_linear_schedule(777, 2e-4, 0.015);
    for (int i = 0; i <= 777; ++i)
        CHECK(a.alpha_bar[static_cast<size_t>(i)] == b.alpha_bar[static_cast<size_t>(i)]);
}
