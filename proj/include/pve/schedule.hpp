#ifndef PVE_SCHEDULE_HPP
#define PVE_SCHEDULE_HPP

#include <cmath>
#include <vector>

#include "pve/errors.hpp"
#include "pve/rng.hpp"
#include "pve/tensor.hpp"

namespace pve {

enum class SamplerTag : uint8_t { Ddpm = 0, Ddim = 1 };

// beta/alpha/alpha_bar tables, 1-based in the step index; index 0 holds the
// conventions beta_0 = 0, alpha_bar_0 = 1.
struct NoiseSchedule {
    int steps = 0;
    std::vector<float> beta;       // beta[i], i in [1, T]
    std::vector<float> alpha;      // 1 - beta[i]
    std::vector<float> alpha_bar;  // prod_{j<=i} alpha[j], computed in 64-bit

    float sqrt_ab(int i) const { return std::sqrt(alpha_bar[static_cast<size_t>(i)]); }
    float sqrt_one_minus_ab(int i) const { return std::sqrt(1.0f - alpha_bar[static_cast<size_t>(i)]); }

    // posterior stddev; zero at i = 1
    float sigma(int i) const {
        if (i <= 1) return 0.0f;
        size_t u = static_cast<size_t>(i);
        return std::sqrt(beta[u] * (1.0f - alpha_bar[u - 1]) / (1.0f - alpha_bar[u]));
    }

    void check_step(int i) const {
        if (i < 1 || i > steps) throw StepIndexError("step index " + std::to_string(i) + " outside [1, T]");
    }
};

inline NoiseSchedule make_linear_schedule(int steps, double beta_start, double beta_end) {
    if (steps < 1) throw ScheduleError("steps must be >= 1");
    if (!(beta_start > 0.0) || !(beta_start <= beta_end) || !(beta_end < 1.0))
        throw ScheduleError("require 0 < beta_start <= beta_end < 1");
    NoiseSchedule s;
    s.steps = steps;
    s.beta.resize(static_cast<size_t>(steps) + 1);
    s.alpha.resize(static_cast<size_t>(steps) + 1);
    s.alpha_bar.resize(static_cast<size_t>(steps) + 1);
    s.beta[0] = 0.0f;
    s.alpha[0] = 1.0f;
    s.alpha_bar[0] = 1.0f;
    double prod = 1.0;
    for (int i = 1; i <= steps; ++i) {
        double b = steps == 1 ? beta_start
                              : beta_start + (beta_end - beta_start) * (i - 1) / static_cast<double>(steps - 1);
        prod *= 1.0 - b;
        size_t u = static_cast<size_t>(i);
        s.beta[u] = static_cast<float>(b);
        s.alpha[u] = static_cast<float>(1.0 - b);
        s.alpha_bar[u] = static_cast<float>(prod);
    }
    return s;
}

// fraction-of-T to integer step, round half down
inline int step_from_fraction(double frac, int steps) {
    int i = static_cast<int>(std::ceil(frac * steps - 0.5));
    if (i < 0) i = 0;
    if (i > steps) i = steps;
    return i;
}

struct EpsPrediction {
    VideoTensor eps;
    int step = 0;
};

// closed form of A_1 ... A_i: v_i = sqrt(ab_i) v0 + sqrt(1 - ab_i) eps
inline VideoTensor add_noise(const VideoTensor& v0, int i, const VideoTensor& eps, const NoiseSchedule& sched) {
    if (i == 0) return v0;
    sched.check_step(i);
    if (!v0.same_shape(eps)) throw ShapeError("add_noise: eps shape mismatch");
    return axpby(sched.sqrt_ab(i), v0, sched.sqrt_one_minus_ab(i), eps);
}

// Ancestral update: mean mu_i plus sigma_i * z where z is the injected noise
// when supplied and a fresh draw otherwise. Deterministic when n is given.
inline VideoTensor ddpm_step(const VideoTensor& v, const EpsPrediction& pred, int i,
                             const VideoTensor* n, const NoiseSchedule& sched,
                             RngStream* stream = nullptr) {
    sched.check_step(i);
    if (pred.eps.size() && !v.same_shape(pred.eps)) throw ShapeError("ddpm_step: eps shape mismatch");
    if (n && !v.same_shape(*n)) throw ShapeError("ddpm_step: injected noise shape mismatch");
    size_t u = static_cast<size_t>(i);
    double coef = static_cast<double>(sched.beta[u]) / std::sqrt(1.0 - sched.alpha_bar[u]);
    double inv_sqrt_alpha = 1.0 / std::sqrt(static_cast<double>(sched.alpha[u]));
    VideoTensor out(v.dims());
    for (int64_t k = 0; k < v.size(); ++k)
        out[k] = static_cast<float>(inv_sqrt_alpha * (v[k] - coef * pred.eps[k]));
    double sig = sched.sigma(i);
    if (sig > 0.0) {
        if (n) {
            for (int64_t k = 0; k < v.size(); ++k) out[k] = static_cast<float>(out[k] + sig * (*n)[k]);
        } else {
            if (!stream) throw ContractError("ddpm_step: fresh noise requested but no stream supplied");
            for (int64_t k = 0; k < v.size(); ++k) out[k] = static_cast<float>(out[k] + sig * stream->next_normal());
        }
    }
    return out;
}

// Deterministic DDIM update (eta = 0); stochasticity enters only through the
// additive injected noise, honoring the D_i(v_i) + n_i contract.
inline VideoTensor ddim_step(const VideoTensor& v, const EpsPrediction& pred, int i, int i_prev,
                             const VideoTensor* n, const NoiseSchedule& sched) {
    if (!(0 <= i_prev && i_prev < i && i <= sched.steps))
        throw StepIndexError("ddim_step: require 0 <= i_prev < i <= T");
    if (!v.same_shape(pred.eps)) throw ShapeError("ddim_step: eps shape mismatch");
    if (n && !v.same_shape(*n)) throw ShapeError("ddim_step: injected noise shape mismatch");
    double sab_i = std::sqrt(static_cast<double>(sched.alpha_bar[static_cast<size_t>(i)]));
    double somb_i = std::sqrt(1.0 - sched.alpha_bar[static_cast<size_t>(i)]);
    double sab_p = std::sqrt(static_cast<double>(sched.alpha_bar[static_cast<size_t>(i_prev)]));
    double somb_p = std::sqrt(1.0 - sched.alpha_bar[static_cast<size_t>(i_prev)]);
    VideoTensor out(v.dims());
    for (int64_t k = 0; k < v.size(); ++k) {
        double x0 = (v[k] - somb_i * pred.eps[k]) / sab_i;
        double y = sab_p * x0 + somb_p * pred.eps[k];
        if (n) y += (*n)[k];
        out[k] = static_cast<float>(y);
    }
    return out;
}

// classifier-free guidance: eps_u + s * (eps_c - eps_u)
inline EpsPrediction cfg_combine(const EpsPrediction& eps_uncond, const EpsPrediction& eps_cond, float s) {
    if (!eps_uncond.eps.same_shape(eps_cond.eps)) throw ShapeError("cfg_combine: shape mismatch");
    if (!std::isfinite(s)) throw ContractError("cfg_combine: non-finite scale");
    EpsPrediction out;
    out.step = eps_cond.step;
    out.eps = axpby(1.0f - s, eps_uncond.eps, s, eps_cond.eps);
    return out;
}

}  // namespace pve

#endif
