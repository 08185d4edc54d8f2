#ifndef PVE_INVERSION_HPP
#define PVE_INVERSION_HPP

#include <fstream>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "pve/denoiser.hpp"
#include "pve/schedule.hpp"

namespace pve {

// How the eps-prediction used for inversion/replay is formed. The editing
// pipeline passes the same options to invert and replay so the per-step
// residuals close exactly under any deterministic prediction.
struct GuidanceOpts {
    bool cfg = false;     // combine conditional with a null-prompt pass
    float scale = 1.0f;
};

inline EpsPrediction guided_eps(const EpsModel& model, const VideoTensor& v, int i, const PromptTokens& prompt,
                                const GuidanceOpts& g) {
    if (!g.cfg) return EpsPrediction{model.predict(v, i, prompt), i};
    EpsPrediction u{model.predict(v, i, PromptTokens::null_prompt(static_cast<int>(prompt.ids.size()))), i};
    EpsPrediction c{model.predict(v, i, prompt), i};
    return cfg_combine(u, c, g.scale);
}

// The noisy start v_{alphaT} plus the exact per-step noises that make the
// tagged sampler reproduce the source. noises[i-1] holds n_i for i = 1..alphaT.
struct LatentTrack {
    int alpha_steps = 0;
    VideoTensor start;
    std::vector<VideoTensor> noises;
    SamplerTag sampler = SamplerTag::Ddpm;

    const VideoTensor& noise_at(int i) const { return noises[static_cast<size_t>(i) - 1]; }

    void validate() const {
        if (static_cast<int>(noises.size()) != alpha_steps)
            throw ContractError("LatentTrack: noise count does not equal alphaT");
        for (const auto& n : noises)
            if (!n.same_shape(start)) throw ContractError("LatentTrack: noise shape mismatch");
    }
};

// "VTRK" | sampler tag u8 | alphaT u32 | start + noises as embedded VTEN records
inline void save_track(const LatentTrack& t, const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw FormatError("cannot open for writing: " + path);
    os.write("VTRK", 4);
    uint8_t tag = static_cast<uint8_t>(t.sampler);
    os.write(reinterpret_cast<const char*>(&tag), 1);
    detail::write_u32(os, static_cast<uint32_t>(t.alpha_steps));
    save_tensor(t.start, os);
    for (const auto& n : t.noises) save_tensor(n, os);
    if (!os) throw FormatError("write failed: " + path);
}

inline LatentTrack load_track(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw FormatError("cannot open: " + path);
    char magic[4] = {};
    is.read(magic, 4);
    if (!is || std::memcmp(magic, "VTRK", 4) != 0) throw FormatError("bad magic, expected VTRK");
    uint8_t tag = 0;
    is.read(reinterpret_cast<char*>(&tag), 1);
    if (!is || tag > 1) throw FormatError("bad sampler tag");
    LatentTrack t;
    t.sampler = static_cast<SamplerTag>(tag);
    t.alpha_steps = static_cast<int>(detail::read_u32(is));
    t.start = load_tensor(is);
    t.noises.reserve(static_cast<size_t>(t.alpha_steps));
    for (int i = 0; i < t.alpha_steps; ++i) t.noises.push_back(load_tensor(is));
    t.validate();
    return t;
}

struct InvertOpts {
    SamplerTag sampler = SamplerTag::Ddpm;
    GuidanceOpts guidance;
    // i = 1 of the DDPM chain has sigma_1 = 0, so no residual can absorb the
    // prediction error there; the forward v_1 is instead solved from
    // v_1 = sqrt(a_1) v_0 + sqrt(b_1) eps_hat(v_1) by fixed-point iteration.
    int final_step_iters = 60;
    double final_step_tol = 1e-7;
};

// Extract the per-step noises that make the reverse chain land exactly on the
// forward sequence: for DDPM n_i = (v_{i-1} - mu_i) / sigma_i, for DDIM
// n_i = v_{i-1} - D_i(v_i).
inline LatentTrack invert(const VideoTensor& v0, double alpha, const EpsModel& model, const PromptTokens& prompt,
                          const NoiseSchedule& sched, RngStream& stream, const InvertOpts& opts = {}) {
    if (!(alpha >= 0.0 && alpha <= 1.0)) throw ContractError("invert: alpha outside [0, 1]");
    const int at = step_from_fraction(alpha, sched.steps);
    LatentTrack track;
    track.sampler = opts.sampler;
    track.alpha_steps = at;
    if (at == 0) {
        track.start = v0;
        return track;
    }

    // forward stochastic chain v_i = sqrt(a_i) v_{i-1} + sqrt(b_i) z_i
    std::vector<VideoTensor> chain;
    chain.reserve(static_cast<size_t>(at) + 1);
    chain.push_back(v0);
    for (int i = 1; i <= at; ++i) {
        VideoTensor z = gaussian(stream, v0.dims());
        size_t u = static_cast<size_t>(i);
        chain.push_back(axpby(std::sqrt(sched.alpha[u]), chain.back(), std::sqrt(sched.beta[u]), z));
    }

    if (opts.sampler == SamplerTag::Ddpm) {
        // replace v_1 so the deterministic final step closes on v_0
        float sa = std::sqrt(sched.alpha[1]);
        float sb = std::sqrt(sched.beta[1]);
        VideoTensor v1 = chain[1];
        for (int it = 0; it < opts.final_step_iters; ++it) {
            EpsPrediction e = guided_eps(model, v1, 1, prompt, opts.guidance);
            VideoTensor next = axpby(sa, v0, sb, e.eps);
            float delta = max_abs_diff(next, v1);
            v1 = std::move(next);
            if (delta < opts.final_step_tol) break;
        }
        // the step-2 residual below is solved against the replaced v_1
        chain[1] = std::move(v1);
    }

    track.start = chain[static_cast<size_t>(at)];
    track.noises.resize(static_cast<size_t>(at));
    for (int i = at; i >= 1; --i) {
        const VideoTensor& vi = chain[static_cast<size_t>(i)];
        const VideoTensor& vprev = chain[static_cast<size_t>(i) - 1];
        EpsPrediction eps = guided_eps(model, vi, i, prompt, opts.guidance);
        eps.eps.ensure_finite("invert: eps prediction");
        if (opts.sampler == SamplerTag::Ddpm) {
            if (i == 1) {
                track.noises[0] = VideoTensor(v0.dims());  // sigma_1 = 0; unused on replay
            } else {
                double sig = sched.sigma(i);
                if (!(sig > 0.0)) throw ScheduleError("invert: sigma_i = 0 at i > 1 (degenerate schedule)");
                size_t u = static_cast<size_t>(i);
                double coef = static_cast<double>(sched.beta[u]) / std::sqrt(1.0 - sched.alpha_bar[u]);
                double inv_sqrt_alpha = 1.0 / std::sqrt(static_cast<double>(sched.alpha[u]));
                VideoTensor n(v0.dims());
                for (int64_t k = 0; k < n.size(); ++k) {
                    double mu = inv_sqrt_alpha * (vi[k] - coef * eps.eps[k]);
                    n[k] = static_cast<float>((vprev[k] - mu) / sig);
                }
                track.noises[static_cast<size_t>(i) - 1] = std::move(n);
            }
        } else {
            VideoTensor det = ddim_step(vi, eps, i, i - 1, nullptr, sched);
            VideoTensor n(v0.dims());
            for (int64_t k = 0; k < n.size(); ++k) n[k] = vprev[k] - det[k];
            track.noises[static_cast<size_t>(i) - 1] = std::move(n);
        }
    }
    track.validate();
    return track;
}

// Run the tagged sampler from track.start injecting n_i at every step.
inline VideoTensor replay(const LatentTrack& track, const EpsModel& model, const PromptTokens& prompt,
                          const NoiseSchedule& sched, const GuidanceOpts& guidance = {},
                          std::optional<SamplerTag> expect = std::nullopt) {
    track.validate();
    if (expect && *expect != track.sampler) throw ContractError("replay: track/sampler tag mismatch");
    VideoTensor v = track.start;
    for (int i = track.alpha_steps; i >= 1; --i) {
        EpsPrediction eps = guided_eps(model, v, i, prompt, guidance);
        if (track.sampler == SamplerTag::Ddpm) {
            v = ddpm_step(v, eps, i, &track.noise_at(i), sched);
        } else {
            v = ddim_step(v, eps, i, i - 1, &track.noise_at(i), sched);
        }
    }
    return v;
}

}  // namespace pve

#endif
