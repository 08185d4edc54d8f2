#ifndef PVE_EDITING_HPP
#define PVE_EDITING_HPP

#include <functional>
#include <optional>
#include <utility>
#include <vector>

#include "pve/inversion.hpp"
#include "pve/synth.hpp"

namespace pve {

struct ControlConfig {
    double alpha = 0.9;
    double beta = 0.5;
    double guidance_scale = 7.0;
    double lambda = 0.5;
    int max_subtasks = 6;
    SamplerTag sampler = SamplerTag::Ddpm;

    void validate() const {
        if (!(alpha >= 0.0 && alpha <= 1.0)) throw ConfigError("edit.alpha must lie in [0, 1]");
        if (!(beta >= 0.0)) throw ConfigError("edit.beta must be >= 0");
        if (alpha > 0.0 && !(beta < alpha)) throw ConfigError("edit.beta must be < edit.alpha");
        if (alpha == 0.0 && beta != 0.0) throw ConfigError("edit.beta must be < edit.alpha");
        if (!(lambda >= 0.0 && lambda <= 1.0)) throw ConfigError("edit.lambda must lie in [0, 1]");
        if (max_subtasks < 1) throw ConfigError("edit.max_subtasks must be >= 1");
        if (!std::isfinite(guidance_scale)) throw ConfigError("edit.guidance_scale must be finite");
    }

    GuidanceOpts guidance() const { return GuidanceOpts{true, static_cast<float>(guidance_scale)}; }
};

// n_mix = lambda * n_prev + (1 - lambda) * n_ref, start mixed identically
inline LatentTrack mix_tracks(const LatentTrack& prev, const LatentTrack& ref, double lambda) {
    prev.validate();
    ref.validate();
    if (prev.alpha_steps != ref.alpha_steps || !prev.start.same_shape(ref.start))
        throw ShapeError("mix_tracks: track length or shape mismatch");
    if (prev.sampler != ref.sampler) throw ContractError("mix_tracks: sampler tag mismatch");
    LatentTrack out;
    out.alpha_steps = prev.alpha_steps;
    out.sampler = prev.sampler;
    float l = static_cast<float>(lambda);
    out.start = axpby(l, prev.start, 1.0f - l, ref.start);
    out.noises.reserve(prev.noises.size());
    for (size_t i = 0; i < prev.noises.size(); ++i)
        out.noises.push_back(axpby(l, prev.noises[i], 1.0f - l, ref.noises[i]));
    return out;
}

/// Prompt-to-prompt word-swap pairing: every slot column takes the source
// branch's attention logits, so the edit branch reuses the original spatial
// weighting while its own value vectors carry the edited tokens.
inline attn::ReplacementSpec make_replacement_spec(const PromptTokens& orig, const PromptTokens& edit) {
    if (orig.ids.size() != edit.ids.size()) throw ContractError("make_replacement_spec: prompt lengths differ");
    attn::ReplacementSpec spec;
    for (size_t k = 0; k < orig.ids.size(); ++k) spec.pairs.emplace_back(static_cast<int>(k), static_cast<int>(k));
    return spec;
}

struct StepDiagnostics {
    int step = 0;
    bool injected = false;
    bool amr = false;
};

struct SubtaskResult {
    int index = 0;
    VideoTensor edited;
    VideoTensor orig_regen;
    LatentTrack track_used;  // the mixed track injected into the edit branch
    std::vector<StepDiagnostics> diagnostics;
};

// Dual generation with latent injection and attention replacement inside
// (beta T, alpha T], free refinement below beta T. Both branches start from
// the same v_{alphaT}; the orig branch injects its own track so it
// reconstructs the current subtask video while exposing its attention maps.
inline SubtaskResult preserve_edit(const VideoTensor& v_src, const PromptTokens& prompt_orig,
                                   const PromptTokens& prompt_edit, const ControlConfig& cfg, const EpsModel& model,
                                   const NoiseSchedule& sched, const LatentTrack& track_ref,
                                   const LatentTrack* track_prev, RngStream refine_stream) {
    cfg.validate();
    const int at = step_from_fraction(cfg.alpha, sched.steps);
    const int bt = step_from_fraction(cfg.beta, sched.steps);

    SubtaskResult res;
    if (at == 0) {
        res.edited = v_src;
        res.orig_regen = v_src;
        res.track_used = track_ref;
        return res;
    }
    if (track_ref.alpha_steps != at || (track_prev && track_prev->alpha_steps != at))
        throw ContractError("preserve_edit: track length does not match alpha T");
    if (track_prev && !track_prev->start.same_shape(track_ref.start))
        throw ShapeError("preserve_edit: track shapes differ");
    if (track_ref.sampler != cfg.sampler) throw ContractError("preserve_edit: track/sampler tag mismatch");

    const LatentTrack& orig_track = track_prev ? *track_prev : track_ref;
    LatentTrack mixed = track_prev ? mix_tracks(*track_prev, track_ref, cfg.lambda) : track_ref;

    const GuidanceOpts g = cfg.guidance();
    const attn::ReplacementSpec amr_spec = make_replacement_spec(prompt_orig, prompt_edit);
    const attn::ReplacementSpec empty_spec;
    const PromptTokens null_o = PromptTokens::null_prompt(static_cast<int>(prompt_orig.ids.size()));
    const PromptTokens null_e = PromptTokens::null_prompt(static_cast<int>(prompt_edit.ids.size()));

    VideoTensor v_o = mixed.start;
    VideoTensor v_e = mixed.start;
    res.diagnostics.reserve(static_cast<size_t>(at));

    for (int i = at; i >= 1; --i) {
        const bool in_ctl = i > bt;
        const attn::ReplacementSpec& spec = in_ctl ? amr_spec : empty_spec;

        auto [ce_o, ce_e] = model.predict_pair(v_o, v_e, i, prompt_orig, prompt_edit, spec);
        EpsPrediction eps_o{std::move(ce_o), i}, eps_e{std::move(ce_e), i};
        if (g.cfg) {
            auto [ue_o, ue_e] = model.predict_pair(v_o, v_e, i, null_o, null_e, empty_spec);
            eps_o = cfg_combine(EpsPrediction{std::move(ue_o), i}, eps_o, g.scale);
            eps_e = cfg_combine(EpsPrediction{std::move(ue_e), i}, eps_e, g.scale);
        }

        if (cfg.sampler == SamplerTag::Ddpm) {
            if (in_ctl) {
                v_o = ddpm_step(v_o, eps_o, i, &orig_track.noise_at(i), sched);
                v_e = ddpm_step(v_e, eps_e, i, &mixed.noise_at(i), sched);
            } else {
                // shared fresh noise for both branches
                VideoTensor z = gaussian(refine_stream, v_o.dims());
                v_o = ddpm_step(v_o, eps_o, i, &z, sched);
                v_e = ddpm_step(v_e, eps_e, i, &z, sched);
            }
        } else {
            v_o = ddim_step(v_o, eps_o, i, i - 1, in_ctl ? &orig_track.noise_at(i) : nullptr, sched);
            v_e = ddim_step(v_e, eps_e, i, i - 1, in_ctl ? &mixed.noise_at(i) : nullptr, sched);
        }
        res.diagnostics.push_back({i, in_ctl, in_ctl});
    }

    res.edited = std::move(v_e);
    res.orig_regen = std::move(v_o);
    res.track_used = std::move(mixed);
    return res;
}

struct EditPlan {
    std::vector<PromptTokens> waypoints;  // first = source prompt, last = target

    int subtasks() const { return static_cast<int>(waypoints.size()) - 1; }
};

// Waypoints change one attribute slot per subtask in fixed priority order
// (background, shape, color, extra-object, motion); when differing slots
// exceed the subtask budget, later waypoints bundle the remainder.
inline EditPlan plan_progression(const PromptTokens& src, const PromptTokens& dst, int max_subtasks) {
    if (src.ids.size() != dst.ids.size()) throw ContractError("plan_progression: prompt lengths differ");
    if (max_subtasks < 1) throw ConfigError("plan_progression: max_subtasks must be >= 1");
    static const int priority[synth::kNumSlots] = {synth::SlotBackground, synth::SlotShape, synth::SlotColor,
                                                   synth::SlotExtra, synth::SlotMotion};
    std::vector<int> diff;
    for (int s : priority)
        if (src.ids[static_cast<size_t>(s)] != dst.ids[static_cast<size_t>(s)]) diff.push_back(s);

    EditPlan plan;
    plan.waypoints.push_back(src);
    if (diff.empty()) return plan;

    const int nsub = std::max(1, std::min(static_cast<int>(diff.size()), max_subtasks - 1));
    // distribute slots over subtasks, extras go to the later waypoints
    const int total = static_cast<int>(diff.size());
    const int base = total / nsub, rem = total % nsub;
    PromptTokens cur = src;
    size_t next = 0;
    for (int t = 0; t < nsub; ++t) {
        int take = base + (t >= nsub - rem ? 1 : 0);
        for (int q = 0; q < take; ++q, ++next) {
            int s = diff[next];
            cur.ids[static_cast<size_t>(s)] = dst.ids[static_cast<size_t>(s)];
        }
        plan.waypoints.push_back(cur);
    }
    return plan;
}

using SubtaskHook = std::function<VideoTensor(const VideoTensor&)>;

struct ProgressionResult {
    std::vector<SubtaskResult> subtasks;
    VideoTensor final_video;
};

// Per subtask t, the orig branch regenerates the current video (its own
// track) and the edit branch moves to the next waypoint, guided by a mixture
// of the previous subtask's latents and the original video's latents.
inline ProgressionResult run_progression(const VideoTensor& v0, const EditPlan& plan, const ControlConfig& cfg,
                                         const EpsModel& model, const NoiseSchedule& sched, RngStream stream,
                                         const SubtaskHook& hook = nullptr) {
    cfg.validate();
    if (plan.waypoints.empty()) throw ContractError("run_progression: empty plan");

    InvertOpts iopts;
    iopts.sampler = cfg.sampler;
    iopts.guidance = cfg.guidance();

    ProgressionResult out;
    if (plan.subtasks() == 0) {
        // identity plan: one subtask with matching prompts
        RngStream inv_s = stream.fork(1);
        LatentTrack ref = invert(v0, cfg.alpha, model, plan.waypoints[0], sched, inv_s, iopts);
        SubtaskResult r = preserve_edit(v0, plan.waypoints[0], plan.waypoints[0], cfg, model, sched, ref, nullptr,
                                        stream.fork(2));
        r.index = 1;
        out.final_video = r.edited;
        out.subtasks.push_back(std::move(r));
        return out;
    }

    RngStream inv_ref = stream.fork(1);
    LatentTrack track_ref = invert(v0, cfg.alpha, model, plan.waypoints[0], sched, inv_ref, iopts);

    VideoTensor current = v0;
    std::optional<LatentTrack> track_prev;
    for (int t = 1; t <= plan.subtasks(); ++t) {
        const PromptTokens& p_orig = plan.waypoints[static_cast<size_t>(t) - 1];
        const PromptTokens& p_edit = plan.waypoints[static_cast<size_t>(t)];
        if (t > 1) {
            RngStream inv_s = stream.fork(100 + static_cast<uint64_t>(t));
            track_prev = invert(current, cfg.alpha, model, p_orig, sched, inv_s, iopts);
        }
        SubtaskResult r = preserve_edit(current, p_orig, p_edit, cfg, model, sched, track_ref,
                                        track_prev ? &*track_prev : nullptr, stream.fork(200 + static_cast<uint64_t>(t)));
        r.index = t;
        current = r.edited;
        if (hook) {
            current = hook(current);
            if (!current.same_shape(r.edited)) throw PipelineError("run_progression: hook changed the video shape");
        }
        out.subtasks.push_back(std::move(r));
    }
    out.final_video = current;
    return out;
}

}  // namespace pve

#endif
