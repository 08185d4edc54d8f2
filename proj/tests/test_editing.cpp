#include <doctest.h>

#include "pve/editing.hpp"

using namespace pve;

namespace {

GmmOracle tiny_oracle(const NoiseSchedule& sched, size_t dim) {
    std::vector<std::vector<double>> means{std::vector<double>(dim, 0.5), std::vector<double>(dim, -0.5)};
    return GmmOracle({0.5, 0.5}, means, {0.3, 0.3}, sched);
}

LatentTrack random_track(int steps, const Shape4& dims, uint64_t seed, SamplerTag tag = SamplerTag::Ddpm) {
    RngStream r{seed, RngPurpose::Sampling, 0};
    LatentTrack t;
    t.alpha_steps = steps;
    t.sampler = tag;
    t.start = gaussian(r, dims);
    for (int i = 0; i < steps; ++i) t.noises.push_back(gaussian(r, dims));
    return t;
}

int hamming(const PromptTokens& a, const PromptTokens& b) {
    int d = 0;
    for (size_t i = 0; i < a.ids.size(); ++i) d += a.ids[i] != b.ids[i];
    return d;
}

}  // namespace

TEST_CASE("track mixing interpolates starts and noises elementwise") {
    Shape4 dims{1, 2, 2, 1};
    auto a = random_track(3, dims, 1), b = random_track(3, dims, 2);
    auto m1 = mix_tracks(a, b, 1.0);
    CHECK(max_abs_diff(m1.start, a.start) == 0.0f);
    for (int i = 0; i < 3; ++i) CHECK(max_abs_diff(m1.noises[static_cast<size_t>(i)], a.noises[static_cast<size_t>(i)]) == 0.0f);
    auto m0 = mix_tracks(a, b, 0.0);
    CHECK(max_abs_diff(m0.start, b.start) == 0.0f);
    auto mh = mix_tracks(a, b, 0.5);
    for (int64_t k = 0; k < mh.start.size(); ++k)
        CHECK(mh.start[k] == doctest::Approx(0.5f * a.start[k] + 0.5f * b.start[k]).epsilon(1e-6));
    for (size_t i = 0; i < 3; ++i)
        for (int64_t k = 0; k < dims.f * dims.h * dims.w * dims.c; ++k)
            CHECK(mh.noises[i][k] == doctest::Approx(0.5f * a.noises[i][k] + 0.5f * b.noises[i][k]).epsilon(1e-6));
}

TEST_CASE("track mixing rejects incompatible tracks") {
    Shape4 dims{1, 2, 2, 1};
    auto a = random_track(3, dims, 1);
    auto short_b = random_track(2, dims, 2);
    CHECK_THROWS_AS(mix_tracks(a, short_b, 0.5), ShapeError);
    auto ddim_b = random_track(3, dims, 2, SamplerTag::Ddim);
    CHECK_THROWS_AS(mix_tracks(a, ddim_b, 0.5), ContractError);
}

TEST_CASE("replacement spec pairs every prompt slot identically") {
    PromptTokens orig{{3, 5, 11, 14, 17}};
    PromptTokens edit{{3, 7, 11, 14, 18}};
    auto spec = make_replacement_spec(orig, edit);
    REQUIRE(spec.pairs.size() == 5);
    for (int k = 0; k < 5; ++k) CHECK(spec.pairs[static_cast<size_t>(k)] == std::pair<int, int>{k, k});
    CHECK(make_replacement_spec(orig, orig).pairs.size() == 5);
    CHECK_THROWS_AS(make_replacement_spec(orig, PromptTokens{{1, 2}}), ContractError);
}

TEST_CASE("progression planning changes one priority-ordered slot per subtask") {
    using namespace synth;
    SceneSpec src{0, 0, 0, 0, 0, 4, 32, 32};
    SceneSpec dst{1, 2, 3, 0, 0, 4, 32, 32};  // shape, color, background differ
    auto plan = plan_progression(encode_prompt(src), encode_prompt(dst), 6);
    REQUIRE(plan.subtasks() == 3);
    // priority order: background first, then shape, then color
    SceneSpec w1 = decode_prompt(plan.waypoints[1], 4, 32, 32);
    CHECK(w1.background == dst.background);
    CHECK(w1.shape == src.shape);
    CHECK(w1.color == src.color);
    SceneSpec w2 = decode_prompt(plan.waypoints[2], 4, 32, 32);
    CHECK(w2.background == dst.background);
    CHECK(w2.shape == dst.shape);
    CHECK(w2.color == src.color);
    CHECK(decode_prompt(plan.waypoints[3], 4, 32, 32) == dst);
    // the distance to the target shrinks monotonically
    for (size_t t = 1; t < plan.waypoints.size(); ++t)
        CHECK(hamming(plan.waypoints[t], encode_prompt(dst)) < hamming(plan.waypoints[t - 1], encode_prompt(dst)));
}

TEST_CASE("progression planning bundles slots when the budget is short") {
    using namespace synth;
    SceneSpec src{0, 0, 0, 0, 0, 4, 32, 32};
    SceneSpec dst{1, 1, 1, 1, 1, 4, 32, 32};  // all five slots differ
    auto plan = plan_progression(encode_prompt(src), encode_prompt(dst), 3);
    REQUIRE(plan.subtasks() == 2);
    // 5 slots over 2 subtasks: 2 then 3, extras to the later waypoint
    CHECK(hamming(plan.waypoints[0], plan.waypoints[1]) == 2);
    CHECK(hamming(plan.waypoints[1], plan.waypoints[2]) == 3);
    CHECK(plan.waypoints.back() == encode_prompt(dst));

    auto single = plan_progression(encode_prompt(src), encode_prompt(dst), 1);
    REQUIRE(single.subtasks() == 1);
    CHECK(single.waypoints.back() == encode_prompt(dst));

    auto none = plan_progression(encode_prompt(src), encode_prompt(src), 4);
    CHECK(none.subtasks() == 0);
    CHECK_THROWS_AS(plan_progression(encode_prompt(src), encode_prompt(dst), 0), ConfigError);
}

TEST_CASE("injection and replacement run exactly inside the control interval") {
    auto sched = make_linear_schedule(1000, 1e-4, 0.02);
    auto oracle = tiny_oracle(sched, 4);
    Shape4 dims{1, 2, 2, 1};
    RngStream data{30, RngPurpose::Dataset, 0};
    VideoTensor v0 = gaussian(data, dims);
    PromptTokens p{{1, 2, 3, 4, 5}};
    struct Case {
        double alpha, beta;
    };
    for (Case c : {Case{0.9, 0.5}, Case{0.5, 0.0}, Case{1.0, 0.9}}) {
        ControlConfig cfg;
        cfg.alpha = c.alpha;
        cfg.beta = c.beta;
        const int at = step_from_fraction(c.alpha, sched.steps);
        const int bt = step_from_fraction(c.beta, sched.steps);
        auto ref = random_track(at, dims, 31);
        RngStream refine{32, RngPurpose::Sampling, 0};
        auto res = preserve_edit(v0, p, p, cfg, oracle, sched, ref, nullptr, refine);
        REQUIRE(static_cast<int>(res.diagnostics.size()) == at);
        for (const auto& d : res.diagnostics) {
            CHECK(d.injected == (d.step > bt));
            CHECK(d.amr == (d.step > bt));
        }
        int injected = 0;
        for (const auto& d : res.diagnostics) injected += d.injected;
        CHECK(injected == at - bt);
        CHECK(res.diagnostics.front().step == at);
        CHECK(res.diagnostics.back().step == 1);
    }
}

TEST_CASE("an identity edit with full-interval injection reproduces the source") {
    auto sched = make_linear_schedule(50, 1e-3, 0.02);
    auto oracle = tiny_oracle(sched, 16);
    RngStream data{33, RngPurpose::Dataset, 0};
    VideoTensor v0 = gaussian(data, {1, 4, 4, 1});
    PromptTokens p{{1, 2, 3, 4, 5}};
    ControlConfig cfg;
    cfg.alpha = 0.9;
    cfg.beta = 0.0;
    cfg.lambda = 1.0;
    EditPlan plan;
    plan.waypoints = {p};
    RngStream s{34, RngPurpose::Sampling, 0};
    auto res = run_progression(v0, plan, cfg, oracle, sched, s);
    REQUIRE(res.subtasks.size() == 1);
    CHECK(max_abs_diff(res.final_video, v0) <= 1e-3f);
    CHECK(max_abs_diff(res.subtasks[0].orig_regen, res.subtasks[0].edited) == 0.0f);
}

TEST_CASE("progressions are deterministic and honor the subtask hook") {
    auto sched = make_linear_schedule(30, 1e-3, 0.02);
    auto oracle = tiny_oracle(sched, 16);
    RngStream data{35, RngPurpose::Dataset, 0};
    VideoTensor v0 = gaussian(data, {1, 4, 4, 1});
    PromptTokens src{{1, 2, 3, 4, 5}}, dst{{2, 3, 3, 4, 5}};
    EditPlan plan = plan_progression(src, dst, 6);
    REQUIRE(plan.subtasks() == 2);
    ControlConfig cfg;
    cfg.alpha = 0.8;
    cfg.beta = 0.3;

    RngStream s1{36, RngPurpose::Sampling, 0}, s2{36, RngPurpose::Sampling, 0};
    auto r1 = run_progression(v0, plan, cfg, oracle, sched, s1);
    auto r2 = run_progression(v0, plan, cfg, oracle, sched, s2);
    CHECK(max_abs_diff(r1.final_video, r2.final_video) == 0.0f);

    int hook_calls = 0;
    SubtaskHook hook = [&](const VideoTensor& v) {
        ++hook_calls;
        VideoTensor out = v;
        for (int64_t k = 0; k < out.size(); ++k) out[k] += 0.01f;
        return out;
    };
    RngStream s3{36, RngPurpose::Sampling, 0};
    auto r3 = run_progression(v0, plan, cfg, oracle, sched, s3, hook);
    CHECK(hook_calls == plan.subtasks());
    CHECK(max_abs_diff(r3.final_video, r1.final_video) > 0.0f);

    SubtaskHook bad = [](const VideoTensor&) { return VideoTensor(1, 2, 2, 1); };
    RngStream s4{36, RngPurpose::Sampling, 0};
    CHECK_THROWS_AS(run_progression(v0, plan, cfg, oracle, sched, s4, bad), PipelineError);
}

TEST_CASE("control configuration validation names its failing fields") {
    ControlConfig cfg;
    cfg.beta = 0.95;
    CHECK_THROWS_WITH_AS(cfg.validate(), "edit.beta must be < edit.alpha", ConfigError);
    cfg = {};
    cfg.alpha = 1.5;
    CHECK_THROWS_WITH_AS(cfg.validate(), "edit.alpha must lie in [0, 1]", ConfigError);
    cfg = {};
    cfg.lambda = -0.1;
    CHECK_THROWS_WITH_AS(cfg.validate(), "edit.lambda must lie in [0, 1]", ConfigError);
    cfg = {};
    cfg.max_subtasks = 0;
    CHECK_THROWS_WITH_AS(cfg.validate(), "edit.max_subtasks must be >= 1", ConfigError);
}
