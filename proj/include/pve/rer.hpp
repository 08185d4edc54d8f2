#ifndef PVE_RER_HPP
#define PVE_RER_HPP

#include <cmath>
#include <utility>
#include <vector>

#include "pve/editing.hpp"
#include "pve/tensor.hpp"

namespace pve::rer {

// world texture; reuses the tensor type with F = 1
struct PlanarScene {
    VideoTensor texture;  // 1 x Hw x Ww x 3
    std::vector<uint8_t> coverage;  // per texel; empty means fully covered

    int64_t height() const { return texture.dims().h; }
    int64_t width() const { return texture.dims().w; }
};

// fixed-size crop windows along a camera trajectory
struct CameraPath {
    std::vector<std::pair<int, int>> windows;  // (top, left)
    int frame_h = 0, frame_w = 0;
    bool loop = false;

    void validate(int64_t scene_h, int64_t scene_w) const {
        if (windows.empty()) throw ContractError("CameraPath: empty path");
        if (frame_h < 1 || frame_w < 1) throw ContractError("CameraPath: degenerate frame size");
        for (auto [top, left] : windows)
            if (top < 0 || left < 0 || top + frame_h > scene_h || left + frame_w > scene_w)
                throw ContractError("CameraPath: window outside the scene");
        for (size_t i = 1; i < windows.size(); ++i) {
            auto [t0, l0] = windows[i - 1];
            auto [t1, l1] = windows[i];
            int64_t oh = std::max<int64_t>(0, std::min(t0, t1) + frame_h - std::max(t0, t1));
            int64_t ow = std::max<int64_t>(0, std::min(l0, l1) + frame_w - std::max(l0, l1));
            if (oh * ow * 4 < static_cast<int64_t>(frame_h) * frame_w)
                throw ContractError("CameraPath: consecutive windows overlap by less than 25%");
        }
    }
};

inline VideoTensor render(const PlanarScene& scene, const CameraPath& path) {
    path.validate(scene.height(), scene.width());
    VideoTensor out(static_cast<int64_t>(path.windows.size()), path.frame_h, path.frame_w, 3);
    for (size_t f = 0; f < path.windows.size(); ++f) {
        auto [top, left] = path.windows[f];
        for (int y = 0; y < path.frame_h; ++y)
            for (int x = 0; x < path.frame_w; ++x)
                for (int c = 0; c < 3; ++c)
                    out.at(static_cast<int64_t>(f), y, x, c) = scene.texture.at(0, top + y, left + x, c);
    }
    return out;
}

// Least-squares scene from possibly inconsistent frames: covered texels take
// the mean of all contributing pixels, uncovered texels are zero with
// coverage = false.
inline PlanarScene reconstruct(const VideoTensor& video, const CameraPath& path, int64_t scene_h, int64_t scene_w) {
    path.validate(scene_h, scene_w);
    const auto& d = video.dims();
    if (d.f != static_cast<int64_t>(path.windows.size()) || d.h != path.frame_h || d.w != path.frame_w || d.c != 3)
        throw ShapeError("reconstruct: video does not match the path");
    std::vector<double> sum(static_cast<size_t>(scene_h * scene_w * 3), 0.0);
    std::vector<uint32_t> count(static_cast<size_t>(scene_h * scene_w), 0);
    for (size_t f = 0; f < path.windows.size(); ++f) {
        auto [top, left] = path.windows[f];
        for (int y = 0; y < path.frame_h; ++y)
            for (int x = 0; x < path.frame_w; ++x) {
                size_t ti = static_cast<size_t>((top + y) * scene_w + (left + x));
                ++count[ti];
                for (int c = 0; c < 3; ++c)
                    sum[ti * 3 + static_cast<size_t>(c)] += video.at(static_cast<int64_t>(f), y, x, c);
            }
    }
    PlanarScene scene;
    scene.texture = VideoTensor(1, scene_h, scene_w, 3);
    scene.coverage.assign(static_cast<size_t>(scene_h * scene_w), 0);
    for (int64_t y = 0; y < scene_h; ++y)
        for (int64_t x = 0; x < scene_w; ++x) {
            size_t ti = static_cast<size_t>(y * scene_w + x);
            if (count[ti] == 0) continue;
            scene.coverage[ti] = 1;
            for (int c = 0; c < 3; ++c)
                scene.texture.at(0, y, x, c) = static_cast<float>(sum[ti * 3 + static_cast<size_t>(c)] / count[ti]);
        }
    return scene;
}

// Root-mean-square disagreement across all frame pairs on overlapping texels;
// zero iff the video is exactly renderable from some scene.
inline double consistency_metric(const VideoTensor& video, const CameraPath& path) {
    const auto& d = video.dims();
    if (d.f != static_cast<int64_t>(path.windows.size()) || d.h != path.frame_h || d.w != path.frame_w)
        throw ShapeError("consistency_metric: video does not match the path");
    double se = 0.0;
    int64_t count = 0;
    for (size_t a = 0; a < path.windows.size(); ++a)
        for (size_t b = a + 1; b < path.windows.size(); ++b) {
            auto [ta, la] = path.windows[a];
            auto [tb, lb] = path.windows[b];
            int y0 = std::max(ta, tb), y1 = std::min(ta, tb) + path.frame_h;
            int x0 = std::max(la, lb), x1 = std::min(la, lb) + path.frame_w;
            for (int y = y0; y < y1; ++y)
                for (int x = x0; x < x1; ++x)
                    for (int c = 0; c < 3; ++c) {
                        double diff = static_cast<double>(video.at(static_cast<int64_t>(a), y - ta, x - la, c)) -
                                      video.at(static_cast<int64_t>(b), y - tb, x - lb, c);
                        se += diff * diff;
                        ++count;
                    }
        }
    if (count == 0) throw MetricError("consistency_metric: no overlapping frame pairs");
    return std::sqrt(se / static_cast<double>(count));
}

struct RerResult {
    PlanarScene final_scene;
    std::vector<PlanarScene> subtask_scenes;
    ProgressionResult progression;
};

// Progressive editing with a per-subtask reconstruct/re-render hook, so every
// subtask input is exactly multi-view-consistent. The scene is canonical; the
// final video is derived by rendering it.
inline RerResult rer_edit(const PlanarScene& scene, const CameraPath& path, const EditPlan& plan,
                          const ControlConfig& cfg, const EpsModel& model, const NoiseSchedule& sched,
                          RngStream stream, bool hook_enabled = true) {
    VideoTensor v0 = render(scene, path);
    RerResult out;
    SubtaskHook hook;
    if (hook_enabled) {
        hook = [&](const VideoTensor& edited) {
            PlanarScene s = reconstruct(edited, path, scene.height(), scene.width());
            out.subtask_scenes.push_back(s);
            return render(s, path);
        };
    }
    out.progression = run_progression(v0, plan, cfg, model, sched, stream, hook);
    out.final_scene = reconstruct(out.progression.final_video, path, scene.height(), scene.width());
    if (hook_enabled) out.progression.final_video = render(out.final_scene, path);
    return out;
}

}  // namespace pve::rer

#endif
