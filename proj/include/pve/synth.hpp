#ifndef PVE_SYNTH_HPP
#define PVE_SYNTH_HPP

#include <array>
#include <cmath>
#include <string>
#include <vector>

#include "pve/denoiser.hpp"
#include "pve/rng.hpp"
#include "pve/tensor.hpp"

namespace pve::synth {

enum Slot : int { SlotShape = 0, SlotColor = 1, SlotBackground = 2, SlotExtra = 3, SlotMotion = 4 };
constexpr int kNumSlots = 5;

// saturated palette, pairwise RGB distance >= 0.5
constexpr int kNumColors = 6;
constexpr float kPalette[kNumColors][3] = {
    {1, 0, 0}, {0, 1, 0}, {0, 0, 1}, {1, 1, 0}, {1, 0, 1}, {0, 1, 1},
};

constexpr int kNumBackgrounds = 4;
constexpr float kBackgrounds[kNumBackgrounds][3] = {
    {0.05f, 0.05f, 0.05f}, {0.30f, 0.30f, 0.30f}, {0.55f, 0.55f, 0.55f}, {0.80f, 0.80f, 0.80f},
};

constexpr int kNumShapes = 3;    // square, circle, triangle
constexpr int kNumExtras = 2;    // none, dot
constexpr int kNumMotions = 3;   // static, drift-right, drift-down

// token id layout: 0 = null, then contiguous ranges per slot
constexpr int kSlotBase[kNumSlots] = {1, 1 + kNumShapes, 1 + kNumShapes + kNumColors,
                                      1 + kNumShapes + kNumColors + kNumBackgrounds,
                                      1 + kNumShapes + kNumColors + kNumBackgrounds + kNumExtras};
constexpr int kSlotCard[kNumSlots] = {kNumShapes, kNumColors, kNumBackgrounds, kNumExtras, kNumMotions};
constexpr int kVocabUsed = kSlotBase[4] + kNumMotions;  // 19

struct SceneSpec {
    int shape = 0;
    int color = 0;
    int background = 0;
    int extra = 0;
    int motion = 0;
    int frames = 8;
    int height = 32;
    int width = 32;

    int slot(int s) const {
        switch (s) {
            case SlotShape: return shape;
            case SlotColor: return color;
            case SlotBackground: return background;
            case SlotExtra: return extra;
            default: return motion;
        }
    }
    void set_slot(int s, int v) {
        switch (s) {
            case SlotShape: shape = v; break;
            case SlotColor: color = v; break;
            case SlotBackground: background = v; break;
            case SlotExtra: extra = v; break;
            default: motion = v; break;
        }
    }

    void validate() const {
        if (shape < 0 || shape >= kNumShapes || color < 0 || color >= kNumColors || background < 0 ||
            background >= kNumBackgrounds || extra < 0 || extra >= kNumExtras || motion < 0 || motion >= kNumMotions)
            throw ContractError("SceneSpec: attribute index out of range");
        if (frames < 1 || height < 8 || width < 8) throw ContractError("SceneSpec: degenerate geometry");
    }

    bool operator==(const SceneSpec&) const = default;
};

inline PromptTokens encode_prompt(const SceneSpec& spec) {
    PromptTokens p;
    p.ids.resize(kNumSlots);
    for (int s = 0; s < kNumSlots; ++s) p.ids[static_cast<size_t>(s)] = kSlotBase[s] + spec.slot(s);
    return p;
}

inline SceneSpec decode_prompt(const PromptTokens& p, int frames, int height, int width) {
    if (p.ids.size() != kNumSlots) throw ContractError("decode_prompt: wrong token count");
    SceneSpec spec;
    spec.frames = frames;
    spec.height = height;
    spec.width = width;
    for (int s = 0; s < kNumSlots; ++s) {
        int v = p.ids[static_cast<size_t>(s)] - kSlotBase[s];
        if (v < 0 || v >= kSlotCard[s]) throw ContractError("decode_prompt: token outside slot range");
        spec.set_slot(s, v);
    }
    spec.validate();
    return spec;
}

// per-pixel boolean masks, one plane per attribute slot
struct LabeledVideo {
    VideoTensor video;
    PromptTokens prompt;
    std::array<std::vector<uint8_t>, kNumSlots> masks;  // frames*height*width each

    bool mask_at(int slot, int64_t f, int64_t y, int64_t x) const {
        const auto& d = video.dims();
        return masks[static_cast<size_t>(slot)][static_cast<size_t>((f * d.h + y) * d.w + x)] != 0;
    }
};

namespace detail {

inline bool inside_shape(int shape, int y, int x, int cy, int cx, int half) {
    int dy = y - cy, dx = x - cx;
    switch (shape) {
        case 0:  // square
            return std::abs(dy) <= half && std::abs(dx) <= half;
        case 1:  // circle
            return dy * dy + dx * dx <= half * half;
        default:  // upward triangle: base at cy+half, apex at cy-half
            if (dy < -half || dy > half) return false;
            // width shrinks linearly toward the apex
            return 2 * std::abs(dx) * (2 * half) <= 2 * (dy + half) * half + half;
    }
}

}  // namespace detail

// Hard-edged raster of one moving shape over a flat background, with analytic
// per-slot masks. Deterministic per (spec, stream) since only the start jitter
// draws from the stream.
inline LabeledVideo gen_video(const SceneSpec& spec, RngStream& stream) {
    spec.validate();
    const int H = spec.height, W = spec.width, F = spec.frames;
    const int half = H / 8;
    if (2 * half + 1 > H || 2 * half + 1 > W) throw ContractError("gen_video: shape larger than frame");

    // jittered start position, kept clear of the borders
    int jy = static_cast<int>(stream.next_below(5)) - 2;
    int jx = static_cast<int>(stream.next_below(5)) - 2;
    int cy0 = H / 2 + jy;
    int cx0 = spec.motion == 1 ? W / 4 + jx : W / 2 + jx;
    if (spec.motion == 2) cy0 = H / 4 + jy;

    const int dot_cy = H / 8 + 1, dot_cx = W - W / 8 - 1, dot_r = std::max(1, H / 16);

    LabeledVideo out;
    out.video = VideoTensor(F, H, W, 3);
    out.prompt = encode_prompt(spec);
    for (auto& m : out.masks) m.assign(static_cast<size_t>(F) * H * W, 0);

    const float* fg = kPalette[spec.color];
    const float* bg = kBackgrounds[spec.background];
    const int speed = std::max(1, W / 16);

    for (int f = 0; f < F; ++f) {
        int cy = cy0, cx = cx0;
        if (spec.motion == 1) cx = std::min(cx0 + speed * f, W - half - 1);
        if (spec.motion == 2) cy = std::min(cy0 + speed * f, H - half - 1);
        for (int y = 0; y < H; ++y)
            for (int x = 0; x < W; ++x) {
                bool in_shape = detail::inside_shape(spec.shape, y, x, cy, cx, half);
                int ddy = y - dot_cy, ddx = x - dot_cx;
                bool in_dot_region = ddy * ddy + ddx * ddx <= dot_r * dot_r;
                bool draw_dot = spec.extra == 1 && in_dot_region && !in_shape;
                const float* px = in_shape ? fg : (draw_dot ? kPalette[(spec.color + 3) % kNumColors] : bg);
                for (int c = 0; c < 3; ++c) out.video.at(f, y, x, c) = px[c];
                size_t mi = static_cast<size_t>((static_cast<int64_t>(f) * H + y) * W + x);
                if (in_shape) {
                    out.masks[SlotShape][mi] = 1;
                    out.masks[SlotColor][mi] = 1;
                    out.masks[SlotMotion][mi] = 1;
                } else if (in_dot_region) {
                    out.masks[SlotExtra][mi] = 1;
                } else {
                    out.masks[SlotBackground][mi] = 1;
                }
            }
    }
    return out;
}

// 10 log10(1 / MSE) over masked entries; +inf capped at 99.0 dB
inline double psnr_masked(const VideoTensor& a, const VideoTensor& b, const std::vector<uint8_t>& mask) {
    if (!a.same_shape(b)) throw ShapeError("psnr_masked: shape mismatch");
    const auto& d = a.dims();
    if (static_cast<int64_t>(mask.size()) != d.f * d.h * d.w) throw ShapeError("psnr_masked: mask size mismatch");
    double se = 0.0;
    int64_t count = 0;
    for (int64_t f = 0; f < d.f; ++f)
        for (int64_t y = 0; y < d.h; ++y)
            for (int64_t x = 0; x < d.w; ++x) {
                if (!mask[static_cast<size_t>((f * d.h + y) * d.w + x)]) continue;
                for (int64_t c = 0; c < d.c; ++c) {
                    double diff = static_cast<double>(a.at(f, y, x, c)) - b.at(f, y, x, c);
                    se += diff * diff;
                    ++count;
                }
            }
    if (count == 0) throw ContractError("psnr_masked: empty mask");
    double mse = se / static_cast<double>(count);
    if (mse <= 0.0) return 99.0;
    return std::min(99.0, 10.0 * std::log10(1.0 / mse));
}

inline double rmse_masked(const VideoTensor& a, const VideoTensor& b, const std::vector<uint8_t>& mask) {
    double p = psnr_masked(a, b, mask);  // reuse the guards
    (void)p;
    const auto& d = a.dims();
    double se = 0.0;
    int64_t count = 0;
    for (int64_t f = 0; f < d.f; ++f)
        for (int64_t y = 0; y < d.h; ++y)
            for (int64_t x = 0; x < d.w; ++x) {
                if (!mask[static_cast<size_t>((f * d.h + y) * d.w + x)]) continue;
                for (int64_t c = 0; c < d.c; ++c) {
                    double diff = static_cast<double>(a.at(f, y, x, c)) - b.at(f, y, x, c);
                    se += diff * diff;
                    ++count;
                }
            }
    return std::sqrt(se / static_cast<double>(count));
}

// Normalized similarity against the ground-truth target render over the slot
// mask: 1 - clamp(RMSE / 0.5, 0, 1). The target is rendered with the same
// stream seed as the source so the geometry lines up.
inline double fulfillment_score(const VideoTensor& edited, const SceneSpec& target_spec,
                                const std::vector<uint8_t>& mask, RngStream render_stream) {
    LabeledVideo target = gen_video(target_spec, render_stream);
    double rmse = rmse_masked(edited, target.video, mask);
    double c = rmse / 0.5;
    if (c < 0.0) c = 0.0;
    if (c > 1.0) c = 1.0;
    return 1.0 - c;
}

inline std::vector<SceneSpec> sample_specs(int count, RngStream& stream, int frames, int height, int width) {
    if (count < 1) throw ContractError("sample_specs: count must be >= 1");
    std::vector<SceneSpec> specs;
    specs.reserve(static_cast<size_t>(count));
    for (int i = 0; i < count; ++i) {
        SceneSpec s;
        s.shape = static_cast<int>(stream.next_below(kNumShapes));
        s.color = static_cast<int>(stream.next_below(kNumColors));
        s.background = static_cast<int>(stream.next_below(kNumBackgrounds));
        s.extra = static_cast<int>(stream.next_below(kNumExtras));
        s.motion = static_cast<int>(stream.next_below(kNumMotions));
        s.frames = frames;
        s.height = height;
        s.width = width;
        specs.push_back(s);
    }
    return specs;
}

inline std::vector<LabeledVideo> make_dataset(int count, RngStream& stream, int frames = 8, int height = 32,
                                              int width = 32) {
    auto specs = sample_specs(count, stream, frames, height, width);
    std::vector<LabeledVideo> out;
    out.reserve(specs.size());
    for (const auto& s : specs) out.push_back(gen_video(s, stream));
    return out;
}

}  // namespace pve::synth

#endif
