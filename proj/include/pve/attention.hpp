#ifndef PVE_ATTENTION_HPP
#define PVE_ATTENTION_HPP

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <memory>
#include <utility>
#include <vector>

#include "pve/errors.hpp"

namespace pve::attn {

// ---- scratch accounting -----------------------------------------------------
//
// Kernels allocate their auxiliary buffers through tracked_vector so tests and
// the bench can measure peak auxiliary bytes per call. Output buffers are not
// counted.

struct ScratchCounter {
    static inline thread_local size_t current = 0;
    static inline thread_local size_t peak = 0;

    static void reset() { current = peak = 0; }
};

template <class T>
struct TrackedAlloc {
    using value_type = T;

    TrackedAlloc() = default;
    template <class U>
    TrackedAlloc(const TrackedAlloc<U>&) {}

    T* allocate(size_t n) {
        ScratchCounter::current += n * sizeof(T);
        ScratchCounter::peak = std::max(ScratchCounter::peak, ScratchCounter::current);
        return std::allocator<T>{}.allocate(n);
    }
    void deallocate(T* p, size_t n) {
        ScratchCounter::current -= n * sizeof(T);
        std::allocator<T>{}.deallocate(p, n);
    }
    template <class U>
    bool operator==(const TrackedAlloc<U>&) const { return true; }
};

template <class T>
using tracked_vector = std::vector<T, TrackedAlloc<T>>;

// ---- inputs -----------------------------------------------------------------

template <class S>
struct MatView {
    const S* data = nullptr;
    int rows = 0, cols = 0;

    const S* row(int i) const { return data + static_cast<size_t>(i) * cols; }
};

template <class S>
struct AttnInputs {
    MatView<S> q;  // n x d
    MatView<S> k;  // m x d
    MatView<S> v;  // m x d'

    void validate() const {
        if (q.rows < 1 || k.rows < 1 || q.cols < 1 || v.cols < 1)
            throw ShapeError("attention: empty operand");
        if (q.cols != k.cols) throw ShapeError("attention: Q/K feature dims differ");
        if (k.rows != v.rows) throw ShapeError("attention: K/V row counts differ");
    }
};

// Column pairs (I1_k, I2_k): column I2_k of the edit map takes its logits from
// column I1_k of the source map. I2 entries must be distinct.
struct ReplacementSpec {
    std::vector<std::pair<int, int>> pairs;

    bool empty() const { return pairs.empty(); }

    void validate(int m1, int m2) const {
        std::vector<uint8_t> seen(static_cast<size_t>(m2), 0);
        for (auto [i1, i2] : pairs) {
            if (i1 < 0 || i1 >= m1 || i2 < 0 || i2 >= m2)
                throw ContractError("ReplacementSpec: column index out of range");
            if (seen[static_cast<size_t>(i2)]) throw ContractError("ReplacementSpec: duplicate target column");
            seen[static_cast<size_t>(i2)] = 1;
        }
    }
};

// 64-bit accumulation regardless of the storage scalar
template <class S>
inline double dot(const S* a, const S* b, int d) {
    double acc = 0;
    for (int t = 0; t < d; ++t) acc += static_cast<double>(a[t]) * b[t];
    return acc;
}

// ---- kernels ----------------------------------------------------------------

// Reference path: materializes the n x m map, softmax per row, times V.
template <class S>
std::vector<S> attn_naive(const AttnInputs<S>& inp) {
    inp.validate();
    const int n = inp.q.rows, m = inp.k.rows, d = inp.q.cols, dv = inp.v.cols;
    const double scale = 1.0 / std::sqrt(static_cast<double>(d));
    tracked_vector<double> logits(static_cast<size_t>(n) * m);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < m; ++j)
            logits[static_cast<size_t>(i) * m + j] = dot(inp.q.row(i), inp.k.row(j), d) * scale;
    std::vector<S> out(static_cast<size_t>(n) * dv, S(0));
    std::vector<double> orow(static_cast<size_t>(dv));
    for (int i = 0; i < n; ++i) {
        double* lr = logits.data() + static_cast<size_t>(i) * m;
        double mx = *std::max_element(lr, lr + m);
        double denom = 0;
        for (int j = 0; j < m; ++j) {
            lr[j] = std::exp(lr[j] - mx);
            denom += lr[j];
        }
        std::fill(orow.begin(), orow.end(), 0.0);
        for (int j = 0; j < m; ++j) {
            double w = lr[j] / denom;
            const S* vr = inp.v.row(j);
            for (int t = 0; t < dv; ++t) orow[static_cast<size_t>(t)] += w * vr[t];
        }
        for (int t = 0; t < dv; ++t)
            out[static_cast<size_t>(i) * dv + t] = static_cast<S>(orow[static_cast<size_t>(t)]);
    }
    return out;
}

namespace detail {

// One online-softmax row: keys indexed by j in [0, m), logit_fn(j) -> double,
// value row value_fn(j) -> const S*. acc has dv entries, caller-zeroed.
template <class S, class LogitFn, class ValueFn>
inline void stream_row(int m, int dv, LogitFn&& logit_fn, ValueFn&& value_fn, double* acc, S* out_row) {
    double run_max = -std::numeric_limits<double>::infinity();
    double denom = 0;
    for (int j = 0; j < m; ++j) {
        double x = logit_fn(j);
        if (x > run_max) {
            double r = std::exp(run_max - x);  // exp(-inf) == 0 on the first key
            denom *= r;
            for (int t = 0; t < dv; ++t) acc[t] *= r;
            run_max = x;
        }
        double w = std::exp(x - run_max);
        denom += w;
        const S* vr = value_fn(j);
        for (int t = 0; t < dv; ++t) acc[t] += w * vr[t];
    }
    for (int t = 0; t < dv; ++t) out_row[t] = static_cast<S>(acc[t] / denom);
}

}  // namespace detail

// Single pass per row with running max / denominator / weighted sum; the map
// is never materialized, auxiliary memory is O(d') independent of m.
template <class S>
std::vector<S> attn_streaming(const AttnInputs<S>& inp) {
    inp.validate();
    const int n = inp.q.rows, m = inp.k.rows, d = inp.q.cols, dv = inp.v.cols;
    const double scale = 1.0 / std::sqrt(static_cast<double>(d));
    std::vector<S> out(static_cast<size_t>(n) * dv);
    tracked_vector<double> acc(static_cast<size_t>(dv));
    for (int i = 0; i < n; ++i) {
        std::fill(acc.begin(), acc.end(), 0.0);
        const S* qi = inp.q.row(i);
        detail::stream_row<S>(
            m, dv, [&](int j) { return dot(qi, inp.k.row(j), d) * scale; },
            [&](int j) { return inp.v.row(j); }, acc.data(), out.data() + static_cast<size_t>(i) * dv);
    }
    return out;
}

// Dual-generation attention with on-the-fly map replacement. O1 is plain
// attention on a1. O2 is attention on a2 except that logits in replaced
// columns j = I2_k are Q1_i . K1_{I1_k} / sqrt(d1); values always come from V2.
template <class S>
std::pair<std::vector<S>, std::vector<S>> attn_amr(const AttnInputs<S>& a1, const AttnInputs<S>& a2,
                                                   const ReplacementSpec& spec) {
    a1.validate();
    a2.validate();
    if (a1.q.rows != a2.q.rows) throw ShapeError("attn_amr: paired query row counts differ");
    spec.validate(a1.k.rows, a2.k.rows);
    const int n = a1.q.rows;
    const int m1 = a1.k.rows, d1 = a1.q.cols;
    const int m2 = a2.k.rows, d2 = a2.q.cols;
    const int dv1 = a1.v.cols, dv2 = a2.v.cols;
    const double scale1 = 1.0 / std::sqrt(static_cast<double>(d1));
    const double scale2 = 1.0 / std::sqrt(static_cast<double>(d2));

    // auxiliary memory is O(d' + |spec|), independent of the key counts: the
    // replaced columns are visited via a sorted copy of the pairs
    tracked_vector<std::pair<int, int>> sorted(spec.pairs.begin(), spec.pairs.end());
    std::sort(sorted.begin(), sorted.end(),
              [](const auto& a, const auto& b) { return a.second < b.second; });

    std::vector<S> o1(static_cast<size_t>(n) * dv1);
    std::vector<S> o2(static_cast<size_t>(n) * dv2);
    tracked_vector<double> acc(static_cast<size_t>(std::max(dv1, dv2)));
    for (int i = 0; i < n; ++i) {
        const S* q1 = a1.q.row(i);
        const S* q2 = a2.q.row(i);
        std::fill(acc.begin(), acc.begin() + dv1, 0.0);
        detail::stream_row<S>(
            m1, dv1, [&](int j) { return dot(q1, a1.k.row(j), d1) * scale1; },
            [&](int j) { return a1.v.row(j); }, acc.data(), o1.data() + static_cast<size_t>(i) * dv1);
        std::fill(acc.begin(), acc.begin() + dv2, 0.0);
        size_t cursor = 0;  // stream_row visits j in increasing order
        detail::stream_row<S>(
            m2, dv2,
            [&](int j) {
                while (cursor < sorted.size() && sorted[cursor].second < j) ++cursor;
                if (cursor < sorted.size() && sorted[cursor].second == j)
                    return dot(q1, a1.k.row(sorted[cursor].first), d1) * scale1;
                return dot(q2, a2.k.row(j), d2) * scale2;
            },
            [&](int j) { return a2.v.row(j); }, acc.data(), o2.data() + static_cast<size_t>(i) * dv2);
    }
    return {std::move(o1), std::move(o2)};
}

// ---- windowed / looping temporal masking ------------------------------------

struct WindowSpec {
    int total_frames = 0;     // L
    int window = 0;           // l, pretrained window length
    int tokens_per_frame = 1;
    bool loop = false;

    void validate() const {
        if (total_frames < 1 || window < 1 || tokens_per_frame < 1)
            throw ContractError("WindowSpec: extents must be >= 1");
    }
};

struct WindowMask {
    int frames = 0;
    std::vector<uint8_t> admit;    // frames x frames, query-major
    std::vector<int> effective_pos;  // per key frame; j - L for loop-wrapped tail frames

    bool admits(int query_frame, int key_frame) const {
        return admit[static_cast<size_t>(query_frame) * frames + key_frame] != 0;
    }
};

// Query frame k admits key frames [k - floor(l/2), k + floor(l/2)]. Under
// loop, frames k < floor(l/2) additionally admit the tail j with
// L + k - floor(l/2) < j <= L - 1 (0-based reading, pinned by the boundary
// enumeration test); those tail frames carry effective position j - L.
inline WindowMask build_window_mask(const WindowSpec& ws) {
    ws.validate();
    const int L = ws.total_frames;
    const int half = ws.window / 2;
    WindowMask wm;
    wm.frames = L;
    wm.admit.assign(static_cast<size_t>(L) * L, 0);
    wm.effective_pos.resize(static_cast<size_t>(L));
    for (int j = 0; j < L; ++j) wm.effective_pos[static_cast<size_t>(j)] = j;
    bool tail_wrapped = false;
    for (int k = 0; k < L; ++k) {
        for (int j = std::max(0, k - half); j <= std::min(L - 1, k + half); ++j)
            wm.admit[static_cast<size_t>(k) * L + j] = 1;
        if (ws.loop && k < half) {
            for (int j = std::max(0, L + k - half + 1); j <= L - 1; ++j) {
                if (wm.admit[static_cast<size_t>(k) * L + j]) continue;  // tiny L: window already covers
                wm.admit[static_cast<size_t>(k) * L + j] = 1;
                wm.effective_pos[static_cast<size_t>(j)] = j - L;
                tail_wrapped = true;
            }
        }
    }
    (void)tail_wrapped;
    return wm;
}

// Masked streaming attention. Disallowed keys are excluded from the running
// max, denominator and sum entirely, not pushed to a large negative logit.
template <class S>
std::vector<S> attn_masked(const AttnInputs<S>& inp, const WindowMask& mask) {
    inp.validate();
    const int n = inp.q.rows, m = inp.k.rows, d = inp.q.cols, dv = inp.v.cols;
    const int tpf_q = n / mask.frames, tpf_k = m / mask.frames;
    if (tpf_q * mask.frames != n || tpf_k * mask.frames != m)
        throw ShapeError("attn_masked: token counts not divisible by frame count");
    const double scale = 1.0 / std::sqrt(static_cast<double>(d));
    std::vector<S> out(static_cast<size_t>(n) * dv);
    tracked_vector<double> acc(static_cast<size_t>(dv));
    for (int i = 0; i < n; ++i) {
        const int qf = i / tpf_q;
        const S* qi = inp.q.row(i);
        std::fill(acc.begin(), acc.end(), 0.0);
        double run_max = -std::numeric_limits<double>::infinity();
        double denom = 0;
        int admitted = 0;
        for (int j = 0; j < m; ++j) {
            if (!mask.admits(qf, j / tpf_k)) continue;
            ++admitted;
            double x = dot(qi, inp.k.row(j), d) * scale;
            if (x > run_max) {
                double r = std::exp(run_max - x);
                denom *= r;
                for (int t = 0; t < dv; ++t) acc[t] *= r;
                run_max = x;
            }
            double w = std::exp(x - run_max);
            denom += w;
            const S* vr = inp.v.row(j);
            for (int t = 0; t < dv; ++t) acc[t] += w * vr[t];
        }
        if (admitted == 0) throw ContractError("attn_masked: query row admits no keys");
        S* orow = out.data() + static_cast<size_t>(i) * dv;
        for (int t = 0; t < dv; ++t) orow[t] = static_cast<S>(acc[t] / denom);
    }
    return out;
}

}  // namespace pve::attn

#endif
