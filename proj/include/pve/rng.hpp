#ifndef PVE_RNG_HPP
#define PVE_RNG_HPP

#include <cmath>
#include <cstdint>
#include <numbers>

#include "pve/tensor.hpp"

namespace pve {

enum class RngPurpose : uint64_t { InitNoise = 0, Training = 1, Dataset = 2, Sampling = 3 };

// Counter-based generator: every draw is a pure function of
// (seed, purpose, index), so streams replay identically and can be
// reproduced from any other implementation of the same mixing function.
//
//   key     = mix64(seed ^ golden * (purpose + 1))
//   word(i) = mix64(key + i * golden)        golden = 0x9E3779B97F4A7C15
//
// mix64 is the SplitMix64 finalizer. uniform(i) maps the top 53 bits of
// word(i) into (0,1); normal(k) is Box-Muller over uniforms (2k, 2k+1).
inline uint64_t mix64(uint64_t x) {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

struct RngStream {
    uint64_t seed = 0;
    RngPurpose purpose = RngPurpose::Sampling;
    uint64_t counter = 0;  // index of the next normal draw

    uint64_t word_at(uint64_t index) const {
        uint64_t key = mix64(seed ^ (0x9E3779B97F4A7C15ULL * (static_cast<uint64_t>(purpose) + 1)));
        return mix64(key + index * 0x9E3779B97F4A7C15ULL);
    }

    // strictly inside (0,1)
    double uniform_at(uint64_t index) const {
        return (static_cast<double>(word_at(index) >> 11) + 0.5) * (1.0 / 9007199254740992.0);
    }

    double normal_at(uint64_t draw_index) const {
        double u1 = uniform_at(2 * draw_index);
        double u2 = uniform_at(2 * draw_index + 1);
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
    }

    float next_normal() { return static_cast<float>(normal_at(counter++)); }

    double next_uniform() {
        double u = uniform_at(2 * counter);
        ++counter;
        return u;
    }

    // integer in [0, n)
    uint64_t next_below(uint64_t n) {
        uint64_t w = word_at(2 * counter);
        ++counter;
        return w % n;
    }

    RngStream fork(uint64_t tag) const {
        return RngStream{mix64(seed ^ mix64(tag)), purpose, 0};
    }
};

inline VideoTensor gaussian(RngStream& stream, Shape4 dims) {
    VideoTensor t(dims);  // validates extents
    for (int64_t i = 0; i < t.size(); ++i) t[i] = stream.next_normal();
    return t;
}

}  // namespace pve

#endif
