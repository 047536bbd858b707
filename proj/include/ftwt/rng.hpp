#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

namespace ftwt {

// SplitMix64, used only to expand a user seed into generator state.
struct SplitMix64 {
    uint64_t state;

    explicit SplitMix64(uint64_t seed) : state(seed) {}

    uint64_t next() {
        uint64_t z = (state += 0x9e3779b97f4a7c15ull);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        return z ^ (z >> 31);
    }
};

// PCG32 (XSH-RR) seeded through SplitMix64. The stream depends only on the
// 64-bit seed, not on platform or standard-library internals, so every draw
// (init, shuffle, noise) replays exactly across runs and machines.
class Pcg32 {
public:
    explicit Pcg32(uint64_t seed = 0x2545f4914f6cdd1dull) { reseed(seed); }

    void reseed(uint64_t seed) {
        SplitMix64 sm(seed);
        state_ = sm.next();
        inc_ = sm.next() | 1ull;
        have_spare_ = false;
        next_u32();
    }

    uint32_t next_u32() {
        uint64_t old = state_;
        state_ = old * 6364136223846793005ull + inc_;
        uint32_t xorshifted = static_cast<uint32_t>(((old >> 18u) ^ old) >> 27u);
        uint32_t rot = static_cast<uint32_t>(old >> 59u);
        return (xorshifted >> rot) | (xorshifted << ((32u - rot) & 31u));
    }

    uint64_t next_u64() {
        uint64_t hi = next_u32();
        return (hi << 32) | next_u32();
    }

    // Unbiased integer in [0, bound). Lemire's multiply-shift with rejection.
    uint32_t next_below(uint32_t bound) {
        uint64_t m = uint64_t(next_u32()) * bound;
        uint32_t low = static_cast<uint32_t>(m);
        if (low < bound) {
            uint32_t threshold = (0u - bound) % bound;
            while (low < threshold) {
                m = uint64_t(next_u32()) * bound;
                low = static_cast<uint32_t>(m);
            }
        }
        return static_cast<uint32_t>(m >> 32);
    }

    // Uniform in [0,1), 24 bits of mantissa.
    float next_float() { return static_cast<float>(next_u32() >> 8) * 0x1p-24f; }

    // Uniform in [0,1), 53 bits of mantissa.
    double next_double() { return static_cast<double>(next_u64() >> 11) * 0x1p-53; }

    float uniform(float lo, float hi) { return lo + (hi - lo) * next_float(); }

    // Standard normal via Box-Muller (pair cached). Avoids the
    // implementation-defined draw order of std::normal_distribution.
    double gaussian() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1 = next_double();
        if (u1 < 1e-300) u1 = 1e-300;
        double u2 = next_double();
        double radius = std::sqrt(-2.0 * std::log(u1));
        double theta = 6.283185307179586476925286766559 * u2;
        spare_ = radius * std::sin(theta);
        have_spare_ = true;
        return radius * std::cos(theta);
    }

    // Fisher-Yates. std::shuffle draws in an implementation-defined way, so it
    // is not reproducible across standard libraries; this is.
    template <typename Vec>
    void shuffle(Vec& v) {
        for (size_t i = v.size(); i > 1; --i) {
            size_t j = next_below(static_cast<uint32_t>(i));
            std::swap(v[i - 1], v[j]);
        }
    }

private:
    uint64_t state_ = 0;
    uint64_t inc_ = 0;
    bool have_spare_ = false;
    double spare_ = 0.0;
};

} // namespace ftwt
