#pragma once

#include <cmath>
#include <cstdint>

namespace df {

inline uint64_t splitmix64(uint64_t& state) {
    state += 0x9e3779b97f4a7c15ULL;
    uint64_t z = state;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

// xoshiro256++ with explicit distributions so streams are identical across
// platforms and standard libraries.
class Rng {
public:
    explicit Rng(uint64_t seed = 0) { reseed(seed); }

    void reseed(uint64_t seed) {
        uint64_t sm = seed;
        for (auto& si : s_) si = splitmix64(sm);
        has_gauss_ = false;
        gauss_ = 0.0;
    }

    uint64_t next_u64() {
        const uint64_t result = rotl(s_[0] + s_[3], 23) + s_[0];
        const uint64_t t = s_[1] << 17;
        s_[2] ^= s_[0];
        s_[3] ^= s_[1];
        s_[1] ^= s_[2];
        s_[0] ^= s_[3];
        s_[2] ^= t;
        s_[3] = rotl(s_[3], 45);
        return result;
    }

    // Uniform in [0, 1).
    double uniform() { return (double)(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Uniform integer in [0, n), n >= 1.
    int64_t uniform_int(int64_t n) {
        // Lemire's multiply-shift with rejection; exact and portable.
        uint64_t un = (uint64_t)n;
        uint64_t x = next_u64();
        __uint128_t m = (__uint128_t)x * un;
        uint64_t l = (uint64_t)m;
        if (l < un) {
            uint64_t t = (0 - un) % un;
            while (l < t) {
                x = next_u64();
                m = (__uint128_t)x * un;
                l = (uint64_t)m;
            }
        }
        return (int64_t)(m >> 64);
    }

    bool bernoulli(double p) { return uniform() < p; }

    // Box-Muller; one spare value cached.
    double normal() {
        if (has_gauss_) {
            has_gauss_ = false;
            return gauss_;
        }
        double u1, u2;
        do {
            u1 = uniform();
        } while (u1 <= 0.0);
        u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double a = 6.283185307179586476925286766559 * u2;
        gauss_ = r * std::sin(a);
        has_gauss_ = true;
        return r * std::cos(a);
    }

    double normal(double mean, double stddev) { return mean + stddev * normal(); }

    // Normal truncated to +/- 2 stddev (resampled).
    double trunc_normal(double stddev) {
        double v;
        do {
            v = normal();
        } while (v < -2.0 || v > 2.0);
        return v * stddev;
    }

    // Derive an independent stream; deterministic in (this seed, tag).
    static uint64_t derive(uint64_t seed, uint64_t tag) {
        uint64_t s = seed ^ (0x9e3779b97f4a7c15ULL * (tag + 1));
        return splitmix64(s);
    }

    struct State {
        uint64_t s[4];
        bool has_gauss;
        double gauss;
    };

    State state() const {
        State st;
        for (int i = 0; i < 4; ++i) st.s[i] = s_[i];
        st.has_gauss = has_gauss_;
        st.gauss = gauss_;
        return st;
    }

    void set_state(const State& st) {
        for (int i = 0; i < 4; ++i) s_[i] = st.s[i];
        has_gauss_ = st.has_gauss;
        gauss_ = st.gauss;
    }

private:
    static uint64_t rotl(uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

    uint64_t s_[4] = {1, 2, 3, 4};
    bool has_gauss_ = false;
    double gauss_ = 0.0;
};

}  // namespace df
