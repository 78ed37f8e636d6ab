#pragma once

#include <cmath>
#include <cstdint>

#include "pvsynth/tensor.hpp"

namespace pvsynth {

// Deterministic, self-contained RNG. All randomness in the project flows
// through this type so results do not depend on libstdc++ distribution
// internals. xoshiro256++ core, splitmix64 seeding.
class Rng {
public:
    explicit Rng(uint64_t seed) { reseed(seed); }

    void reseed(uint64_t seed) {
        uint64_t x = seed;
        for (auto& w : s_) w = splitmix64(x);
        has_spare_ = false;
        spare_ = 0.0;
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
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Unbiased integer in [0, n).
    int64_t uniform_int(int64_t n) {
        const uint64_t un = static_cast<uint64_t>(n);
        const uint64_t limit = UINT64_MAX - UINT64_MAX % un;
        uint64_t v;
        do {
            v = next_u64();
        } while (v >= limit);
        return static_cast<int64_t>(v % un);
    }

    bool bernoulli(double p) { return uniform() < p; }

    // Standard normal via Box-Muller (cached spare keeps call count even).
    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1, u2;
        do {
            u1 = uniform();
        } while (u1 <= 0.0);
        u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double a = 6.283185307179586476925286766559 * u2;
        spare_ = r * std::sin(a);
        has_spare_ = true;
        return r * std::cos(a);
    }

    double normal(double mu, double sigma) { return mu + sigma * normal(); }

    void fill_normal(Tensor& t, double mu = 0.0, double sigma = 1.0) {
        for (auto& v : t.data) v = normal(mu, sigma);
    }

    void fill_uniform(Tensor& t, double lo, double hi) {
        for (auto& v : t.data) v = uniform(lo, hi);
    }

    // Deterministic child stream; mixes the tag into fresh state.
    Rng fork(uint64_t tag) {
        uint64_t x = next_u64() ^ (tag * 0x9e3779b97f4a7c15ull + 0x2545f4914f6cdd1dull);
        return Rng(splitmix64(x));
    }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (int64_t i = static_cast<int64_t>(v.size()) - 1; i > 0; --i) {
            int64_t j = uniform_int(i + 1);
            std::swap(v[static_cast<size_t>(i)], v[static_cast<size_t>(j)]);
        }
    }

    static uint64_t splitmix64(uint64_t& x) {
        uint64_t z = (x += 0x9e3779b97f4a7c15ull);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        return z ^ (z >> 31);
    }

    // Stable tag for seeding sub-streams by name.
    static uint64_t hash_tag(const char* s) {
        uint64_t h = 0xcbf29ce484222325ull;
        for (; *s; ++s) {
            h ^= static_cast<uint64_t>(static_cast<unsigned char>(*s));
            h *= 0x100000001b3ull;
        }
        return h;
    }

private:
    static uint64_t rotl(uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

    uint64_t s_[4] = {};
    bool has_spare_ = false;
    double spare_ = 0.0;
};

}  // namespace pvsynth
