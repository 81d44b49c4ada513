#pragma once

#include <cstdint>
#include <vector>

namespace ranking {

// Deterministic xoshiro256++ generator. The exact update rules are part of
// the file-format / reproducibility contract, so a reimplementation in any
// language must produce the same stream:
//
//   seeding (splitmix64, four outputs from state z0 = seed):
//     z = (z0 += 0x9E3779B97F4A7C15)
//     z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9
//     z = (z ^ (z >> 27)) * 0x94D049BB133111EB
//     s[i] = z ^ (z >> 31)
//
//   next():
//     result = rotl64(s0 + s3, 23) + s0
//     t  = s1 << 17
//     s2 ^= s0;  s3 ^= s1;  s1 ^= s2;  s0 ^= s3;  s2 ^= t
//     s3 = rotl64(s3, 45)
//
//   uniform double in [0, 1):  (next() >> 11) * 2^-53
//
// All integer arithmetic is mod 2^64.
class Rng {
public:
    explicit Rng(uint64_t seed) {
        uint64_t z0 = seed;
        for (auto& si : s_) {
            uint64_t z = (z0 += 0x9E3779B97F4A7C15ULL);
            z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
            z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
            si = z ^ (z >> 31);
        }
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

    // Uniform in [0, 1), 53-bit resolution.
    double next_double() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * next_double(); }

    // Unbiased integer in [0, n) via rejection sampling.
    uint64_t next_below(uint64_t n) {
        const uint64_t limit = UINT64_MAX - UINT64_MAX % n;
        uint64_t v;
        do {
            v = next_u64();
        } while (v >= limit);
        return v % n;
    }

    // Fisher-Yates, consuming one draw per swap.
    template <typename T>
    void shuffle(std::vector<T>& xs) {
        for (size_t i = xs.size(); i > 1; --i) {
            const size_t j = static_cast<size_t>(next_below(i));
            std::swap(xs[i - 1], xs[j]);
        }
    }

    // Derives an independent stream for a sub-component; mixing is splitmix64
    // applied to seed ^ tag so derived streams are reproducible by tag.
    static uint64_t derive(uint64_t seed, uint64_t tag) {
        uint64_t z = seed ^ (tag * 0x9E3779B97F4A7C15ULL);
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return z ^ (z >> 31);
    }

private:
    static uint64_t rotl(uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

    uint64_t s_[4];
};

}  // namespace ranking
