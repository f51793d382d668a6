#pragma once

#include <cmath>
#include <cstdint>
#include <numeric>
#include <vector>

namespace sdkd {

// Deterministic random streams. All draws go through explicit bit-to-double
// mappings so that results are identical across compilers and platforms
// (std::uniform_real_distribution et al. are implementation-defined).
//
// Streams are keyed by (seed, salt, index): a dataset sequence, a model's
// parameter initialization and an epoch's batch order each get their own
// stream, so work can be reordered without changing results.
class Rng {
public:
    explicit Rng(uint64_t seed) : state_(seed) {
        // splitmix64 warmup decorrelates small consecutive seeds
        next_u64();
        next_u64();
    }

    static Rng derive(uint64_t seed, uint64_t salt, uint64_t index = 0) {
        uint64_t s = mix(mix(seed ^ 0x9e3779b97f4a7c15ull, salt), index);
        return Rng(s);
    }

    uint64_t next_u64() {
        // splitmix64 (Steele, Lea, Flood 2014); passes BigCrush, trivially portable
        state_ += 0x9e3779b97f4a7c15ull;
        return mix_final(state_);
    }

    // uniform in [0, 1), 53-bit resolution
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // standard normal via Box-Muller (deterministic, branch-free enough)
    double normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1 = uniform();
        double u2 = uniform();
        // avoid log(0)
        u1 = u1 > 0.0 ? u1 : 0x1.0p-53;
        double r = std::sqrt(-2.0 * std::log(u1));
        double a = 6.283185307179586476925286766559 * u2;
        spare_ = r * std::sin(a);
        have_spare_ = true;
        return r * std::cos(a);
    }

    // integer in [0, n)
    uint64_t integer(uint64_t n) { return next_u64() % n; }

    // Fisher-Yates permutation of 0..n-1
    std::vector<int> permutation(int n) {
        std::vector<int> p(n);
        std::iota(p.begin(), p.end(), 0);
        for (int i = n - 1; i > 0; --i) {
            int j = static_cast<int>(integer(static_cast<uint64_t>(i) + 1));
            std::swap(p[i], p[j]);
        }
        return p;
    }

private:
    static uint64_t mix(uint64_t a, uint64_t b) {
        return mix_final(a + 0x9e3779b97f4a7c15ull * (b + 1));
    }

    static uint64_t mix_final(uint64_t z) {
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        return z ^ (z >> 31);
    }

    uint64_t state_;
    double spare_ = 0.0;
    bool have_spare_ = false;
};

}  // namespace sdkd
