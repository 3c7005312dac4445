#pragma once

#include <cmath>
#include <cstdint>

namespace pal {

// Splittable counter-based generator. A draw mixes (key, counter) through the
// splitmix64 finalizer, so streams derived via split() are independent of how
// many values the parent has produced. Everything downstream of a seed is
// bit-reproducible across platforms.
class Rng {
public:
    explicit Rng(uint64_t seed) : key_(mix(seed ^ 0x5851f42d4c957f2dULL)), counter_(0) {}

    // Child stream `stream` of this generator; does not advance the parent.
    Rng split(uint64_t stream) const {
        Rng child(0);
        child.key_ = mix(key_ ^ mix(stream + 0x9e3779b97f4a7c15ULL));
        child.counter_ = 0;
        return child;
    }

    uint64_t next_u64() { return mix(key_ + 0xd1b54a32d192ed03ULL * ++counter_); }

    // Uniform in [0, 1) with 53 random bits.
    double next_double() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    // Uniform integer in [0, n). n must be >= 1.
    uint64_t next_below(uint64_t n) { return next_u64() % n; }

    // Uniform integer in [lo, hi] inclusive.
    int64_t next_int(int64_t lo, int64_t hi) {
        return lo + static_cast<int64_t>(next_below(static_cast<uint64_t>(hi - lo + 1)));
    }

    // Standard normal via Box-Muller; one uniform pair per draw.
    double next_normal() {
        double u1 = next_double();
        double u2 = next_double();
        while (u1 <= 0.0) u1 = next_double();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586477 * u2);
    }

    // N(0, sigma^2) truncated to [-2 sigma, 2 sigma].
    double next_trunc_normal(double sigma) {
        double z = next_normal();
        while (std::fabs(z) > 2.0) z = next_normal();
        return z * sigma;
    }

private:
    static uint64_t mix(uint64_t z) {
        z += 0x9e3779b97f4a7c15ULL;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    uint64_t key_;
    uint64_t counter_;
};

}  // namespace pal
