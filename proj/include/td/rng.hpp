#pragma once

#include <cmath>
#include <cstdint>
#include <span>

namespace td {

// Deterministic random number generator used everywhere randomness is needed.
//
// Generator: splitmix64 over an incrementing counter (Steele et al.), so a
// stream is fully determined by its 64-bit seed and the draw index. Normal
// deviates come from the Box-Muller transform on 53-bit uniforms. Identical
// (seed, draw sequence) gives identical values on a given platform/libm.
class Rng {
  public:
    explicit Rng(uint64_t seed) : state_(seed) {}

    uint64_t next_u64() {
        uint64_t z = (state_ += 0x9e3779b97f4a7c15ull);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        return z ^ (z >> 31);
    }

    // Uniform in [0, 1) with 53 random bits.
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    // Uniform integer in [lo, hi] inclusive.
    uint64_t uniform_int(uint64_t lo, uint64_t hi) {
        uint64_t span = hi - lo + 1;
        return lo + next_u64() % span;
    }

    // Standard normal via Box-Muller; the second deviate of each pair is
    // cached so draws stay aligned with the underlying uniform stream.
    double normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        // u1 in (0, 1] so the log is finite.
        double u1 = static_cast<double>((next_u64() >> 11) + 1) * 0x1.0p-53;
        double u2 = static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
        double r = std::sqrt(-2.0 * std::log(u1));
        double theta = 2.0 * 3.141592653589793238462643383279502884 * u2;
        spare_ = r * std::sin(theta);
        have_spare_ = true;
        return r * std::cos(theta);
    }

    float normal_f() { return static_cast<float>(normal()); }

    void fill_normal(std::span<float> out) {
        for (float& v : out) v = normal_f();
    }
    void fill_normal(std::span<double> out) {
        for (double& v : out) v = normal();
    }

    // Stateless seed derivation for per-purpose substreams, e.g.
    // mix(run_seed, step) or mix(mix(seed, kStageTag), index).
    static uint64_t mix(uint64_t a, uint64_t b) {
        uint64_t z = a + 0x9e3779b97f4a7c15ull * (b + 1);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        return z ^ (z >> 31);
    }

  private:
    uint64_t state_;
    double spare_ = 0.0;
    bool have_spare_ = false;
};

}  // namespace td
