#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace prefalign {

// splitmix64; used to derive independent sub-stream seeds.
inline std::uint64_t mix_seed(std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

// Seeded generator with explicit transforms. The std:: distributions are
// implementation-defined, so every draw here is built directly from the
// (fully specified) mt19937_64 word stream; outputs are identical across
// compilers and platforms for a fixed seed.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed), seed_(seed) {}

    std::uint64_t seed() const { return seed_; }

    std::uint64_t next_u64() { return engine_(); }

    // Uniform on [0, 1) with 53 random bits.
    double next_double() {
        return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
    }

    // Uniform on [lo, hi).
    double uniform(double lo, double hi) { return lo + (hi - lo) * next_double(); }

    // Uniform integer in [0, n); unbiased via rejection.
    std::uint64_t uniform_int(std::uint64_t n) {
        if (n == 0) return 0;
        const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % n);
        std::uint64_t v = engine_();
        while (v >= limit) v = engine_();
        return v % n;
    }

    // Standard normal via Box-Muller (two uniforms per draw, no cached spare).
    double normal() {
        double u1 = next_double();
        while (u1 <= 0.0) u1 = next_double();
        const double u2 = next_double();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
    }

    bool bernoulli(double p) { return next_double() < p; }

    // Independent child stream; forking with distinct salts yields streams
    // that do not depend on how much the parent has been consumed.
    Rng fork(std::uint64_t salt) const {
        return Rng(mix_seed(seed_ ^ mix_seed(salt)));
    }

private:
    std::mt19937_64 engine_;
    std::uint64_t seed_;
};

}  // namespace prefalign
