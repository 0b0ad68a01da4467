#pragma once

// Deterministic random number generation.  Every stochastic unit of work
// (a subject's scores, one visit's noise vector, one sampler chain) draws from
// its own stream keyed by (seed, tag, indices...), so results are
// byte-identical across runs and thread counts: no stream ever depends on how
// work was scheduled.

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <numbers>
#include <random>

#include "mfpca/errors.hpp"

namespace mfpca {

// SplitMix64 step; used to mix stream keys into seed material.
inline std::uint64_t splitmix64(std::uint64_t& state) {
    std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

// Collapses (seed, key...) into one well-mixed 64-bit stream seed.
inline std::uint64_t derive_stream(std::uint64_t seed,
                                   std::initializer_list<std::uint64_t> key) {
    std::uint64_t state = seed ^ 0x8000000000000001ULL;
    std::uint64_t out = splitmix64(state);
    for (std::uint64_t k : key) {
        state ^= k + 0x9e3779b97f4a7c15ULL + (state << 6) + (state >> 2);
        out = splitmix64(state);
    }
    return out;
}

// Generator with explicit draw algorithms (Box-Muller normals, Marsaglia-Tsang
// gammas) so sequences do not depend on standard-library distribution
// internals, which vary between implementations.
class Rng {
public:
    explicit Rng(std::uint64_t stream_seed) : engine_(stream_seed) {}

    Rng(std::uint64_t seed, std::initializer_list<std::uint64_t> key)
        : engine_(derive_stream(seed, key)) {}

    // Uniform on (0, 1]; never returns 0 so log() is always safe.
    double uniform() {
        return static_cast<double>((engine_() >> 11) + 1) * 0x1.0p-53;
    }

    // Standard normal via Box-Muller, one value per call (no cached spare).
    double normal() {
        const double u1 = uniform();
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) *
               std::cos(2.0 * std::numbers::pi * u2);
    }

    // Gamma(shape, rate) via Marsaglia-Tsang squeeze; shape < 1 handled by the
    // usual boost: G(a) = G(a+1) * U^{1/a}.
    double gamma(double shape, double rate) {
        if (shape <= 0.0 || rate <= 0.0)
            throw InvalidArgument("gamma draw requires positive shape and rate");
        if (shape < 1.0) {
            const double u = uniform();
            return gamma(shape + 1.0, rate) * std::pow(u, 1.0 / shape);
        }
        const double d = shape - 1.0 / 3.0;
        const double c = 1.0 / std::sqrt(9.0 * d);
        for (;;) {
            double x;
            double v;
            do {
                x = normal();
                v = 1.0 + c * x;
            } while (v <= 0.0);
            v = v * v * v;
            const double u = uniform();
            if (std::log(u) < 0.5 * x * x + d - d * v + d * std::log(v))
                return d * v / rate;
        }
    }

    std::uint64_t raw() { return engine_(); }

private:
    std::mt19937_64 engine_;
};

}  // namespace mfpca
