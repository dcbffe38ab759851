#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace iconq {

// Deterministic random source. All distributions are implemented by hand on top
// of mt19937_64 so that identical seeds give identical streams on every
// toolchain; std::*_distribution output is implementation-defined.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : eng_(seed) {}

    // Derive an independent stream; stable under call order at the parent.
    Rng fork(std::uint64_t stream) {
        std::uint64_t a = eng_();
        return Rng(a ^ (0x9e3779b97f4a7c15ULL * (stream + 1)));
    }

    std::uint64_t next_u64() { return eng_(); }

    // Uniform in [0, 1); 53-bit resolution.
    double uniform01() { return double(eng_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

    std::int64_t uniform_int(std::int64_t lo, std::int64_t hi) {  // inclusive bounds
        std::uint64_t span = std::uint64_t(hi - lo) + 1;
        return lo + std::int64_t(eng_() % span);  // modulo bias negligible for span << 2^64
    }

    double normal(double mean = 0.0, double sd = 1.0) {
        // Box-Muller, one value per call (cache dropped for simpler state).
        double u1 = uniform01();
        double u2 = uniform01();
        while (u1 <= 0.0) u1 = uniform01();
        double r = std::sqrt(-2.0 * std::log(u1));
        return mean + sd * r * std::cos(2.0 * M_PI * u2);
    }

    double lognormal(double mu, double sigma) { return std::exp(normal(mu, sigma)); }

    double exponential(double rate) {
        double u = uniform01();
        return -std::log1p(-u) / rate;
    }

    // Pareto with scale xm and shape alpha; support [xm, inf).
    double pareto(double xm, double alpha) {
        double u = uniform01();
        return xm / std::pow(1.0 - u, 1.0 / alpha);
    }

private:
    std::mt19937_64 eng_;
};

}  // namespace iconq
