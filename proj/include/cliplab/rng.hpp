#pragma once

#include <cstdint>
#include <istream>
#include <ostream>
#include <random>

#include "cliplab/common.hpp"

namespace cliplab {

/// Seeded RNG with hand-rolled distributions so draw sequences are stable
/// across standard libraries. One stream per run; state is checkpointable.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : gen_(seed) {}

    std::uint64_t bits() { return gen_(); }

    /// Uniform in [0, 1) with 53-bit resolution.
    double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Standard normal via Box-Muller. Always consumes two uniforms.
    double normal() {
        double u1 = uniform();
        double u2 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
    }

    /// Uniform integer in [0, n), rejection-free bias below 2^-64 ignored.
    std::size_t index(std::size_t n) {
        return static_cast<std::size_t>(uniform() * static_cast<double>(n)) % n;
    }

    void save(std::ostream& os) const { os << gen_; }
    void load(std::istream& is) { is >> gen_; }

private:
    std::mt19937_64 gen_;
};

}  // namespace cliplab
