#pragma once

#include <cstdint>
#include <random>

namespace lultax {

// Deterministic uniform draws. The distribution is built directly from the
// raw 64-bit stream so sampled strategies are identical across standard
// library implementations.
class rng {
public:
    explicit rng(std::uint64_t seed) : gen_(seed) {}

    double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // integer in [0, n)
    std::uint64_t below(std::uint64_t n) { return n == 0 ? 0 : gen_() % n; }

    std::uint64_t raw() { return gen_(); }

private:
    std::mt19937_64 gen_;
};

} // namespace lultax
