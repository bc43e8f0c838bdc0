#pragma once

#include <cstdint>
#include <random>

#include "corrflow/tensor.hpp"

namespace corrflow {

/// Seeded RNG with explicit distribution math so that streams are identical
/// across standard library implementations.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : gen_(seed) {}

    std::uint64_t next_u64() { return gen_(); }

    /// Uniform in [0,1) with 53 bits of randomness.
    double unit() {
        return static_cast<double>(gen_() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * unit(); }

    int uniform_int(int lo, int hi) {  // inclusive bounds
        return lo + static_cast<int>(gen_() % static_cast<std::uint64_t>(hi - lo + 1));
    }

    /// Box-Muller; consumes two uniforms per call.
    double normal(double mean = 0.0, double stddev = 1.0);

    void fill_uniform(Tensor& t, double lo, double hi);
    void fill_normal(Tensor& t, double mean, double stddev);

private:
    std::mt19937_64 gen_;
};

}  // namespace corrflow
