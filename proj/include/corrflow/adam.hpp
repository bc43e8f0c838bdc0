#pragma once

#include <span>
#include <vector>

#include "corrflow/tensor.hpp"

namespace corrflow {

/// First/second moment accumulators plus step counter for one flat
/// parameter vector.
struct AdamState {
    std::vector<real> m;
    std::vector<real> v;
    long step = 0;

    explicit AdamState(std::size_t n = 0) : m(n, real(0)), v(n, real(0)) {}
};

struct AdamConfig {
    real lr = real(1e-4);
    real beta1 = real(0);  // raw gradient as first moment
    real beta2 = real(0.999);
    real eps = real(1e-8);
};

/// Standard Adam update with bias correction, in place on params.
void adam_step(std::span<real> params, std::span<const real> grads, AdamState& state,
               const AdamConfig& cfg);

}  // namespace corrflow
