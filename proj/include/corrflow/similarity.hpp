#pragma once

#include <span>
#include <vector>

#include "corrflow/tensor.hpp"

namespace corrflow {

/// Norm threshold below which a vector counts as dead and cosine returns 0.
inline constexpr real kCosineNormFloor = real(1e-12);

/// dot(a,b) / (|a||b|), 0 if either norm is below the floor.
real cosine_similarity(std::span<const real> a, std::span<const real> b);

/// Accumulates d(cos)/da * g and d(cos)/db * g. At the dead-vector fixed
/// point the gradient is zero on both sides.
void cosine_similarity_vjp(std::span<const real> a, std::span<const real> b, real g,
                           std::span<real> ga, std::span<real> gb);

/// softmax(scores / temperature) with max subtraction. Weights are positive
/// and sum to 1.
std::vector<real> softmax_weights(std::span<const real> scores, real temperature);

void softmax_weights_vjp(std::span<const real> weights, real temperature,
                         std::span<const real> g_weights, std::span<real> g_scores);

}  // namespace corrflow
