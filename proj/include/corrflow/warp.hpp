#pragma once

#include <vector>

#include "corrflow/field.hpp"
#include "corrflow/tensor.hpp"

namespace corrflow {

/// Warped map plus the per-slot softmax weights that produced it.
struct WarpResult {
    Tensor warped;
    std::vector<real> weights;  // h*w*k, sum to 1 per position
};

/// Differentiable top-K warp: w(p) = sum_k softmax(S(p,.)/tau)_k *
/// exemplar(H(p,k)) with bilinear gathering.
WarpResult soft_warp(const Tensor& exemplar, const CorrField& field, real tau);

/// Backward of soft_warp. Accumulates into any non-null output; weights must
/// come from the forward call.
void soft_warp_vjp(const Tensor& exemplar, const CorrField& field, real tau,
                   const std::vector<real>& weights, const Tensor& g_warped,
                   Tensor* g_exemplar, std::vector<real>* g_scores,
                   std::vector<real>* g_coords);

}  // namespace corrflow
