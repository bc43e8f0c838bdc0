#pragma once

#include "corrflow/conv.hpp"
#include "corrflow/tensor.hpp"

namespace corrflow {

inline constexpr real kSpadeEps = real(1e-5);

/// Spatially-adaptive modulation: the activation is normalized per spatial
/// site across channels (positional normalization), then scaled and shifted
/// by per-site parameters projected from the warped-exemplar stack:
///   out = alpha(stack) * (T - mu) / sigma + beta(stack)
/// proj_alpha / proj_beta map the stack to the activation's channel count.
Tensor spade_modulate(const Tensor& activation, const Tensor& warped_stack,
                      const ConvParams& proj_alpha, const ConvParams& proj_beta);

void spade_modulate_vjp(const Tensor& activation, const Tensor& warped_stack,
                        const ConvParams& proj_alpha, const ConvParams& proj_beta,
                        const Tensor& g_out, Tensor* g_activation, Tensor* g_stack,
                        ConvParams* g_alpha, ConvParams* g_beta);

}  // namespace corrflow
