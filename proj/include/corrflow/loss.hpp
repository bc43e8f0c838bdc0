#pragma once

#include <vector>

#include "corrflow/tensor.hpp"
#include "corrflow/warp.hpp"

namespace corrflow {

/// Sum over levels of the mean absolute difference between each warped map
/// and the target downsampled (2x2 averaging) to that level's size.
real corr_loss(const std::vector<WarpResult>& warps, const Tensor& target);

/// Per-level gradient wrt the warped maps: sign(w - target_l) / N_l.
std::vector<Tensor> corr_loss_grad(const std::vector<WarpResult>& warps, const Tensor& target);

}  // namespace corrflow
