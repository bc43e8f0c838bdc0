#pragma once

#include <span>

#include "corrflow/tensor.hpp"

namespace corrflow {

/// Bilinear interpolation of the four cells around (x, y), out-of-range
/// locations clamped to the border. Writes channels() values to out.
void bilinear_sample(const Tensor& map, real x, real y, std::span<real> out);

/// Backward of bilinear_sample. Accumulates into g_map and returns the
/// location gradient (gx, gy); zero on axes that were clamped.
struct LocGrad {
    real gx = 0, gy = 0;
};
LocGrad bilinear_sample_vjp(const Tensor& map, real x, real y,
                            std::span<const real> g_out, Tensor* g_map);

enum class Resample { up, down };

/// up: bilinear 2x upsample (align-corners-off grid); down: 2x2 average
/// pooling, requiring even dims.
Tensor resample2x(const Tensor& input, Resample direction);

void resample2x_vjp(const Tensor& input, Resample direction, const Tensor& g_out,
                    Tensor& g_input);

}  // namespace corrflow
