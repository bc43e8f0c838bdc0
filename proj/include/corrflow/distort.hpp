#pragma once

#include <array>
#include <vector>

#include "corrflow/field.hpp"
#include "corrflow/tensor.hpp"

namespace corrflow {

/// Geometric distortion: an affine map plus optional thin-plate-spline
/// control-point displacements. The affine part maps output pixel
/// coordinates to source sample coordinates; TPS displacements are added on
/// top. Displacement magnitudes are bounded by max_disp_frac of the shorter
/// image side.
struct DistortionSpec {
    std::array<real, 6> affine = {1, 0, 0, 0, 1, 0};  // row-major 2x3: (a b c; d e f)
    std::vector<real> tps_points;                     // control points, x y pairs
    std::vector<real> tps_disp;                       // displacements, dx dy pairs
    unsigned long long seed = 0;
    real max_disp_frac = real(0.1);

    static DistortionSpec identity();
    static DistortionSpec translation(real dx, real dy);
    /// Random small affine (+ optional TPS grid) with displacements bounded
    /// by max_frac of the image side. Deterministic per seed.
    static DistortionSpec random(unsigned long long seed, int h, int w, real max_frac,
                                 bool with_tps = false);

    void validate(int h, int w) const;
    real det() const { return affine[0] * affine[4] - affine[1] * affine[3]; }
};

/// Forward map: output pixel -> source sample location.
void distortion_apply(const DistortionSpec& spec, real x, real y, real& sx, real& sy);
/// Pointwise inverse (exact for pure affine, damped fixed point with TPS).
void distortion_invert(const DistortionSpec& spec, real x, real y, real& ix, real& iy);

/// Applies the distortion by inverse-mapping with bilinear sampling and
/// returns the warped image together with the dense ground-truth K=1
/// correspondence field H(p) = T^-1(p) that reconstructs the original from
/// the distorted image (oracle use only).
struct PseudoExemplar {
    Tensor image;
    CorrField gt_field;
};
PseudoExemplar make_pseudo_exemplar(const Tensor& image, const DistortionSpec& spec);

}  // namespace corrflow
