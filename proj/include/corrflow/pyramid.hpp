#pragma once

#include <vector>

#include "corrflow/tensor.hpp"

namespace corrflow {

/// Ordered coarse-to-fine feature stack: level 0 is coarsest, spatial dims
/// double per level, channel counts never increase with level.
struct Pyramid {
    std::vector<Tensor> levels;

    int level_count() const { return static_cast<int>(levels.size()); }
    void validate() const;
};

struct LevelShape {
    int h, w, c;
};

/// Resolutions/channels the encoder emits for an input of h x w: level l
/// has side h / 2^(L-1-l) and channels base_c * 2^(L-1-l).
std::vector<LevelShape> pyramid_level_shapes(int h, int w, int levels, int base_channels);

/// Checks divisibility of image dims by 2^(levels-1).
void require_pyramid_compatible(int h, int w, int levels, const char* where);

/// Training-free descriptor pyramid: per level the image is reduced by
/// average pooling, then each position gets the RGB + Sobel-gradient values
/// of its (2r+1)^2 neighborhood (border-clamped), standardized per channel
/// over the level. Channel count is 5 * (2r+1)^2 at every level.
Pyramid extract_pyramid_handcrafted(const Tensor& image, int levels, int patch_radius);

/// Sum over levels of the per-level mean absolute difference.
real align_loss(const Pyramid& a, const Pyramid& b);

/// d(align_loss)/d(a) per level: sign(a-b) / N_l.
std::vector<Tensor> align_loss_grad(const Pyramid& a, const Pyramid& b);

}  // namespace corrflow
