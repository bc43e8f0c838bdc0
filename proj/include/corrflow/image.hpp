#pragma once

#include "corrflow/tensor.hpp"

namespace corrflow {

class Rng;

/// Images are 3-channel tensors with values in [0,1].
using ImageRGB = Tensor;

void require_rgb01(const Tensor& img, const char* where);

/// Peak signal-to-noise ratio in dB against peak 1.0.
real psnr(const Tensor& a, const Tensor& b);

/// Repeated 2x2 average pooling until the target side is reached.
/// target must divide the input side as a power of two.
Tensor downsample_to(const Tensor& img, int target_h, int target_w);

/// Smooth random test image: sum of seeded Gaussian blobs over a gradient
/// base. Deterministic per seed.
ImageRGB make_smooth_image(int h, int w, unsigned long long seed, int blobs = 12);

/// Per-pixel uniform noise image, optionally box-blurred a little so that
/// local descriptors stay distinctive but not pathological.
ImageRGB make_noise_image(int h, int w, unsigned long long seed, int blur_passes = 1);

/// Wraps the image circularly by (dx, dy) pixels.
Tensor circular_shift(const Tensor& img, int dx, int dy);

}  // namespace corrflow
