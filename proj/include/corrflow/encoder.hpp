#pragma once

#include <vector>

#include "corrflow/conv.hpp"
#include "corrflow/pyramid.hpp"
#include "corrflow/tensor.hpp"

namespace corrflow {

class Rng;

/// U-net feature encoder: a down path of strided convs + residual blocks,
/// and an up path of bilinear upsampling + skip concatenation + residual
/// blocks with projection shortcuts. Emits one feature map per pyramid
/// level, coarsest first, channels halving as resolution doubles.
///
/// Layer order (fixed, also the serialization order):
///   stem, res0.c1, res0.c2,
///   per down stage s: down_s, res_s.c1, res_s.c2,
///   per up stage u:   up_u.proj, up_u.c1, up_u.c2
struct EncoderWeights {
    int levels = 0;
    int base_channels = 0;
    int in_channels = 3;
    std::vector<ConvParams> layers;

    static EncoderWeights zeros(int levels, int base_channels, int in_channels = 3);
    static EncoderWeights random(Rng& rng, int levels, int base_channels, int in_channels = 3);
    /// Rebuilds the structured view from a flat layer list (e.g. after
    /// loading from file), validating the shape chain.
    static EncoderWeights from_layers(std::vector<ConvParams> layers);

    void validate() const;
    std::size_t param_count() const;
};

inline constexpr real kEncoderLeakSlope = real(0.2);

/// Saved intermediates of one encoder forward pass, enough to run the
/// backward pass.
struct EncoderTape {
    Tensor input;
    std::vector<Tensor> conv_inputs;   // input of every conv, layer order
    std::vector<Tensor> lrelu_pres;    // pre-activation of every leaky relu
    std::vector<Tensor> up_inputs;     // input of each up-stage resample
    std::vector<Tensor> skip_outputs;  // down-path outputs used as skips
};

Pyramid extract_pyramid_encoder(const Tensor& image, const EncoderWeights& w,
                                EncoderTape* tape = nullptr);

/// Accumulates d(loss)/d(weights) given per-level output gradients.
/// g_levels entries may be empty tensors for levels without gradient.
void encoder_backward(const EncoderWeights& w, const EncoderTape& tape,
                      const std::vector<Tensor>& g_levels, EncoderWeights& g_weights);

}  // namespace corrflow
