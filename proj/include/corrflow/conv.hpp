#pragma once

#include <vector>

#include "corrflow/tensor.hpp"

namespace corrflow {

class Rng;

/// Parameters of one 2-d cross-correlation layer. Kernel layout is
/// (ky, kx, c_in, c_out) row-major with c_out fastest; kernels are square
/// with odd side.
struct ConvParams {
    int k = 0;
    int c_in = 0;
    int c_out = 0;
    int stride = 1;
    int padding = 0;
    std::vector<real> kernel;  // k*k*c_in*c_out
    std::vector<real> bias;    // c_out

    static ConvParams zeros(int k, int c_in, int c_out, int stride = 1, int padding = -1);
    static ConvParams random(Rng& rng, int k, int c_in, int c_out, int stride = 1,
                             int padding = -1, double scale = -1.0);
    /// 1x1 conv acting as the identity on channels (c_in == c_out).
    static ConvParams identity(int channels);

    void validate() const;
    std::size_t weight_idx(int ky, int kx, int ci, int co) const {
        return ((static_cast<std::size_t>(ky) * k + kx) * c_in + ci) * c_out + co;
    }
    std::size_t param_count() const { return kernel.size() + bias.size(); }
};

int conv_out_dim(int in, int k, int stride, int padding);

/// Standard cross-correlation with zero padding. Deterministic; parallel
/// over output rows.
Tensor conv2d(const Tensor& input, const ConvParams& p);

/// Backward pass: given d(loss)/d(output), accumulates d(loss)/d(input)
/// into g_input and d(loss)/d(kernel|bias) into g_params.
void conv2d_vjp(const Tensor& input, const ConvParams& p, const Tensor& g_out,
                Tensor& g_input, ConvParams& g_params);

/// Leaky rectifier, slope for negative inputs.
Tensor leaky_relu(const Tensor& t, real slope);
/// Routes gradients through leaky_relu given the pre-activation input.
void leaky_relu_vjp(const Tensor& pre, real slope, const Tensor& g_out, Tensor& g_pre);

}  // namespace corrflow
