#include "corrflow/conv.hpp"

#include <cmath>
#include <string>

#include "corrflow/parallel.hpp"
#include "corrflow/rng.hpp"

namespace corrflow {

ConvParams ConvParams::zeros(int k, int c_in, int c_out, int stride, int padding) {
    ConvParams p;
    p.k = k;
    p.c_in = c_in;
    p.c_out = c_out;
    p.stride = stride;
    p.padding = padding < 0 ? k / 2 : padding;
    p.kernel.assign(static_cast<std::size_t>(k) * k * c_in * c_out, real(0));
    p.bias.assign(c_out, real(0));
    p.validate();
    return p;
}

ConvParams ConvParams::random(Rng& rng, int k, int c_in, int c_out, int stride,
                              int padding, double scale) {
    ConvParams p = zeros(k, c_in, c_out, stride, padding);
    if (scale < 0) scale = std::sqrt(2.0 / (static_cast<double>(k) * k * c_in));
    for (real& w : p.kernel) w = static_cast<real>(rng.normal(0.0, scale));
    return p;
}

ConvParams ConvParams::identity(int channels) {
    ConvParams p = zeros(1, channels, channels);
    for (int c = 0; c < channels; ++c) p.kernel[p.weight_idx(0, 0, c, c)] = real(1);
    return p;
}

void ConvParams::validate() const {
    if (k <= 0 || k % 2 == 0)
        throw ShapeError("ConvParams: kernel side must be odd and positive, got k=" +
                         std::to_string(k));
    if (c_in <= 0 || c_out <= 0 || stride <= 0 || padding < 0)
        throw ShapeError("ConvParams: bad dims k=" + std::to_string(k) +
                         " c_in=" + std::to_string(c_in) + " c_out=" + std::to_string(c_out) +
                         " stride=" + std::to_string(stride) +
                         " padding=" + std::to_string(padding));
    if (kernel.size() != static_cast<std::size_t>(k) * k * c_in * c_out ||
        bias.size() != static_cast<std::size_t>(c_out))
        throw ShapeError("ConvParams: buffer sizes inconsistent with declared shape");
}

int conv_out_dim(int in, int k, int stride, int padding) {
    int span = in + 2 * padding - k;
    if (span < 0)
        throw ShapeError("conv2d: kernel k=" + std::to_string(k) + " larger than padded input " +
                         std::to_string(in + 2 * padding));
    return span / stride + 1;
}

Tensor conv2d(const Tensor& input, const ConvParams& p) {
    p.validate();
    if (input.channels() != p.c_in)
        throw ShapeError("conv2d: input " + input.shape_str() + " vs kernel expecting c_in=" +
                         std::to_string(p.c_in));
    const int oh = conv_out_dim(input.height(), p.k, p.stride, p.padding);
    const int ow = conv_out_dim(input.width(), p.k, p.stride, p.padding);
    Tensor out(oh, ow, p.c_out);

    parallel_for(oh, [&](int oy) {
        for (int ox = 0; ox < ow; ++ox) {
            real* dst = out.row(oy, ox);
            for (int co = 0; co < p.c_out; ++co) dst[co] = p.bias[co];
            const int iy0 = oy * p.stride - p.padding;
            const int ix0 = ox * p.stride - p.padding;
            for (int ky = 0; ky < p.k; ++ky) {
                const int iy = iy0 + ky;
                if (iy < 0 || iy >= input.height()) continue;
                for (int kx = 0; kx < p.k; ++kx) {
                    const int ix = ix0 + kx;
                    if (ix < 0 || ix >= input.width()) continue;
                    const real* src = input.row(iy, ix);
                    const real* w = p.kernel.data() + p.weight_idx(ky, kx, 0, 0);
                    for (int ci = 0; ci < p.c_in; ++ci) {
                        const real a = src[ci];
                        const real* wc = w + static_cast<std::size_t>(ci) * p.c_out;
                        for (int co = 0; co < p.c_out; ++co) dst[co] += a * wc[co];
                    }
                }
            }
        }
    });
    return out;
}

void conv2d_vjp(const Tensor& input, const ConvParams& p, const Tensor& g_out,
                Tensor& g_input, ConvParams& g_params) {
    p.validate();
    const int oh = conv_out_dim(input.height(), p.k, p.stride, p.padding);
    const int ow = conv_out_dim(input.width(), p.k, p.stride, p.padding);
    if (g_out.height() != oh || g_out.width() != ow || g_out.channels() != p.c_out)
        throw ShapeError("conv2d_vjp: upstream gradient " + g_out.shape_str() +
                         " does not match conv output " + std::to_string(oh) + "x" +
                         std::to_string(ow) + "x" + std::to_string(p.c_out));
    if (!g_input.same_shape(input)) g_input = Tensor(input.height(), input.width(), input.channels());
    if (g_params.kernel.size() != p.kernel.size())
        g_params = ConvParams::zeros(p.k, p.c_in, p.c_out, p.stride, p.padding);

    // Serial over output positions: input slots overlap between windows.
    for (int oy = 0; oy < oh; ++oy) {
        for (int ox = 0; ox < ow; ++ox) {
            const real* g = g_out.row(oy, ox);
            for (int co = 0; co < p.c_out; ++co) g_params.bias[co] += g[co];
            const int iy0 = oy * p.stride - p.padding;
            const int ix0 = ox * p.stride - p.padding;
            for (int ky = 0; ky < p.k; ++ky) {
                const int iy = iy0 + ky;
                if (iy < 0 || iy >= input.height()) continue;
                for (int kx = 0; kx < p.k; ++kx) {
                    const int ix = ix0 + kx;
                    if (ix < 0 || ix >= input.width()) continue;
                    const real* src = input.row(iy, ix);
                    real* gsrc = g_input.row(iy, ix);
                    const real* w = p.kernel.data() + p.weight_idx(ky, kx, 0, 0);
                    real* gw = g_params.kernel.data() + p.weight_idx(ky, kx, 0, 0);
                    for (int ci = 0; ci < p.c_in; ++ci) {
                        const real a = src[ci];
                        const real* wc = w + static_cast<std::size_t>(ci) * p.c_out;
                        real* gwc = gw + static_cast<std::size_t>(ci) * p.c_out;
                        real acc = 0;
                        for (int co = 0; co < p.c_out; ++co) {
                            acc += g[co] * wc[co];
                            gwc[co] += g[co] * a;
                        }
                        gsrc[ci] += acc;
                    }
                }
            }
        }
    }
}

Tensor leaky_relu(const Tensor& t, real slope) {
    Tensor out = t;
    for (real& v : out.values())
        if (v < 0) v *= slope;
    return out;
}

void leaky_relu_vjp(const Tensor& pre, real slope, const Tensor& g_out, Tensor& g_pre) {
    require_same_shape(pre, g_out, "leaky_relu_vjp");
    if (!g_pre.same_shape(pre)) g_pre = Tensor(pre.height(), pre.width(), pre.channels());
    const std::size_t n = pre.size();
    for (std::size_t i = 0; i < n; ++i)
        g_pre.values()[i] += pre.values()[i] < 0 ? slope * g_out.values()[i] : g_out.values()[i];
}

}  // namespace corrflow
