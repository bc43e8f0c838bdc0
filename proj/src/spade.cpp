#include "corrflow/spade.hpp"

#include <cmath>

#include "corrflow/parallel.hpp"

namespace corrflow {

namespace {
void require_spade_shapes(const Tensor& activation, const Tensor& stack,
                          const ConvParams& pa, const ConvParams& pb) {
    if (stack.height() != activation.height() || stack.width() != activation.width())
        throw ShapeError("spade_modulate: stack " + stack.shape_str() +
                         " vs activation " + activation.shape_str());
    if (pa.c_in != stack.channels() || pb.c_in != stack.channels())
        throw ShapeError("spade_modulate: projections expect " + std::to_string(pa.c_in) +
                         " channels, stack has " + std::to_string(stack.channels()));
    if (pa.c_out != activation.channels() || pb.c_out != activation.channels())
        throw ShapeError("spade_modulate: projections must emit the activation's " +
                         std::to_string(activation.channels()) + " channels");
    if (pa.stride != 1 || pb.stride != 1 || pa.padding != pa.k / 2 || pb.padding != pb.k / 2)
        throw ShapeError("spade_modulate: projections must preserve spatial dims");
}
}  // namespace

Tensor spade_modulate(const Tensor& activation, const Tensor& warped_stack,
                      const ConvParams& proj_alpha, const ConvParams& proj_beta) {
    require_spade_shapes(activation, warped_stack, proj_alpha, proj_beta);
    const Tensor alpha = conv2d(warped_stack, proj_alpha);
    const Tensor beta = conv2d(warped_stack, proj_beta);
    const int C = activation.channels();
    Tensor out(activation.height(), activation.width(), C);
    parallel_for(activation.height(), [&](int y) {
        for (int x = 0; x < activation.width(); ++x) {
            const real* t = activation.row(y, x);
            real mu = 0;
            for (int c = 0; c < C; ++c) mu += t[c];
            mu /= C;
            real var = 0;
            for (int c = 0; c < C; ++c) {
                const real d = t[c] - mu;
                var += d * d;
            }
            var /= C;
            const real inv_sigma = real(1) / std::sqrt(var + kSpadeEps);
            const real* a = alpha.row(y, x);
            const real* b = beta.row(y, x);
            real* dst = out.row(y, x);
            for (int c = 0; c < C; ++c) dst[c] = a[c] * (t[c] - mu) * inv_sigma + b[c];
        }
    });
    return out;
}

void spade_modulate_vjp(const Tensor& activation, const Tensor& warped_stack,
                        const ConvParams& proj_alpha, const ConvParams& proj_beta,
                        const Tensor& g_out, Tensor* g_activation, Tensor* g_stack,
                        ConvParams* g_alpha, ConvParams* g_beta) {
    require_spade_shapes(activation, warped_stack, proj_alpha, proj_beta);
    const Tensor alpha = conv2d(warped_stack, proj_alpha);
    const int C = activation.channels();
    Tensor g_alpha_map(activation.height(), activation.width(), C);
    Tensor g_beta_map(activation.height(), activation.width(), C);

    for (int y = 0; y < activation.height(); ++y)
        for (int x = 0; x < activation.width(); ++x) {
            const real* t = activation.row(y, x);
            const real* g = g_out.row(y, x);
            const real* a = alpha.row(y, x);
            real mu = 0;
            for (int c = 0; c < C; ++c) mu += t[c];
            mu /= C;
            real var = 0;
            for (int c = 0; c < C; ++c) {
                const real d = t[c] - mu;
                var += d * d;
            }
            var /= C;
            const real inv_sigma = real(1) / std::sqrt(var + kSpadeEps);
            real* ga = g_alpha_map.row(y, x);
            real* gb = g_beta_map.row(y, x);
            // site-local normalization backward over channels
            real mean_gn = 0, mean_gnn = 0;
            for (int c = 0; c < C; ++c) {
                const real n = (t[c] - mu) * inv_sigma;
                const real gn = g[c] * a[c];
                ga[c] = g[c] * n;
                gb[c] = g[c];
                mean_gn += gn;
                mean_gnn += gn * n;
            }
            mean_gn /= C;
            mean_gnn /= C;
            if (g_activation) {
                real* gt = g_activation->row(y, x);
                for (int c = 0; c < C; ++c) {
                    const real n = (t[c] - mu) * inv_sigma;
                    const real gn = g[c] * a[c];
                    gt[c] += inv_sigma * (gn - mean_gn - n * mean_gnn);
                }
            }
        }

    if (g_stack || g_alpha || g_beta) {
        ConvParams ga_sink = ConvParams::zeros(proj_alpha.k, proj_alpha.c_in, proj_alpha.c_out,
                                               proj_alpha.stride, proj_alpha.padding);
        ConvParams gb_sink = ConvParams::zeros(proj_beta.k, proj_beta.c_in, proj_beta.c_out,
                                               proj_beta.stride, proj_beta.padding);
        Tensor stack_sink(warped_stack.height(), warped_stack.width(), warped_stack.channels());
        Tensor& gs = g_stack ? *g_stack : stack_sink;
        conv2d_vjp(warped_stack, proj_alpha, g_alpha_map, gs, g_alpha ? *g_alpha : ga_sink);
        conv2d_vjp(warped_stack, proj_beta, g_beta_map, gs, g_beta ? *g_beta : gb_sink);
    }
}

}  // namespace corrflow
