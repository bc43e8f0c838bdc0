#include "corrflow/sample.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "corrflow/parallel.hpp"

namespace corrflow {

namespace {
struct Taps {
    int x0, x1, y0, y1;
    real fx, fy;
    bool clamped_x, clamped_y;
};

Taps taps_for(const Tensor& map, real x, real y) {
    Taps t;
    const real xc = std::clamp(x, real(0), real(map.width() - 1));
    const real yc = std::clamp(y, real(0), real(map.height() - 1));
    t.clamped_x = xc != x;
    t.clamped_y = yc != y;
    t.x0 = static_cast<int>(std::floor(xc));
    t.y0 = static_cast<int>(std::floor(yc));
    t.x1 = std::min(t.x0 + 1, map.width() - 1);
    t.y1 = std::min(t.y0 + 1, map.height() - 1);
    t.fx = xc - t.x0;
    t.fy = yc - t.y0;
    return t;
}
}  // namespace

void bilinear_sample(const Tensor& map, real x, real y, std::span<real> out) {
    const Taps t = taps_for(map, x, y);
    const real w00 = (1 - t.fx) * (1 - t.fy);
    const real w10 = t.fx * (1 - t.fy);
    const real w01 = (1 - t.fx) * t.fy;
    const real w11 = t.fx * t.fy;
    const real* p00 = map.row(t.y0, t.x0);
    const real* p10 = map.row(t.y0, t.x1);
    const real* p01 = map.row(t.y1, t.x0);
    const real* p11 = map.row(t.y1, t.x1);
    for (int c = 0; c < map.channels(); ++c)
        out[c] = w00 * p00[c] + w10 * p10[c] + w01 * p01[c] + w11 * p11[c];
}

LocGrad bilinear_sample_vjp(const Tensor& map, real x, real y,
                            std::span<const real> g_out, Tensor* g_map) {
    const Taps t = taps_for(map, x, y);
    const real w00 = (1 - t.fx) * (1 - t.fy);
    const real w10 = t.fx * (1 - t.fy);
    const real w01 = (1 - t.fx) * t.fy;
    const real w11 = t.fx * t.fy;
    const real* p00 = map.row(t.y0, t.x0);
    const real* p10 = map.row(t.y0, t.x1);
    const real* p01 = map.row(t.y1, t.x0);
    const real* p11 = map.row(t.y1, t.x1);
    LocGrad lg;
    for (int c = 0; c < map.channels(); ++c) {
        const real g = g_out[c];
        if (g_map) {
            g_map->at(t.y0, t.x0, c) += w00 * g;
            g_map->at(t.y0, t.x1, c) += w10 * g;
            g_map->at(t.y1, t.x0, c) += w01 * g;
            g_map->at(t.y1, t.x1, c) += w11 * g;
        }
        // d value / d fx and d value / d fy
        lg.gx += g * ((p10[c] - p00[c]) * (1 - t.fy) + (p11[c] - p01[c]) * t.fy);
        lg.gy += g * ((p01[c] - p00[c]) * (1 - t.fx) + (p11[c] - p10[c]) * t.fx);
    }
    if (t.clamped_x) lg.gx = 0;
    if (t.clamped_y) lg.gy = 0;
    return lg;
}

Tensor resample2x(const Tensor& input, Resample direction) {
    if (direction == Resample::down) {
        if (input.height() % 2 != 0 || input.width() % 2 != 0)
            throw ShapeError("resample2x down: dims must be even, got " + input.shape_str());
        Tensor out(input.height() / 2, input.width() / 2, input.channels());
        parallel_for(out.height(), [&](int y) {
            for (int x = 0; x < out.width(); ++x) {
                real* dst = out.row(y, x);
                const real* a = input.row(2 * y, 2 * x);
                const real* b = input.row(2 * y, 2 * x + 1);
                const real* c = input.row(2 * y + 1, 2 * x);
                const real* d = input.row(2 * y + 1, 2 * x + 1);
                for (int ch = 0; ch < input.channels(); ++ch)
                    dst[ch] = (a[ch] + b[ch] + c[ch] + d[ch]) * real(0.25);
            }
        });
        return out;
    }
    Tensor out(input.height() * 2, input.width() * 2, input.channels());
    parallel_for(out.height(), [&](int oy) {
        const real sy = (oy + real(0.5)) / 2 - real(0.5);
        for (int ox = 0; ox < out.width(); ++ox) {
            const real sx = (ox + real(0.5)) / 2 - real(0.5);
            bilinear_sample(input, sx, sy,
                            std::span<real>(out.row(oy, ox), out.channels()));
        }
    });
    return out;
}

void resample2x_vjp(const Tensor& input, Resample direction, const Tensor& g_out,
                    Tensor& g_input) {
    if (!g_input.same_shape(input))
        g_input = Tensor(input.height(), input.width(), input.channels());
    if (direction == Resample::down) {
        if (g_out.height() != input.height() / 2 || g_out.width() != input.width() / 2)
            throw ShapeError("resample2x_vjp down: gradient " + g_out.shape_str() +
                             " vs input " + input.shape_str());
        for (int y = 0; y < g_out.height(); ++y)
            for (int x = 0; x < g_out.width(); ++x) {
                const real* g = g_out.row(y, x);
                for (int ch = 0; ch < input.channels(); ++ch) {
                    const real q = g[ch] * real(0.25);
                    g_input.at(2 * y, 2 * x, ch) += q;
                    g_input.at(2 * y, 2 * x + 1, ch) += q;
                    g_input.at(2 * y + 1, 2 * x, ch) += q;
                    g_input.at(2 * y + 1, 2 * x + 1, ch) += q;
                }
            }
        return;
    }
    if (g_out.height() != input.height() * 2 || g_out.width() != input.width() * 2)
        throw ShapeError("resample2x_vjp up: gradient " + g_out.shape_str() + " vs input " +
                         input.shape_str());
    for (int oy = 0; oy < g_out.height(); ++oy) {
        const real sy = (oy + real(0.5)) / 2 - real(0.5);
        for (int ox = 0; ox < g_out.width(); ++ox) {
            const real sx = (ox + real(0.5)) / 2 - real(0.5);
            bilinear_sample_vjp(input, sx, sy,
                                std::span<const real>(g_out.row(oy, ox), g_out.channels()),
                                &g_input);
        }
    }
}

}  // namespace corrflow
