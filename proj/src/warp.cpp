#include "corrflow/warp.hpp"

#include <algorithm>

#include "corrflow/parallel.hpp"
#include "corrflow/sample.hpp"
#include "corrflow/similarity.hpp"

namespace corrflow {

WarpResult soft_warp(const Tensor& exemplar, const CorrField& field, real tau) {
    if (exemplar.height() != field.target_h || exemplar.width() != field.target_w)
        throw ShapeError("soft_warp: exemplar " + exemplar.shape_str() +
                         " vs field target " + std::to_string(field.target_w) + "x" +
                         std::to_string(field.target_h));
    if (!(tau > 0)) throw std::invalid_argument("soft_warp: tau must be positive");
    const int C = exemplar.channels();
    WarpResult res;
    res.warped = Tensor(field.h, field.w, C);
    res.weights.assign(field.slot_count(), real(0));
    parallel_for(field.h, [&](int y) {
        std::vector<real> gathered(C);
        std::vector<real> sc(field.k);
        for (int x = 0; x < field.w; ++x) {
            for (int kk = 0; kk < field.k; ++kk) sc[kk] = field.scores[field.slot(y, x, kk)];
            const std::vector<real> w = softmax_weights(sc, tau);
            real* dst = res.warped.row(y, x);
            for (int kk = 0; kk < field.k; ++kk) {
                const std::size_t s = field.slot(y, x, kk);
                res.weights[s] = w[kk];
                bilinear_sample(exemplar, field.cx(s), field.cy(s), gathered);
                for (int c = 0; c < C; ++c) dst[c] += w[kk] * gathered[c];
            }
        }
    });
    return res;
}

void soft_warp_vjp(const Tensor& exemplar, const CorrField& field, real tau,
                   const std::vector<real>& weights, const Tensor& g_warped,
                   Tensor* g_exemplar, std::vector<real>* g_scores,
                   std::vector<real>* g_coords) {
    const int C = exemplar.channels();
    std::vector<real> gathered(C), gvec(C), w(field.k), gw(field.k), gs(field.k);
    for (int y = 0; y < field.h; ++y)
        for (int x = 0; x < field.w; ++x) {
            const real* g = g_warped.row(y, x);
            bool any = false;
            for (int c = 0; c < C; ++c)
                if (g[c] != real(0)) {
                    any = true;
                    break;
                }
            if (!any) continue;
            for (int kk = 0; kk < field.k; ++kk) {
                const std::size_t s = field.slot(y, x, kk);
                w[kk] = weights[s];
                bilinear_sample(exemplar, field.cx(s), field.cy(s), gathered);
                real dot = 0;
                for (int c = 0; c < C; ++c) dot += g[c] * gathered[c];
                gw[kk] = dot;  // d warp / d weight_k
                for (int c = 0; c < C; ++c) gvec[c] = w[kk] * g[c];
                const LocGrad lg =
                    bilinear_sample_vjp(exemplar, field.cx(s), field.cy(s), gvec, g_exemplar);
                if (g_coords) {
                    (*g_coords)[2 * s] += lg.gx;
                    (*g_coords)[2 * s + 1] += lg.gy;
                }
            }
            if (g_scores) {
                std::fill(gs.begin(), gs.end(), real(0));
                softmax_weights_vjp(std::span<const real>(w.data(), field.k), tau,
                                    std::span<const real>(gw.data(), field.k),
                                    std::span<real>(gs.data(), field.k));
                for (int kk = 0; kk < field.k; ++kk)
                    (*g_scores)[field.slot(y, x, kk)] += gs[kk];
            }
        }
}

}  // namespace corrflow
