#include "corrflow/loss.hpp"

#include <cmath>

#include "corrflow/image.hpp"

namespace corrflow {

real corr_loss(const std::vector<WarpResult>& warps, const Tensor& target) {
    if (warps.empty()) throw ShapeError("corr_loss: no warped levels");
    real total = 0;
    for (const WarpResult& wr : warps) {
        const Tensor& w = wr.warped;
        if (w.channels() != target.channels())
            throw ShapeError("corr_loss: channel mismatch, " + w.shape_str() + " vs " +
                             target.shape_str());
        const Tensor t = downsample_to(target, w.height(), w.width());
        real acc = 0;
        for (std::size_t i = 0; i < w.size(); ++i)
            acc += std::fabs(w.values()[i] - t.values()[i]);
        total += acc / static_cast<real>(w.size());
    }
    return total;
}

std::vector<Tensor> corr_loss_grad(const std::vector<WarpResult>& warps,
                                   const Tensor& target) {
    std::vector<Tensor> grads;
    grads.reserve(warps.size());
    for (const WarpResult& wr : warps) {
        const Tensor& w = wr.warped;
        const Tensor t = downsample_to(target, w.height(), w.width());
        Tensor g(w.height(), w.width(), w.channels());
        const real inv = real(1) / static_cast<real>(w.size());
        for (std::size_t i = 0; i < w.size(); ++i) {
            const real d = w.values()[i] - t.values()[i];
            g.values()[i] = d > 0 ? inv : (d < 0 ? -inv : real(0));
        }
        grads.push_back(std::move(g));
    }
    return grads;
}

}  // namespace corrflow
