#include "corrflow/adam.hpp"

#include <cmath>
#include <string>

namespace corrflow {

void adam_step(std::span<real> params, std::span<const real> grads, AdamState& state,
               const AdamConfig& cfg) {
    if (params.size() != grads.size())
        throw ShapeError("adam_step: params/grads size mismatch, " +
                         std::to_string(params.size()) + " vs " + std::to_string(grads.size()));
    if (state.m.size() != params.size())
        throw ShapeError("adam_step: state sized " + std::to_string(state.m.size()) +
                         " vs params " + std::to_string(params.size()));
    state.step += 1;
    const real bc1 = real(1) - std::pow(cfg.beta1, static_cast<real>(state.step));
    const real bc2 = real(1) - std::pow(cfg.beta2, static_cast<real>(state.step));
    for (std::size_t i = 0; i < params.size(); ++i) {
        state.m[i] = cfg.beta1 * state.m[i] + (real(1) - cfg.beta1) * grads[i];
        state.v[i] = cfg.beta2 * state.v[i] + (real(1) - cfg.beta2) * grads[i] * grads[i];
        const real mhat = state.m[i] / bc1;
        const real vhat = state.v[i] / bc2;
        params[i] -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
    }
}

}  // namespace corrflow
