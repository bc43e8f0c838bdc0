#include "corrflow/gradcheck.hpp"

#include <cmath>
#include <stdexcept>

namespace corrflow {

real relative_error(real analytic, real numeric) {
    const real denom = std::max(real(1), std::max(std::fabs(analytic), std::fabs(numeric)));
    return std::fabs(analytic - numeric) / denom;
}

namespace {
real directional(const OpWithVjp& op, std::vector<real> point, std::size_t slot,
                 const std::vector<real>& cotangent, real epsilon) {
    const real saved = point[slot];
    point[slot] = saved + epsilon;
    const std::vector<real> hi = op.f(point);
    point[slot] = saved - epsilon;
    const std::vector<real> lo = op.f(point);
    point[slot] = saved;
    if (hi.size() != lo.size() || hi.size() != cotangent.size())
        throw ShapeError("grad_check: op output size changed between evaluations");
    real acc = 0;
    for (std::size_t j = 0; j < hi.size(); ++j)
        acc += cotangent[j] * (hi[j] - lo[j]) / (2 * epsilon);
    if (!std::isfinite(acc))
        throw std::runtime_error("grad_check: non-finite finite-difference value");
    return acc;
}
}  // namespace

real grad_check_slots(const OpWithVjp& op, const std::vector<real>& point,
                      const std::vector<real>& cotangent, real epsilon,
                      const std::vector<std::size_t>& slots) {
    const std::vector<real> analytic = op.vjp(point, cotangent);
    if (analytic.size() != point.size())
        throw ShapeError("grad_check: vjp returned wrong input-gradient size");
    real worst = 0;
    for (std::size_t slot : slots) {
        if (!std::isfinite(analytic[slot]))
            throw std::runtime_error("grad_check: non-finite analytic gradient");
        const real numeric = directional(op, point, slot, cotangent, epsilon);
        worst = std::max(worst, relative_error(analytic[slot], numeric));
    }
    return worst;
}

real grad_check(const OpWithVjp& op, const std::vector<real>& point,
                const std::vector<real>& cotangent, real epsilon) {
    std::vector<std::size_t> slots(point.size());
    for (std::size_t i = 0; i < slots.size(); ++i) slots[i] = i;
    return grad_check_slots(op, point, cotangent, epsilon, slots);
}

}  // namespace corrflow
