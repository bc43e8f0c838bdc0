#pragma once

#include <functional>
#include <vector>

#include "corrflow/tensor.hpp"

namespace corrflow {

/// A pure vector function together with its vector-Jacobian product:
/// vjp(x, g_out) must return g_x = J(x)^T g_out.
struct OpWithVjp {
    std::function<std::vector<real>(const std::vector<real>&)> f;
    std::function<std::vector<real>(const std::vector<real>&, const std::vector<real>&)> vjp;
};

/// rel = |a - n| / max(1, |a|, |n|)
real relative_error(real analytic, real numeric);

/// Compares the analytic VJP against central finite differences of f at
/// `point` for the given cotangent. Returns the max relative error over all
/// input slots. Throws on non-finite values.
real grad_check(const OpWithVjp& op, const std::vector<real>& point,
                const std::vector<real>& cotangent, real epsilon);

/// Same, but probes only the given input slots; used for expensive ops.
real grad_check_slots(const OpWithVjp& op, const std::vector<real>& point,
                      const std::vector<real>& cotangent, real epsilon,
                      const std::vector<std::size_t>& slots);

}  // namespace corrflow
