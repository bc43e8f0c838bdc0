#include "corrflow/rng.hpp"

#include <cmath>

namespace corrflow {

double Rng::normal(double mean, double stddev) {
    // Box-Muller, discarding the second deviate keeps the stream position
    // a simple function of call count.
    double u1 = unit();
    double u2 = unit();
    while (u1 <= 0.0) u1 = unit();
    double z = std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
    return mean + stddev * z;
}

void Rng::fill_uniform(Tensor& t, double lo, double hi) {
    for (real& v : t.values()) v = static_cast<real>(uniform(lo, hi));
}

void Rng::fill_normal(Tensor& t, double mean, double stddev) {
    for (real& v : t.values()) v = static_cast<real>(normal(mean, stddev));
}

}  // namespace corrflow
