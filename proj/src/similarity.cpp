#include "corrflow/similarity.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace corrflow {

namespace {
void require_equal_length(std::size_t a, std::size_t b, const char* where) {
    if (a != b)
        throw ShapeError(std::string(where) + ": vector lengths differ, " +
                         std::to_string(a) + " vs " + std::to_string(b));
}
}  // namespace

real cosine_similarity(std::span<const real> a, std::span<const real> b) {
    require_equal_length(a.size(), b.size(), "cosine_similarity");
    real dot = 0, na = 0, nb = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    na = std::sqrt(na);
    nb = std::sqrt(nb);
    if (na < kCosineNormFloor || nb < kCosineNormFloor) return 0;
    return dot / (na * nb);
}

void cosine_similarity_vjp(std::span<const real> a, std::span<const real> b, real g,
                           std::span<real> ga, std::span<real> gb) {
    require_equal_length(a.size(), b.size(), "cosine_similarity_vjp");
    real dot = 0, na2 = 0, nb2 = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        dot += a[i] * b[i];
        na2 += a[i] * a[i];
        nb2 += b[i] * b[i];
    }
    const real na = std::sqrt(na2);
    const real nb = std::sqrt(nb2);
    if (na < kCosineNormFloor || nb < kCosineNormFloor) return;
    const real inv = real(1) / (na * nb);
    const real c = dot * inv;
    // d cos / d a_i = b_i/(|a||b|) - cos * a_i/|a|^2
    for (std::size_t i = 0; i < a.size(); ++i) {
        ga[i] += g * (b[i] * inv - c * a[i] / na2);
        gb[i] += g * (a[i] * inv - c * b[i] / nb2);
    }
}

std::vector<real> softmax_weights(std::span<const real> scores, real temperature) {
    if (scores.empty()) throw ShapeError("softmax_weights: empty score vector");
    if (!(temperature > 0))
        throw std::invalid_argument("softmax_weights: temperature must be positive, got " +
                                    std::to_string(temperature));
    const real m = *std::max_element(scores.begin(), scores.end());
    std::vector<real> w(scores.size());
    real sum = 0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        w[i] = std::exp((scores[i] - m) / temperature);
        sum += w[i];
    }
    for (real& v : w) v /= sum;
    return w;
}

void softmax_weights_vjp(std::span<const real> weights, real temperature,
                         std::span<const real> g_weights, std::span<real> g_scores) {
    require_equal_length(weights.size(), g_weights.size(), "softmax_weights_vjp");
    real dot = 0;
    for (std::size_t i = 0; i < weights.size(); ++i) dot += g_weights[i] * weights[i];
    const real inv_t = real(1) / temperature;
    for (std::size_t i = 0; i < weights.size(); ++i)
        g_scores[i] += weights[i] * (g_weights[i] - dot) * inv_t;
}

}  // namespace corrflow
