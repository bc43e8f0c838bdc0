#pragma once

#include <vector>

#include "corrflow/tensor.hpp"

namespace corrflow {

/// Per-position list of K continuous target coordinates with matching
/// scores, sorted per position by score descending, ties broken by the
/// smaller linear index (y * W_target + x) of the coordinate.
struct CorrField {
    int h = 0, w = 0, k = 0;
    int target_h = 0, target_w = 0;     // bounds coordinates are clamped to
    std::vector<real> coords;           // h*w*k pairs, x then y
    std::vector<real> scores;           // h*w*k

    CorrField() = default;
    CorrField(int height, int width, int kk, int th, int tw);

    std::size_t slot(int y, int x, int kk) const {
        return (static_cast<std::size_t>(y) * w + x) * k + kk;
    }
    real cx(std::size_t s) const { return coords[2 * s]; }
    real cy(std::size_t s) const { return coords[2 * s + 1]; }
    void set_coord(std::size_t s, real x, real y) {
        coords[2 * s] = x;
        coords[2 * s + 1] = y;
    }

    std::size_t slot_count() const { return static_cast<std::size_t>(h) * w * k; }

    /// Enforces the bounds / score-range / sortedness invariants;
    /// throws with a description of the first violation.
    void validate() const;
};

/// Identity field: every position matches itself with the given score.
CorrField identity_field(int h, int w, int k, real score = real(1));

/// Seeds each coarse position's four children: the child coordinate is
/// 2 * coarse + child subpixel offset (equivalently, offsets double).
/// Scores are copied and must be recomputed at the fine level before use.
CorrField upsample_field(const CorrField& coarse);

/// Recomputes all scores as cos(fx(p), fy at the stored coordinates) with
/// bilinear lookup and re-sorts each position's slots.
void rescore_field(CorrField& field, const Tensor& fx, const Tensor& fy);

/// Offsets O(p,k) = H(p,k) - p plus freshly recomputed scores.
struct OffsetField {
    int h = 0, w = 0, k = 0;
    std::vector<real> offsets;  // h*w*k pairs, dx then dy
};
struct OffsetsScores {
    OffsetField offsets;
    std::vector<real> scores;  // h*w*k
};
OffsetsScores offsets_scores(const CorrField& field, const Tensor& fx, const Tensor& fy);

}  // namespace corrflow
