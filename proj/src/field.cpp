#include "corrflow/field.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "corrflow/parallel.hpp"
#include "corrflow/sample.hpp"
#include "corrflow/similarity.hpp"

namespace corrflow {

CorrField::CorrField(int height, int width, int kk, int th, int tw)
    : h(height), w(width), k(kk), target_h(th), target_w(tw) {
    if (h <= 0 || w <= 0 || k <= 0 || th <= 0 || tw <= 0)
        throw ShapeError("CorrField: dims must be positive");
    coords.assign(slot_count() * 2, real(0));
    scores.assign(slot_count(), real(0));
}

void CorrField::validate() const {
    if (coords.size() != slot_count() * 2 || scores.size() != slot_count())
        throw ShapeError("CorrField: buffer sizes inconsistent");
    for (std::size_t s = 0; s < slot_count(); ++s) {
        const real x = cx(s), y = cy(s);
        if (!(x >= 0 && x <= target_w - 1 && y >= 0 && y <= target_h - 1))
            throw std::runtime_error("CorrField: coordinate (" + std::to_string((double)x) +
                                     "," + std::to_string((double)y) + ") outside target " +
                                     std::to_string(target_w) + "x" + std::to_string(target_h));
        if (!(scores[s] >= real(-1) - real(1e-9) && scores[s] <= real(1) + real(1e-9)))
            throw std::runtime_error("CorrField: score " +
                                     std::to_string((double)scores[s]) + " outside [-1,1]");
    }
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int kk = 0; kk + 1 < k; ++kk) {
                const std::size_t a = slot(y, x, kk), b = slot(y, x, kk + 1);
                if (scores[a] < scores[b])
                    throw std::runtime_error("CorrField: scores not sorted at (" +
                                             std::to_string(x) + "," + std::to_string(y) + ")");
            }
}

CorrField identity_field(int h, int w, int k, real score) {
    CorrField f(h, w, k, h, w);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int kk = 0; kk < k; ++kk) {
                const std::size_t s = f.slot(y, x, kk);
                f.set_coord(s, static_cast<real>(x), static_cast<real>(y));
                f.scores[s] = score;
            }
    return f;
}

CorrField upsample_field(const CorrField& coarse) {
    CorrField fine(coarse.h * 2, coarse.w * 2, coarse.k, coarse.target_h * 2,
                   coarse.target_w * 2);
    for (int y = 0; y < fine.h; ++y) {
        const int cy_ = y >> 1;
        const real sub_y = static_cast<real>(y & 1);
        for (int x = 0; x < fine.w; ++x) {
            const int cx_ = x >> 1;
            const real sub_x = static_cast<real>(x & 1);
            for (int kk = 0; kk < fine.k; ++kk) {
                const std::size_t cs = coarse.slot(cy_, cx_, kk);
                const std::size_t fs = fine.slot(y, x, kk);
                const real nx = std::clamp(2 * coarse.cx(cs) + sub_x, real(0),
                                           real(fine.target_w - 1));
                const real ny = std::clamp(2 * coarse.cy(cs) + sub_y, real(0),
                                           real(fine.target_h - 1));
                fine.set_coord(fs, nx, ny);
                fine.scores[fs] = coarse.scores[cs];
            }
        }
    }
    return fine;
}

namespace {
/// sort keys: score descending, then linear index of the coordinate.
struct SlotKey {
    real score;
    real linidx;
    int src;
    bool operator<(const SlotKey& o) const {
        if (score != o.score) return score > o.score;
        return linidx < o.linidx;
    }
};
}  // namespace

void rescore_field(CorrField& field, const Tensor& fx, const Tensor& fy) {
    if (fx.height() != field.h || fx.width() != field.w)
        throw ShapeError("rescore_field: field " + std::to_string(field.w) + "x" +
                         std::to_string(field.h) + " vs features " + fx.shape_str());
    if (fy.height() != field.target_h || fy.width() != field.target_w)
        throw ShapeError("rescore_field: target features " + fy.shape_str() +
                         " vs field target " + std::to_string(field.target_w) + "x" +
                         std::to_string(field.target_h));
    const int C = fx.channels();
    parallel_for(field.h, [&](int y) {
        std::vector<real> gathered(C);
        std::vector<SlotKey> keys(field.k);
        std::vector<real> cbuf(field.k * 2), sbuf(field.k);
        for (int x = 0; x < field.w; ++x) {
            for (int kk = 0; kk < field.k; ++kk) {
                const std::size_t s = field.slot(y, x, kk);
                bilinear_sample(fy, field.cx(s), field.cy(s), gathered);
                const real sc = cosine_similarity(
                    std::span<const real>(fx.row(y, x), C), gathered);
                keys[kk] = {sc, field.cy(s) * field.target_w + field.cx(s), kk};
            }
            std::sort(keys.begin(), keys.end());
            for (int kk = 0; kk < field.k; ++kk) {
                const std::size_t src = field.slot(y, x, keys[kk].src);
                cbuf[2 * kk] = field.cx(src);
                cbuf[2 * kk + 1] = field.cy(src);
                sbuf[kk] = keys[kk].score;
            }
            for (int kk = 0; kk < field.k; ++kk) {
                const std::size_t dst = field.slot(y, x, kk);
                field.set_coord(dst, cbuf[2 * kk], cbuf[2 * kk + 1]);
                field.scores[dst] = sbuf[kk];
            }
        }
    });
}

OffsetsScores offsets_scores(const CorrField& field, const Tensor& fx, const Tensor& fy) {
    if (fx.height() != field.h || fx.width() != field.w)
        throw ShapeError("offsets_scores: field vs fx shape mismatch, " + fx.shape_str());
    OffsetsScores out;
    out.offsets.h = field.h;
    out.offsets.w = field.w;
    out.offsets.k = field.k;
    out.offsets.offsets.assign(field.slot_count() * 2, real(0));
    out.scores.assign(field.slot_count(), real(0));
    const int C = fx.channels();
    parallel_for(field.h, [&](int y) {
        std::vector<real> gathered(C);
        for (int x = 0; x < field.w; ++x)
            for (int kk = 0; kk < field.k; ++kk) {
                const std::size_t s = field.slot(y, x, kk);
                out.offsets.offsets[2 * s] = field.cx(s) - static_cast<real>(x);
                out.offsets.offsets[2 * s + 1] = field.cy(s) - static_cast<real>(y);
                bilinear_sample(fy, field.cx(s), field.cy(s), gathered);
                out.scores[s] =
                    cosine_similarity(std::span<const real>(fx.row(y, x), C), gathered);
            }
    });
    return out;
}

}  // namespace corrflow
