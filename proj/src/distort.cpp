#include "corrflow/distort.hpp"

#include <cmath>
#include <string>

#include "corrflow/parallel.hpp"
#include "corrflow/rng.hpp"
#include "corrflow/sample.hpp"

namespace corrflow {

DistortionSpec DistortionSpec::identity() { return DistortionSpec{}; }

DistortionSpec DistortionSpec::translation(real dx, real dy) {
    DistortionSpec s;
    s.affine = {1, 0, dx, 0, 1, dy};
    return s;
}

DistortionSpec DistortionSpec::random(unsigned long long seed, int h, int w, real max_frac,
                                      bool with_tps) {
    Rng rng(seed);
    DistortionSpec s;
    s.seed = seed;
    s.max_disp_frac = max_frac;
    const real side = static_cast<real>(std::min(h, w));
    const real cx = real(0.5) * (w - 1), cy = real(0.5) * (h - 1);
    // rotation + isotropic scale about the image center, plus translation;
    // parameter ranges keep corner displacements within max_frac * side
    const real theta = static_cast<real>(rng.uniform(-0.5, 0.5)) * max_frac;
    const real scale = real(1) + static_cast<real>(rng.uniform(-0.25, 0.25)) * max_frac;
    const real tx = static_cast<real>(rng.uniform(-0.35, 0.35)) * max_frac * side;
    const real ty = static_cast<real>(rng.uniform(-0.35, 0.35)) * max_frac * side;
    const real ca = scale * std::cos(theta), sa = scale * std::sin(theta);
    s.affine = {ca, -sa, cx - ca * cx + sa * cy + tx,
                sa, ca,  cy - sa * cx - ca * cy + ty};
    if (with_tps) {
        const real amp = real(0.3) * max_frac * side;
        for (int gy = 0; gy < 3; ++gy)
            for (int gx = 0; gx < 3; ++gx) {
                s.tps_points.push_back(static_cast<real>(gx) * (w - 1) / 2);
                s.tps_points.push_back(static_cast<real>(gy) * (h - 1) / 2);
                s.tps_disp.push_back(static_cast<real>(rng.uniform(-1, 1)) * amp);
                s.tps_disp.push_back(static_cast<real>(rng.uniform(-1, 1)) * amp);
            }
    }
    return s;
}

void DistortionSpec::validate(int h, int w) const {
    if (std::fabs(det()) < real(1e-9))
        throw std::invalid_argument("DistortionSpec: non-invertible affine, det=" +
                                    std::to_string(static_cast<double>(det())));
    if (tps_points.size() != tps_disp.size() || tps_points.size() % 2 != 0)
        throw ShapeError("DistortionSpec: control point / displacement sizes mismatch");
    const real bound = max_disp_frac * static_cast<real>(std::min(h, w));
    for (std::size_t i = 0; i + 1 < tps_disp.size(); i += 2) {
        const real mag = std::hypot(tps_disp[i], tps_disp[i + 1]);
        if (mag > bound)
            throw std::invalid_argument("DistortionSpec: displacement " +
                                        std::to_string(static_cast<double>(mag)) +
                                        " exceeds bound " +
                                        std::to_string(static_cast<double>(bound)));
    }
}

namespace {

real tps_kernel(real r2) {
    if (r2 <= real(0)) return 0;
    return r2 * real(0.5) * std::log(r2);  // r^2 log r
}

/// Thin-plate interpolation of the control displacements: solves the
/// standard TPS system once, then evaluates a0 + a1 x + a2 y + sum w_i phi.
class TpsModel {
public:
    explicit TpsModel(const DistortionSpec& spec) {
        n_ = static_cast<int>(spec.tps_points.size() / 2);
        if (n_ == 0) return;
        pts_ = spec.tps_points;
        const int m = n_ + 3;
        // one system matrix, two right-hand sides (dx, dy)
        std::vector<real> a(static_cast<std::size_t>(m) * m, real(0));
        std::vector<real> rhs(static_cast<std::size_t>(m) * 2, real(0));
        for (int i = 0; i < n_; ++i) {
            for (int j = 0; j < n_; ++j) {
                const real dx = pts_[2 * i] - pts_[2 * j];
                const real dy = pts_[2 * i + 1] - pts_[2 * j + 1];
                a[i * m + j] = tps_kernel(dx * dx + dy * dy);
            }
            a[i * m + n_] = 1;
            a[i * m + n_ + 1] = pts_[2 * i];
            a[i * m + n_ + 2] = pts_[2 * i + 1];
            a[(n_)*m + i] = 1;
            a[(n_ + 1) * m + i] = pts_[2 * i];
            a[(n_ + 2) * m + i] = pts_[2 * i + 1];
            rhs[i * 2] = spec.tps_disp[2 * i];
            rhs[i * 2 + 1] = spec.tps_disp[2 * i + 1];
        }
        // Gaussian elimination with partial pivoting
        std::vector<int> piv(m);
        for (int i = 0; i < m; ++i) piv[i] = i;
        for (int col = 0; col < m; ++col) {
            int best = col;
            for (int r = col + 1; r < m; ++r)
                if (std::fabs(a[r * m + col]) > std::fabs(a[best * m + col])) best = r;
            if (std::fabs(a[best * m + col]) < real(1e-12))
                throw std::runtime_error("DistortionSpec: degenerate TPS control points");
            if (best != col) {
                for (int c = 0; c < m; ++c) std::swap(a[col * m + c], a[best * m + c]);
                std::swap(rhs[col * 2], rhs[best * 2]);
                std::swap(rhs[col * 2 + 1], rhs[best * 2 + 1]);
            }
            const real inv = real(1) / a[col * m + col];
            for (int r = col + 1; r < m; ++r) {
                const real f = a[r * m + col] * inv;
                if (f == real(0)) continue;
                for (int c = col; c < m; ++c) a[r * m + c] -= f * a[col * m + c];
                rhs[r * 2] -= f * rhs[col * 2];
                rhs[r * 2 + 1] -= f * rhs[col * 2 + 1];
            }
        }
        coef_.assign(static_cast<std::size_t>(m) * 2, real(0));
        for (int r = m - 1; r >= 0; --r) {
            real sx = rhs[r * 2], sy = rhs[r * 2 + 1];
            for (int c = r + 1; c < m; ++c) {
                sx -= a[r * m + c] * coef_[c * 2];
                sy -= a[r * m + c] * coef_[c * 2 + 1];
            }
            const real inv = real(1) / a[r * m + r];
            coef_[r * 2] = sx * inv;
            coef_[r * 2 + 1] = sy * inv;
        }
    }

    bool active() const { return n_ > 0; }

    void displacement(real x, real y, real& dx, real& dy) const {
        dx = dy = 0;
        if (n_ == 0) return;
        dx = coef_[n_ * 2] + coef_[(n_ + 1) * 2] * x + coef_[(n_ + 2) * 2] * y;
        dy = coef_[n_ * 2 + 1] + coef_[(n_ + 1) * 2 + 1] * x + coef_[(n_ + 2) * 2 + 1] * y;
        for (int i = 0; i < n_; ++i) {
            const real ddx = x - pts_[2 * i];
            const real ddy = y - pts_[2 * i + 1];
            const real k = tps_kernel(ddx * ddx + ddy * ddy);
            dx += coef_[i * 2] * k;
            dy += coef_[i * 2 + 1] * k;
        }
    }

private:
    int n_ = 0;
    std::vector<real> pts_;
    std::vector<real> coef_;
};

struct DistortionMap {
    const DistortionSpec& spec;
    TpsModel tps;

    explicit DistortionMap(const DistortionSpec& s) : spec(s), tps(s) {}

    void apply(real x, real y, real& sx, real& sy) const {
        sx = spec.affine[0] * x + spec.affine[1] * y + spec.affine[2];
        sy = spec.affine[3] * x + spec.affine[4] * y + spec.affine[5];
        if (tps.active()) {
            real dx, dy;
            tps.displacement(x, y, dx, dy);
            sx += dx;
            sy += dy;
        }
    }

    void invert(real px, real py, real& ix, real& iy) const {
        // exact affine inverse as the starting point
        const real d = spec.det();
        const real rx = px - spec.affine[2], ry = py - spec.affine[5];
        ix = (spec.affine[4] * rx - spec.affine[1] * ry) / d;
        iy = (-spec.affine[3] * rx + spec.affine[0] * ry) / d;
        if (!tps.active()) return;
        for (int it = 0; it < 30; ++it) {
            real fx, fy;
            apply(ix, iy, fx, fy);
            ix -= fx - px;
            iy -= fy - py;
        }
    }
};

}  // namespace

void distortion_apply(const DistortionSpec& spec, real x, real y, real& sx, real& sy) {
    DistortionMap(spec).apply(x, y, sx, sy);
}

void distortion_invert(const DistortionSpec& spec, real x, real y, real& ix, real& iy) {
    DistortionMap(spec).invert(x, y, ix, iy);
}

PseudoExemplar make_pseudo_exemplar(const Tensor& image, const DistortionSpec& spec) {
    spec.validate(image.height(), image.width());
    const DistortionMap map(spec);
    const int h = image.height(), w = image.width();
    PseudoExemplar out;
    out.image = Tensor(h, w, image.channels());
    out.gt_field = CorrField(h, w, 1, h, w);
    parallel_for(h, [&](int y) {
        for (int x = 0; x < w; ++x) {
            real sx, sy;
            map.apply(static_cast<real>(x), static_cast<real>(y), sx, sy);
            bilinear_sample(image, sx, sy,
                            std::span<real>(out.image.row(y, x), image.channels()));
            real ix, iy;
            map.invert(static_cast<real>(x), static_cast<real>(y), ix, iy);
            const std::size_t s = out.gt_field.slot(y, x, 0);
            out.gt_field.set_coord(s, std::clamp(ix, real(0), real(w - 1)),
                                   std::clamp(iy, real(0), real(h - 1)));
            out.gt_field.scores[s] = real(1);
        }
    });
    return out;
}

}  // namespace corrflow
