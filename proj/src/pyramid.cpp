#include "corrflow/pyramid.hpp"

#include <cmath>
#include <string>

#include "corrflow/parallel.hpp"
#include "corrflow/sample.hpp"

namespace corrflow {

void Pyramid::validate() const {
    if (levels.empty()) throw ShapeError("Pyramid: no levels");
    for (std::size_t l = 1; l < levels.size(); ++l) {
        if (levels[l].height() != 2 * levels[l - 1].height() ||
            levels[l].width() != 2 * levels[l - 1].width())
            throw ShapeError("Pyramid: level " + std::to_string(l) + " is " +
                             levels[l].shape_str() + ", expected double of " +
                             levels[l - 1].shape_str());
        if (levels[l].channels() > levels[l - 1].channels())
            throw ShapeError("Pyramid: channel count increases at level " + std::to_string(l));
    }
}

std::vector<LevelShape> pyramid_level_shapes(int h, int w, int levels, int base_channels) {
    require_pyramid_compatible(h, w, levels, "pyramid_level_shapes");
    std::vector<LevelShape> out(levels);
    for (int l = 0; l < levels; ++l) {
        const int div = 1 << (levels - 1 - l);
        out[l] = {h / div, w / div, base_channels * div};
    }
    return out;
}

void require_pyramid_compatible(int h, int w, int levels, const char* where) {
    if (levels < 1) throw ShapeError(std::string(where) + ": need at least one level");
    const int div = 1 << (levels - 1);
    if (h % div != 0 || w % div != 0)
        throw ShapeError(std::string(where) + ": dims " + std::to_string(h) + "x" +
                         std::to_string(w) + " not divisible by 2^" +
                         std::to_string(levels - 1));
}

namespace {

/// RGB + Sobel x/y gradients of the luma-free per-channel image: 3 + 2
/// gradient planes (gradients of the channel mean), 5 planes total.
Tensor rgb_grad_planes(const Tensor& img) {
    const int h = img.height(), w = img.width();
    Tensor out(h, w, 5);
    auto clampi = [](int v, int lo, int hi) { return v < lo ? lo : (v > hi ? hi : v); };
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            real* dst = out.row(y, x);
            const real* src = img.row(y, x);
            for (int c = 0; c < 3; ++c) dst[c] = src[c];
            real gx = 0, gy = 0;
            for (int dy = -1; dy <= 1; ++dy)
                for (int dx = -1; dx <= 1; ++dx) {
                    const int yy = clampi(y + dy, 0, h - 1);
                    const int xx = clampi(x + dx, 0, w - 1);
                    real mean = 0;
                    const real* p = img.row(yy, xx);
                    for (int c = 0; c < 3; ++c) mean += p[c];
                    mean /= 3;
                    // Sobel weights
                    const int wx = dx * (dy == 0 ? 2 : 1);
                    const int wy = dy * (dx == 0 ? 2 : 1);
                    gx += wx * mean;
                    gy += wy * mean;
                }
            dst[3] = gx;
            dst[4] = gy;
        }
    return out;
}

Tensor patch_descriptors(const Tensor& planes, int radius) {
    const int h = planes.height(), w = planes.width();
    const int side = 2 * radius + 1;
    const int cp = planes.channels();
    Tensor out(h, w, cp * side * side);
    auto clampi = [](int v, int lo, int hi) { return v < lo ? lo : (v > hi ? hi : v); };
    parallel_for(h, [&](int y) {
        for (int x = 0; x < w; ++x) {
            real* dst = out.row(y, x);
            int slot = 0;
            for (int dy = -radius; dy <= radius; ++dy)
                for (int dx = -radius; dx <= radius; ++dx) {
                    const int yy = clampi(y + dy, 0, h - 1);
                    const int xx = clampi(x + dx, 0, w - 1);
                    const real* p = planes.row(yy, xx);
                    for (int c = 0; c < cp; ++c) dst[slot++] = p[c];
                }
        }
    });
    return out;
}

void standardize_channels(Tensor& t) {
    const std::size_t n = static_cast<std::size_t>(t.height()) * t.width();
    for (int c = 0; c < t.channels(); ++c) {
        real mean = 0;
        for (int y = 0; y < t.height(); ++y)
            for (int x = 0; x < t.width(); ++x) mean += t.at(y, x, c);
        mean /= static_cast<real>(n);
        real var = 0;
        for (int y = 0; y < t.height(); ++y)
            for (int x = 0; x < t.width(); ++x) {
                const real d = t.at(y, x, c) - mean;
                var += d * d;
            }
        var /= static_cast<real>(n);
        const real inv = real(1) / std::sqrt(var + real(1e-12));
        for (int y = 0; y < t.height(); ++y)
            for (int x = 0; x < t.width(); ++x) t.at(y, x, c) = (t.at(y, x, c) - mean) * inv;
    }
}

}  // namespace

Pyramid extract_pyramid_handcrafted(const Tensor& image, int levels, int patch_radius) {
    require_pyramid_compatible(image.height(), image.width(), levels, "extract_pyramid_handcrafted");
    // Image chain finest-to-coarsest by pooling, descriptors per level.
    std::vector<Tensor> chain(levels);
    chain[levels - 1] = image;
    for (int l = levels - 2; l >= 0; --l)
        chain[l] = resample2x(chain[l + 1], Resample::down);
    Pyramid pyr;
    pyr.levels.resize(levels);
    for (int l = 0; l < levels; ++l) {
        Tensor d = patch_descriptors(rgb_grad_planes(chain[l]), patch_radius);
        standardize_channels(d);
        pyr.levels[l] = std::move(d);
    }
    pyr.validate();
    return pyr;
}

real align_loss(const Pyramid& a, const Pyramid& b) {
    if (a.level_count() != b.level_count())
        throw ShapeError("align_loss: level counts differ, " + std::to_string(a.level_count()) +
                         " vs " + std::to_string(b.level_count()));
    real total = 0;
    for (int l = 0; l < a.level_count(); ++l) {
        require_same_shape(a.levels[l], b.levels[l], "align_loss");
        real acc = 0;
        for (std::size_t i = 0; i < a.levels[l].size(); ++i)
            acc += std::fabs(a.levels[l].values()[i] - b.levels[l].values()[i]);
        total += acc / static_cast<real>(a.levels[l].size());
    }
    return total;
}

std::vector<Tensor> align_loss_grad(const Pyramid& a, const Pyramid& b) {
    std::vector<Tensor> grads(a.level_count());
    for (int l = 0; l < a.level_count(); ++l) {
        require_same_shape(a.levels[l], b.levels[l], "align_loss_grad");
        const Tensor& al = a.levels[l];
        Tensor g(al.height(), al.width(), al.channels());
        const real inv = real(1) / static_cast<real>(al.size());
        for (std::size_t i = 0; i < al.size(); ++i) {
            const real d = al.values()[i] - b.levels[l].values()[i];
            g.values()[i] = d > 0 ? inv : (d < 0 ? -inv : real(0));
        }
        grads[l] = std::move(g);
    }
    return grads;
}

}  // namespace corrflow
