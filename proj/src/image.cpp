#include "corrflow/image.hpp"

#include <cmath>
#include <string>

#include "corrflow/rng.hpp"
#include "corrflow/sample.hpp"

namespace corrflow {

void require_rgb01(const Tensor& img, const char* where) {
    if (img.channels() != 3)
        throw ShapeError(std::string(where) + ": expected 3 channels, got " + img.shape_str());
    for (real v : img.values())
        if (!(v >= real(0) && v <= real(1)))
            throw std::invalid_argument(std::string(where) + ": pixel value " +
                                        std::to_string(static_cast<double>(v)) +
                                        " outside [0,1]");
}

real psnr(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "psnr");
    real mse = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const real d = a.values()[i] - b.values()[i];
        mse += d * d;
    }
    mse /= static_cast<real>(a.size());
    if (mse <= real(0)) return real(99);
    return real(10) * std::log10(real(1) / mse);
}

Tensor downsample_to(const Tensor& img, int target_h, int target_w) {
    Tensor cur = img;
    while (cur.height() > target_h || cur.width() > target_w)
        cur = resample2x(cur, Resample::down);
    if (cur.height() != target_h || cur.width() != target_w)
        throw ShapeError("downsample_to: " + img.shape_str() + " cannot reach " +
                         std::to_string(target_h) + "x" + std::to_string(target_w) +
                         " by 2x pooling");
    return cur;
}

ImageRGB make_smooth_image(int h, int w, unsigned long long seed, int blobs) {
    Rng rng(seed);
    Tensor img(h, w, 3);
    // gradient base so even blob-free regions carry signal
    real gx[3], gy[3], base[3];
    for (int c = 0; c < 3; ++c) {
        base[c] = static_cast<real>(rng.uniform(0.3, 0.7));
        gx[c] = static_cast<real>(rng.uniform(-0.2, 0.2));
        gy[c] = static_cast<real>(rng.uniform(-0.2, 0.2));
    }
    struct Blob {
        real cx, cy, sigma, amp[3];
    };
    std::vector<Blob> bs(blobs);
    for (Blob& b : bs) {
        b.cx = static_cast<real>(rng.uniform(0, w - 1));
        b.cy = static_cast<real>(rng.uniform(0, h - 1));
        b.sigma = static_cast<real>(rng.uniform(0.05, 0.25)) * std::min(h, w);
        for (int c = 0; c < 3; ++c) b.amp[c] = static_cast<real>(rng.uniform(-0.35, 0.35));
    }
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < 3; ++c) {
                real v = base[c] + gx[c] * (real(x) / w - real(0.5)) +
                         gy[c] * (real(y) / h - real(0.5));
                for (const Blob& b : bs) {
                    const real dx = (x - b.cx) / b.sigma;
                    const real dy = (y - b.cy) / b.sigma;
                    v += b.amp[c] * std::exp(-(dx * dx + dy * dy));
                }
                img.at(y, x, c) = std::min(real(1), std::max(real(0), v));
            }
    return img;
}

ImageRGB make_noise_image(int h, int w, unsigned long long seed, int blur_passes) {
    Rng rng(seed);
    Tensor img(h, w, 3);
    rng.fill_uniform(img, 0.0, 1.0);
    for (int pass = 0; pass < blur_passes; ++pass) {
        Tensor blurred(h, w, 3);
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x)
                for (int c = 0; c < 3; ++c) {
                    real acc = 0;
                    for (int dy = -1; dy <= 1; ++dy)
                        for (int dx = -1; dx <= 1; ++dx) {
                            int yy = std::min(h - 1, std::max(0, y + dy));
                            int xx = std::min(w - 1, std::max(0, x + dx));
                            acc += img.at(yy, xx, c);
                        }
                    blurred.at(y, x, c) = acc / 9;
                }
        img = blurred;
    }
    return img;
}

Tensor circular_shift(const Tensor& img, int dx, int dy) {
    Tensor out(img.height(), img.width(), img.channels());
    for (int y = 0; y < img.height(); ++y) {
        const int sy = ((y - dy) % img.height() + img.height()) % img.height();
        for (int x = 0; x < img.width(); ++x) {
            const int sx = ((x - dx) % img.width() + img.width()) % img.width();
            const real* src = img.row(sy, sx);
            real* dst = out.row(y, x);
            for (int c = 0; c < img.channels(); ++c) dst[c] = src[c];
        }
    }
    return out;
}

}  // namespace corrflow
