#include "corrflow/tensor.hpp"

#include <cmath>
#include <sstream>

namespace corrflow {

Tensor::Tensor(int height, int width, int channels, real fill)
    : h_(height), w_(width), c_(channels) {
    if (height <= 0 || width <= 0 || channels <= 0) {
        throw ShapeError("Tensor dims must be positive, got " +
                         std::to_string(height) + "x" + std::to_string(width) +
                         "x" + std::to_string(channels));
    }
    data_.assign(static_cast<std::size_t>(height) * width * channels, fill);
}

std::string Tensor::shape_str() const {
    std::ostringstream os;
    os << h_ << "x" << w_ << "x" << c_;
    return os.str();
}

bool Tensor::all_finite() const {
    for (real v : data_)
        if (!std::isfinite(v)) return false;
    return true;
}

Tensor concat_channels(const Tensor& a, const Tensor& b) {
    if (a.height() != b.height() || a.width() != b.width()) {
        throw ShapeError("concat_channels: spatial dims differ, " + a.shape_str() +
                         " vs " + b.shape_str());
    }
    Tensor out(a.height(), a.width(), a.channels() + b.channels());
    for (int y = 0; y < a.height(); ++y) {
        for (int x = 0; x < a.width(); ++x) {
            real* dst = out.row(y, x);
            const real* pa = a.row(y, x);
            const real* pb = b.row(y, x);
            for (int c = 0; c < a.channels(); ++c) dst[c] = pa[c];
            for (int c = 0; c < b.channels(); ++c) dst[a.channels() + c] = pb[c];
        }
    }
    return out;
}

void split_channels(const Tensor& g, Tensor& ga, Tensor& gb) {
    if (g.channels() != ga.channels() + gb.channels() ||
        g.height() != ga.height() || g.width() != ga.width()) {
        throw ShapeError("split_channels: " + g.shape_str() + " cannot split into " +
                         ga.shape_str() + " + " + gb.shape_str());
    }
    for (int y = 0; y < g.height(); ++y) {
        for (int x = 0; x < g.width(); ++x) {
            const real* src = g.row(y, x);
            real* pa = ga.row(y, x);
            real* pb = gb.row(y, x);
            for (int c = 0; c < ga.channels(); ++c) pa[c] += src[c];
            for (int c = 0; c < gb.channels(); ++c) pb[c] += src[ga.channels() + c];
        }
    }
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* where) {
    if (!a.same_shape(b)) {
        throw ShapeError(std::string(where) + ": shape mismatch, " + a.shape_str() +
                         " vs " + b.shape_str());
    }
}

}  // namespace corrflow
