#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace corrflow {

#ifdef CORRFLOW_SINGLE_PRECISION
using real = float;
#else
using real = double;
#endif

/// Thrown when tensor/parameter shapes do not line up. The message names
/// both shapes involved.
class ShapeError : public std::runtime_error {
public:
    explicit ShapeError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Dense H x W x C grid, row-major with channels fastest. The universal
/// carrier for images, feature maps and hidden states. Values are expected
/// to stay finite; ops that can produce non-finite values guard for it.
class Tensor {
public:
    Tensor() = default;
    Tensor(int height, int width, int channels, real fill = real(0));

    int height() const { return h_; }
    int width() const { return w_; }
    int channels() const { return c_; }
    std::size_t size() const { return data_.size(); }

    real& at(int y, int x, int c) { return data_[idx(y, x, c)]; }
    real at(int y, int x, int c) const { return data_[idx(y, x, c)]; }
    real* row(int y, int x) { return data_.data() + idx(y, x, 0); }
    const real* row(int y, int x) const { return data_.data() + idx(y, x, 0); }

    real* data() { return data_.data(); }
    const real* data() const { return data_.data(); }
    std::vector<real>& values() { return data_; }
    const std::vector<real>& values() const { return data_; }

    bool same_shape(const Tensor& o) const {
        return h_ == o.h_ && w_ == o.w_ && c_ == o.c_;
    }
    std::string shape_str() const;

    bool all_finite() const;

    std::size_t idx(int y, int x, int c) const {
        return (static_cast<std::size_t>(y) * w_ + x) * c_ + c;
    }

private:
    int h_ = 0, w_ = 0, c_ = 0;
    std::vector<real> data_;
};

/// Channel-wise concatenation of two maps with equal spatial dims.
Tensor concat_channels(const Tensor& a, const Tensor& b);
/// Inverse of concat_channels: writes gradients back into the two halves.
void split_channels(const Tensor& g, Tensor& ga, Tensor& gb);

void require_same_shape(const Tensor& a, const Tensor& b, const char* where);

}  // namespace corrflow
