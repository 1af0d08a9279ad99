#include "faithlab/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "faithlab/error.hpp"

namespace faithlab {

std::size_t shape_size(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_string(const Shape& shape) {
    std::string out = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) out += ",";
        out += std::to_string(shape[i]);
    }
    return out + "]";
}

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)), data_(shape_size(shape_), fill) {
    if (std::any_of(shape_.begin(), shape_.end(), [](std::size_t d) { return d == 0; })) {
        throw data_error("tensor shape " + shape_string(shape_) + " has a zero dimension");
    }
}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (shape_size(shape_) != data_.size()) {
        throw data_error("tensor shape " + shape_string(shape_) + " does not match " +
                         std::to_string(data_.size()) + " values");
    }
}

Tensor Tensor::reshaped(Shape shape) const {
    return Tensor(std::move(shape), data_);
}

bool Tensor::all_finite() const noexcept {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

SpatialLayout spatial_layout(const Shape& shape) {
    switch (shape.size()) {
    case 1:
        return {1, 1, shape[0]};
    case 2:
        return {1, shape[0], shape[1]};
    case 3:
        return {shape[0], shape[1], shape[2]};
    default:
        throw data_error("unsupported input rank for spatial layout: " + shape_string(shape));
    }
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) throw data_error("max_abs_diff: shape mismatch");
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

}  // namespace faithlab
