#include "tensor.hpp"

#include <cmath>
#include <cstring>

namespace scseg {

int64_t shape_numel(const std::vector<int64_t>& shape) {
    int64_t n = 1;
    for (int64_t e : shape) n *= e;
    return n;
}

std::string shape_to_string(const std::vector<int64_t>& shape) {
    std::string s = "(";
    for (size_t i = 0; i < shape.size(); ++i) {
        if (i) s += ",";
        s += std::to_string(shape[i]);
    }
    s += ")";
    return s;
}

int64_t Tensor::checked_numel(const std::vector<int64_t>& shape) {
    for (int64_t e : shape) {
        if (e < 1)
            throw ShapeError("tensor extents must be >= 1, got shape " + shape_to_string(shape));
    }
    return shape_numel(shape);
}

IntTensor::IntTensor(std::vector<int64_t> shape) : shape_(std::move(shape)) {
    for (int64_t e : shape_) {
        if (e < 1)
            throw ShapeError("tensor extents must be >= 1, got shape " + shape_to_string(shape_));
    }
    data_.assign(size_t(shape_numel(shape_)), 0u);
}

IntTensor::IntTensor(std::vector<int64_t> shape, std::vector<uint32_t> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
    for (int64_t e : shape_) {
        if (e < 1)
            throw ShapeError("tensor extents must be >= 1, got shape " + shape_to_string(shape_));
    }
    if (int64_t(data_.size()) != shape_numel(shape_))
        throw ShapeError("tensor data length " + std::to_string(data_.size()) +
                         " does not match shape " + shape_to_string(shape_));
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
    if (!a.same_shape(b))
        throw ShapeError("max_abs_diff: shapes differ, " + shape_to_string(a.shape()) + " vs " +
                         shape_to_string(b.shape()));
    double m = 0.0;
    for (int64_t i = 0; i < a.numel(); ++i) m = std::max(m, std::fabs(a[i] - b[i]));
    return m;
}

bool bitwise_equal(const Tensor& a, const Tensor& b) {
    if (!a.same_shape(b)) return false;
    if (a.numel() == 0) return true;
    return std::memcmp(a.data(), b.data(), size_t(a.numel()) * sizeof(double)) == 0;
}

} // namespace scseg
