#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "errors.hpp"

namespace scseg {

int64_t shape_numel(const std::vector<int64_t>& shape);
std::string shape_to_string(const std::vector<int64_t>& shape);

// Dense row-major tensor of 64-bit floats. Feature maps follow the
// (batch N, channels C, height H, width W) axis order throughout; any other
// layout is converted at I/O boundaries.
class Tensor {
public:
    Tensor() = default; // empty tensor (no shape, no data)

    explicit Tensor(std::vector<int64_t> shape)
        : shape_(std::move(shape)), data_(size_t(checked_numel(shape_)), 0.0) {}

    Tensor(std::vector<int64_t> shape, std::vector<double> data)
        : shape_(std::move(shape)), data_(std::move(data)) {
        if (int64_t(data_.size()) != checked_numel(shape_))
            throw ShapeError("tensor data length " + std::to_string(data_.size()) +
                             " does not match shape " + shape_to_string(shape_));
    }

    static Tensor full(std::vector<int64_t> shape, double value) {
        Tensor t(std::move(shape));
        for (double& v : t.data_) v = value;
        return t;
    }

    static Tensor scalar(double value) { return Tensor({}, {value}); }

    bool empty() const { return shape_.empty() && data_.empty(); }
    int rank() const { return int(shape_.size()); }
    const std::vector<int64_t>& shape() const { return shape_; }
    int64_t extent(int axis) const { return shape_[size_t(axis)]; }
    int64_t numel() const { return int64_t(data_.size()); }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }

    double& operator[](int64_t i) { return data_[size_t(i)]; }
    double operator[](int64_t i) const { return data_[size_t(i)]; }

    double& at2(int64_t i, int64_t j) { return data_[size_t(i * shape_[1] + j)]; }
    double at2(int64_t i, int64_t j) const { return data_[size_t(i * shape_[1] + j)]; }

    double& at4(int64_t n, int64_t c, int64_t h, int64_t w) {
        return data_[size_t(((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w)];
    }
    double at4(int64_t n, int64_t c, int64_t h, int64_t w) const {
        return data_[size_t(((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w)];
    }

    bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

private:
    static int64_t checked_numel(const std::vector<int64_t>& shape);

    std::vector<int64_t> shape_;
    std::vector<double> data_;
};

// Dense row-major tensor of u32. Carries label maps and pooling indices.
class IntTensor {
public:
    IntTensor() = default;

    explicit IntTensor(std::vector<int64_t> shape);
    IntTensor(std::vector<int64_t> shape, std::vector<uint32_t> data);

    bool empty() const { return shape_.empty() && data_.empty(); }
    int rank() const { return int(shape_.size()); }
    const std::vector<int64_t>& shape() const { return shape_; }
    int64_t extent(int axis) const { return shape_[size_t(axis)]; }
    int64_t numel() const { return int64_t(data_.size()); }

    uint32_t* data() { return data_.data(); }
    const uint32_t* data() const { return data_.data(); }

    uint32_t& operator[](int64_t i) { return data_[size_t(i)]; }
    uint32_t operator[](int64_t i) const { return data_[size_t(i)]; }

    bool same_shape(const IntTensor& o) const { return shape_ == o.shape_; }

private:
    std::vector<int64_t> shape_;
    std::vector<uint32_t> data_;
};

// Max-abs difference; tensors must have equal shapes.
double max_abs_diff(const Tensor& a, const Tensor& b);

bool bitwise_equal(const Tensor& a, const Tensor& b);

} // namespace scseg
