#include "bem/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "bem/error.hpp"

namespace bem {

std::string_view to_string(DType dtype) {
    return dtype == DType::F32 ? "f32" : "f64";
}

std::string shape_to_string(const Shape& shape) {
    std::ostringstream out;
    out << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) out << 'x';
        out << shape[i];
    }
    out << ']';
    return out.str();
}

std::size_t shape_numel(const Shape& shape) {
    std::size_t n = 1;
    for (auto d : shape) n *= d;
    return n;
}

namespace {

void validate_shape(const Shape& shape) {
    if (shape.empty()) throw DimensionError("tensor shape must have at least one dimension");
    for (auto d : shape) {
        if (d == 0) throw DimensionError("tensor dimensions must be positive, got " + shape_to_string(shape));
    }
}

}  // namespace

Tensor::Tensor(Shape shape, DType dtype) : shape_(std::move(shape)), dtype_(dtype) {
    validate_shape(shape_);
    data_.assign(shape_numel(shape_), 0.0);
}

Tensor::Tensor(Shape shape, std::vector<double> data, DType dtype)
    : shape_(std::move(shape)), data_(std::move(data)), dtype_(dtype) {
    validate_shape(shape_);
    if (data_.size() != shape_numel(shape_)) {
        throw DimensionError("data length " + std::to_string(data_.size()) + " does not match shape " +
                             shape_to_string(shape_));
    }
    publish("Tensor");
}

Tensor Tensor::zeros(Shape shape, DType dtype) { return Tensor(std::move(shape), dtype); }

Tensor Tensor::full(Shape shape, double value, DType dtype) {
    Tensor t(std::move(shape), dtype);
    std::fill(t.data_.begin(), t.data_.end(), value);
    t.publish("full");
    return t;
}

Tensor Tensor::scalar(double value, DType dtype) { return full({1}, value, dtype); }

std::size_t Tensor::dim(std::size_t i) const {
    if (i >= shape_.size()) {
        throw DimensionError("dimension index " + std::to_string(i) + " out of range for " + shape_to_string(shape_));
    }
    return shape_[i];
}

double Tensor::item() const {
    if (data_.size() != 1) throw DimensionError("item() on tensor of shape " + shape_to_string(shape_));
    return data_[0];
}

Tensor Tensor::to(DType dtype) const {
    Tensor out = *this;
    out.dtype_ = dtype;
    out.publish("to");
    return out;
}

Tensor Tensor::reshaped(Shape shape) const {
    if (shape_numel(shape) != numel()) {
        throw DimensionError("cannot reshape " + shape_to_string(shape_) + " to " + shape_to_string(shape));
    }
    Tensor out = *this;
    out.shape_ = std::move(shape);
    return out;
}

Tensor& Tensor::publish(std::string_view op) {
    if (dtype_ == DType::F32) {
        for (auto& v : data_) v = static_cast<double>(static_cast<float>(v));
    }
    if (!is_finite()) {
        throw NumericError(std::string(op) + " produced a non-finite value (shape " + shape_to_string(shape_) + ")");
    }
    return *this;
}

bool Tensor::is_finite() const noexcept {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

void expect_rank(const Tensor& t, std::size_t rank, std::string_view what) {
    if (t.rank() != rank) {
        throw DimensionError(std::string(what) + ": expected rank " + std::to_string(rank) + ", got " +
                             shape_to_string(t.shape()));
    }
}

void expect_same_shape(const Tensor& a, const Tensor& b, std::string_view what) {
    if (a.shape() != b.shape()) {
        throw DimensionError(std::string(what) + ": shape mismatch " + shape_to_string(a.shape()) + " vs " +
                             shape_to_string(b.shape()));
    }
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
    expect_same_shape(a, b, "max_abs_diff");
    double m = 0.0;
    for (std::size_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

}  // namespace bem
