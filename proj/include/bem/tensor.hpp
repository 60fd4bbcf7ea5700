#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace bem {

using Shape = std::vector<std::size_t>;

// Storage precision. Values are always held as doubles; F32 tensors are
// rounded to single precision whenever an operation publishes them, so their
// contents are exactly representable as float.
enum class DType : std::uint8_t { F32 = 1, F64 = 2 };

// Result precision of an operation over operands of precision a and b.
constexpr DType narrowest(DType a, DType b) {
    return (a == DType::F32 || b == DType::F32) ? DType::F32 : DType::F64;
}

std::string_view to_string(DType dtype);
std::string shape_to_string(const Shape& shape);
std::size_t shape_numel(const Shape& shape);

// Dense row-major array with shape metadata.
//
// Invariants: every dimension is positive and data().size() == numel().
// Public operations call publish() on their results, which rounds to the
// storage precision and throws NumericError on NaN/Inf.
class Tensor {
  public:
    Tensor() = default;
    explicit Tensor(Shape shape, DType dtype = DType::F64);
    Tensor(Shape shape, std::vector<double> data, DType dtype = DType::F64);

    static Tensor zeros(Shape shape, DType dtype = DType::F64);
    static Tensor full(Shape shape, double value, DType dtype = DType::F64);
    static Tensor scalar(double value, DType dtype = DType::F64);

    const Shape& shape() const noexcept { return shape_; }
    std::size_t rank() const noexcept { return shape_.size(); }
    std::size_t dim(std::size_t i) const;
    std::size_t numel() const noexcept { return data_.size(); }
    bool empty() const noexcept { return shape_.empty(); }
    DType dtype() const noexcept { return dtype_; }

    bool requires_grad() const noexcept { return requires_grad_; }
    Tensor& set_requires_grad(bool flag) noexcept {
        requires_grad_ = flag;
        return *this;
    }

    std::span<double> data() noexcept { return data_; }
    std::span<const double> data() const noexcept { return data_; }
    double& operator[](std::size_t i) noexcept { return data_[i]; }
    double operator[](std::size_t i) const noexcept { return data_[i]; }

    // Element access for C x H x W tensors.
    double& at(std::size_t c, std::size_t h, std::size_t w) noexcept {
        return data_[(c * shape_[1] + h) * shape_[2] + w];
    }
    double at(std::size_t c, std::size_t h, std::size_t w) const noexcept {
        return data_[(c * shape_[1] + h) * shape_[2] + w];
    }

    // Scalar value of a single-element tensor.
    double item() const;

    // Same data under a different precision (rounded when narrowing).
    Tensor to(DType dtype) const;

    // Same data, new shape with equal element count.
    Tensor reshaped(Shape shape) const;

    // Rounds to the storage precision and verifies finiteness. `op` names the
    // producing operation in the error message.
    Tensor& publish(std::string_view op);

    bool is_finite() const noexcept;

    friend bool operator==(const Tensor& a, const Tensor& b) {
        return a.shape_ == b.shape_ && a.dtype_ == b.dtype_ && a.data_ == b.data_;
    }

  private:
    Shape shape_;
    std::vector<double> data_;
    DType dtype_ = DType::F64;
    bool requires_grad_ = false;
};

// Throws DimensionError unless `t` has rank `rank`.
void expect_rank(const Tensor& t, std::size_t rank, std::string_view what);
void expect_same_shape(const Tensor& a, const Tensor& b, std::string_view what);

double max_abs_diff(const Tensor& a, const Tensor& b);

}  // namespace bem
