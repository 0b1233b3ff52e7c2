#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

#include "ddrnet/error.hpp"

namespace ddrnet {

/// Up to four extents in N,C,H,W order. Every extent is at least 1.
class Shape {
 public:
  static constexpr int kMaxRank = 4;

  Shape() = default;
  Shape(std::initializer_list<int64_t> dims) : Shape(std::span<const int64_t>(dims.begin(), dims.size())) {}
  explicit Shape(std::span<const int64_t> dims) {
    if (dims.empty() || dims.size() > kMaxRank) {
      throw ShapeError("shape rank must be in [1, 4], got " + std::to_string(dims.size()));
    }
    rank_ = static_cast<int>(dims.size());
    for (int i = 0; i < rank_; ++i) {
      if (dims[i] < 1) {
        throw ShapeError("shape extent " + std::to_string(i) + " must be >= 1, got " + std::to_string(dims[i]));
      }
      dims_[i] = dims[i];
    }
  }

  static Shape nchw(int64_t n, int64_t c, int64_t h, int64_t w) { return Shape{n, c, h, w}; }

  int rank() const { return rank_; }
  int64_t operator[](int i) const { return dims_[i]; }
  std::span<const int64_t> dims() const { return {dims_.data(), static_cast<size_t>(rank_)}; }

  int64_t numel() const {
    int64_t n = rank_ == 0 ? 0 : 1;
    for (int i = 0; i < rank_; ++i) n *= dims_[i];
    return n;
  }

  // NCHW accessors; valid for rank-4 shapes only.
  int64_t n() const { return dims_[0]; }
  int64_t c() const { return dims_[1]; }
  int64_t h() const { return dims_[2]; }
  int64_t w() const { return dims_[3]; }

  bool operator==(const Shape&) const = default;

  std::string str() const {
    std::string s;
    for (int i = 0; i < rank_; ++i) {
      if (i) s += 'x';
      s += std::to_string(dims_[i]);
    }
    return s.empty() ? "()" : s;
  }

 private:
  std::array<int64_t, kMaxRank> dims_{};
  int rank_ = 0;
};

/// Dense row-major tensor with value semantics.
///
/// Element type is uniform across the tensor; `float` and `double` cover the
/// 32- and 64-bit IEEE modes, `int32_t` holds class-index maps.
template <typename T>
class BasicTensor {
 public:
  using value_type = T;

  BasicTensor() = default;
  explicit BasicTensor(Shape shape, T fill = T{0}) : shape_(shape), data_(static_cast<size_t>(shape.numel()), fill) {}
  BasicTensor(Shape shape, std::vector<T> data) : shape_(shape), data_(std::move(data)) {
    if (static_cast<int64_t>(data_.size()) != shape_.numel()) {
      throw ShapeError("tensor data length " + std::to_string(data_.size()) + " does not match shape " +
                       shape_.str());
    }
  }

  const Shape& shape() const { return shape_; }
  int rank() const { return shape_.rank(); }
  int64_t numel() const { return static_cast<int64_t>(data_.size()); }
  bool empty() const { return data_.empty(); }

  int64_t n() const { return shape_.n(); }
  int64_t c() const { return shape_.c(); }
  int64_t h() const { return shape_.h(); }
  int64_t w() const { return shape_.w(); }

  std::span<T> data() { return data_; }
  std::span<const T> data() const { return data_; }
  T* ptr() { return data_.data(); }
  const T* ptr() const { return data_.data(); }

  T& operator[](int64_t i) { return data_[static_cast<size_t>(i)]; }
  const T& operator[](int64_t i) const { return data_[static_cast<size_t>(i)]; }

  T& at(int64_t n, int64_t c, int64_t h, int64_t w) { return data_[offset(n, c, h, w)]; }
  const T& at(int64_t n, int64_t c, int64_t h, int64_t w) const { return data_[offset(n, c, h, w)]; }

  /// Pointer to the start of channel plane (n, c) of a rank-4 tensor.
  T* plane(int64_t n, int64_t c) { return data_.data() + offset(n, c, 0, 0); }
  const T* plane(int64_t n, int64_t c) const { return data_.data() + offset(n, c, 0, 0); }

  BasicTensor reshaped(Shape shape) const& {
    BasicTensor t = *this;
    return std::move(t).reshaped(shape);
  }
  BasicTensor reshaped(Shape shape) && {
    if (shape.numel() != shape_.numel()) {
      throw ShapeError("cannot reshape " + shape_.str() + " to " + shape.str());
    }
    shape_ = shape;
    return std::move(*this);
  }

  template <typename U>
  BasicTensor<U> cast() const {
    std::vector<U> out(data_.size());
    std::transform(data_.begin(), data_.end(), out.begin(), [](T v) { return static_cast<U>(v); });
    return BasicTensor<U>(shape_, std::move(out));
  }

  bool operator==(const BasicTensor&) const = default;

 private:
  size_t offset(int64_t n, int64_t c, int64_t h, int64_t w) const {
    return static_cast<size_t>(((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w);
  }

  Shape shape_;
  std::vector<T> data_;
};

using Tensor = BasicTensor<float>;
using Tensor64 = BasicTensor<double>;
using IndexTensor = BasicTensor<int32_t>;

/// max|a - b| / max(max|b|, 1e-12). Shapes must agree; any NaN yields +inf.
template <typename T, typename U>
double max_relative_error(const BasicTensor<T>& a, const BasicTensor<U>& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError("max_relative_error: shapes differ " + a.shape().str() + " vs " + b.shape().str());
  }
  double diff = 0.0;
  double scale = 0.0;
  for (int64_t i = 0; i < a.numel(); ++i) {
    const double x = static_cast<double>(a[i]);
    const double y = static_cast<double>(b[i]);
    if (std::isnan(x) || std::isnan(y)) return std::numeric_limits<double>::infinity();
    diff = std::max(diff, x > y ? x - y : y - x);
    scale = std::max(scale, y < 0 ? -y : y);
  }
  return diff / std::max(scale, 1e-12);
}

}  // namespace ddrnet
