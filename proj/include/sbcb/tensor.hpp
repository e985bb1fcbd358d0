#pragma once

#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "sbcb/config.hpp"

SBCB_NAMESPACE_BEGIN

/// NCHW extent. Every dense feature map in the library is four dimensional;
/// scalars are 1x1x1x1 and parameter tensors reuse the same layout
/// (out, in/groups, kh, kw).
struct Shape {
  int n = 1;
  int c = 1;
  int h = 1;
  int w = 1;

  std::size_t numel() const {
    return static_cast<std::size_t>(n) * c * h * w;
  }
  std::size_t plane() const { return static_cast<std::size_t>(h) * w; }
  bool operator==(const Shape&) const = default;
  std::string str() const;
};

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, real fill = real(0));
  Tensor(Shape shape, std::vector<real> values);

  const Shape& shape() const { return shape_; }
  int n() const { return shape_.n; }
  int c() const { return shape_.c; }
  int h() const { return shape_.h; }
  int w() const { return shape_.w; }
  std::size_t numel() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  real* data() { return data_.data(); }
  const real* data() const { return data_.data(); }
  std::span<real> values() { return data_; }
  std::span<const real> values() const { return data_; }

  real* plane(int n, int c) {
    return data_.data() + (static_cast<std::size_t>(n) * shape_.c + c) * shape_.plane();
  }
  const real* plane(int n, int c) const {
    return data_.data() + (static_cast<std::size_t>(n) * shape_.c + c) * shape_.plane();
  }
  real& at(int n, int c, int y, int x) { return plane(n, c)[static_cast<std::size_t>(y) * shape_.w + x]; }
  real at(int n, int c, int y, int x) const { return plane(n, c)[static_cast<std::size_t>(y) * shape_.w + x]; }
  real& operator[](std::size_t i) { return data_[i]; }
  real operator[](std::size_t i) const { return data_[i]; }

  void fill(real v);
  /// Element-wise accumulate; shapes must agree.
  void add_(const Tensor& other);
  void scale_(real s);
  real sum() const;
  /// Same storage reinterpreted with a new extent of equal size.
  Tensor reshaped(Shape shape) const;

  static Tensor scalar(real v) { return Tensor(Shape{1, 1, 1, 1}, v); }

 private:
  Shape shape_{0, 0, 0, 0};
  std::vector<real> data_;
};

void check_same_shape(const Tensor& a, const Tensor& b, const char* what);

SBCB_NAMESPACE_END
