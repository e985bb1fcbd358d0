#include "sbcb/tensor.hpp"

#include <algorithm>
#include <numeric>
#include <sstream>

SBCB_NAMESPACE_BEGIN

std::string Shape::str() const {
  std::ostringstream os;
  os << '(' << n << ", " << c << ", " << h << ", " << w << ')';
  return os.str();
}

Tensor::Tensor(Shape shape, real fill) : shape_(shape), data_(shape.numel(), fill) {
  if (shape.n < 0 || shape.c < 0 || shape.h < 0 || shape.w < 0) {
    throw std::invalid_argument("negative tensor extent " + shape.str());
  }
}

Tensor::Tensor(Shape shape, std::vector<real> values) : shape_(shape), data_(std::move(values)) {
  if (data_.size() != shape.numel()) {
    throw std::invalid_argument("value count does not match shape " + shape.str());
  }
}

void Tensor::fill(real v) { std::fill(data_.begin(), data_.end(), v); }

void Tensor::add_(const Tensor& other) {
  check_same_shape(*this, other, "Tensor::add_");
  const real* src = other.data();
  real* dst = data_.data();
  const std::size_t count = data_.size();
#pragma omp simd
  for (std::size_t i = 0; i < count; ++i) dst[i] += src[i];
}

void Tensor::scale_(real s) {
  for (auto& v : data_) v *= s;
}

real Tensor::sum() const { return std::accumulate(data_.begin(), data_.end(), real(0)); }

Tensor Tensor::reshaped(Shape shape) const {
  if (shape.numel() != data_.size()) {
    throw std::invalid_argument("reshape " + shape_.str() + " -> " + shape.str());
  }
  return Tensor(shape, data_);
}

void check_same_shape(const Tensor& a, const Tensor& b, const char* what) {
  if (!(a.shape() == b.shape())) {
    throw std::invalid_argument(std::string(what) + ": shape mismatch " + a.shape().str() + " vs " +
                                b.shape().str());
  }
}

SBCB_NAMESPACE_END
