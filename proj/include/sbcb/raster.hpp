#pragma once

#include <algorithm>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "sbcb/config.hpp"

SBCB_NAMESPACE_BEGIN

/// Row-major single-channel grid of integral or floating values.
template <typename T>
class Raster {
 public:
  Raster() = default;
  Raster(int height, int width, T fill = T{}) : height_(height), width_(width) {
    if (height < 1 || width < 1) {
      throw std::invalid_argument("raster extent must be at least 1x1, got " + std::to_string(height) + "x" +
                                  std::to_string(width));
    }
    data_.assign(static_cast<std::size_t>(height) * width, fill);
  }
  Raster(int height, int width, std::vector<T> values) : height_(height), width_(width), data_(std::move(values)) {
    if (data_.size() != static_cast<std::size_t>(height) * width) {
      throw std::invalid_argument("raster value count does not match extent");
    }
  }

  int height() const { return height_; }
  int width() const { return width_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }
  bool same_extent(const Raster<auto>& other) const {
    return height_ == other.height() && width_ == other.width();
  }

  T& at(int y, int x) { return data_[static_cast<std::size_t>(y) * width_ + x]; }
  const T& at(int y, int x) const { return data_[static_cast<std::size_t>(y) * width_ + x]; }
  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }
  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  std::span<T> values() { return data_; }
  std::span<const T> values() const { return data_; }

  bool operator==(const Raster&) const = default;

 private:
  int height_ = 0;
  int width_ = 0;
  std::vector<T> data_;
};

using LabelMap = Raster<std::int32_t>;
using InstanceMap = Raster<std::int32_t>;
using BinaryMask = Raster<std::uint8_t>;
using DistanceMap = Raster<float>;

inline constexpr int kDefaultIgnoreIndex = 255;

/// Nearest-neighbour resampling (source index floor(dst * in / out)); never
/// invents values, so it is the only resampling applied to label rasters.
template <typename T>
Raster<T> resize_nearest(const Raster<T>& src, int height, int width) {
  Raster<T> out(height, width);
  for (int y = 0; y < height; ++y) {
    const int sy = std::min(static_cast<int>(static_cast<long long>(y) * src.height() / height), src.height() - 1);
    for (int x = 0; x < width; ++x) {
      const int sx = std::min(static_cast<int>(static_cast<long long>(x) * src.width() / width), src.width() - 1);
      out.at(y, x) = src.at(sy, sx);
    }
  }
  return out;
}

template <typename T>
Raster<T> flip_horizontal(const Raster<T>& src) {
  Raster<T> out(src.height(), src.width());
  for (int y = 0; y < src.height(); ++y)
    for (int x = 0; x < src.width(); ++x) out.at(y, x) = src.at(y, src.width() - 1 - x);
  return out;
}

/// Window [y0, y0+h) x [x0, x0+w); source pixels outside the raster take `pad`.
template <typename T>
Raster<T> crop(const Raster<T>& src, int y0, int x0, int height, int width, T pad) {
  Raster<T> out(height, width, pad);
  for (int y = 0; y < height; ++y) {
    const int sy = y0 + y;
    if (sy < 0 || sy >= src.height()) continue;
    for (int x = 0; x < width; ++x) {
      const int sx = x0 + x;
      if (sx >= 0 && sx < src.width()) out.at(y, x) = src.at(sy, sx);
    }
  }
  return out;
}

SBCB_NAMESPACE_END
