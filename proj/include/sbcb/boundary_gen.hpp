#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "sbcb/raster.hpp"

SBCB_NAMESPACE_BEGIN

struct BoundaryGenConfig {
  /// Boundary half-width r: a pixel is on the boundary when a pixel of the
  /// opposite membership lies within distance r (inclusive), so a straight
  /// interface yields a band 2r pixels thick for integral r.
  double radius = 2.0;
  bool instance_sensitive = false;
  int ignore_index = kDefaultIgnoreIndex;
  /// Treat the raster edge as an interface for pixels inside a region.
  bool image_border_is_boundary = false;

  void validate() const;
};

/// N_cat x H x W multi-label boundary map. Channels may overlap.
class SemanticBoundaryTensor {
 public:
  SemanticBoundaryTensor() = default;
  SemanticBoundaryTensor(int num_categories, int height, int width);

  int num_categories() const { return num_categories_; }
  int height() const { return height_; }
  int width() const { return width_; }
  std::uint8_t at(int c, int y, int x) const { return data_[index(c, y, x)]; }
  std::uint8_t& at(int c, int y, int x) { return data_[index(c, y, x)]; }
  std::span<std::uint8_t> channel(int c);
  std::span<const std::uint8_t> channel(int c) const;
  BinaryMask channel_mask(int c) const;
  std::span<const std::uint8_t> values() const { return data_; }
  std::size_t count() const;

  bool operator==(const SemanticBoundaryTensor&) const = default;

 private:
  std::size_t index(int c, int y, int x) const {
    return (static_cast<std::size_t>(c) * height_ + y) * width_ + x;
  }
  int num_categories_ = 0;
  int height_ = 0;
  int width_ = 0;
  std::vector<std::uint8_t> data_;
};

/// Unsigned distance from each pixel to the nearest pixel of opposite
/// membership (inside pixels to the complement, outside pixels to the mask).
/// +inf where no opposite pixel exists. With `image_border_is_boundary`, the
/// ring just outside the raster counts as opposite for inside pixels.
DistanceMap distance_to_opposite(const BinaryMask& mask, bool image_border_is_boundary = false);

/// Boundary band of one category. Ignore pixels are neither inside nor
/// outside and never marked. With an instance map and
/// `cfg.instance_sensitive`, each instance of the category (instance id 0
/// grouped as one region) is banded independently and the bands are unioned.
BinaryMask category_boundary(const LabelMap& labels, int category, const BoundaryGenConfig& cfg,
                             const InstanceMap* instances = nullptr);

/// Channel c equals category_boundary(labels, c, cfg, instances).
/// Categories run in parallel; the result is independent of thread count.
SemanticBoundaryTensor semantic_boundaries(const LabelMap& labels, int num_categories, const BoundaryGenConfig& cfg,
                                           const InstanceMap* instances = nullptr);

/// Channel-wise OR of semantic_boundaries over every category present.
BinaryMask binary_boundaries(const LabelMap& labels, const BoundaryGenConfig& cfg,
                             const InstanceMap* instances = nullptr);

BinaryMask channel_union(const SemanticBoundaryTensor& boundaries);

namespace reference {
/// Serial, full-raster version of semantic_boundaries (no region windows).
SemanticBoundaryTensor semantic_boundaries(const LabelMap& labels, int num_categories, const BoundaryGenConfig& cfg,
                                           const InstanceMap* instances = nullptr);
}  // namespace reference

SBCB_NAMESPACE_END
