#include "sbcb/boundary_gen.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <stdexcept>
#include <string>

#include "sbcb/edt.hpp"

SBCB_NAMESPACE_BEGIN

void BoundaryGenConfig::validate() const {
  if (!(radius >= 1.0)) throw std::invalid_argument("boundary radius must be >= 1, got " + std::to_string(radius));
}

SemanticBoundaryTensor::SemanticBoundaryTensor(int num_categories, int height, int width)
    : num_categories_(num_categories), height_(height), width_(width) {
  if (num_categories < 1 || height < 1 || width < 1) {
    throw std::invalid_argument("SemanticBoundaryTensor: invalid extent");
  }
  data_.assign(static_cast<std::size_t>(num_categories) * height * width, 0);
}

std::span<std::uint8_t> SemanticBoundaryTensor::channel(int c) {
  return std::span<std::uint8_t>(data_).subspan(index(c, 0, 0), static_cast<std::size_t>(height_) * width_);
}

std::span<const std::uint8_t> SemanticBoundaryTensor::channel(int c) const {
  return std::span<const std::uint8_t>(data_).subspan(index(c, 0, 0), static_cast<std::size_t>(height_) * width_);
}

BinaryMask SemanticBoundaryTensor::channel_mask(int c) const {
  auto ch = channel(c);
  return BinaryMask(height_, width_, std::vector<std::uint8_t>(ch.begin(), ch.end()));
}

std::size_t SemanticBoundaryTensor::count() const {
  return static_cast<std::size_t>(std::count(data_.begin(), data_.end(), std::uint8_t{1}));
}

namespace {

double border_distance(int y, int x, int height, int width) {
  return static_cast<double>(std::min({y + 1, x + 1, height - y, width - x}));
}

struct Box {
  int y0 = 0, x0 = 0, y1 = -1, x1 = -1;  // inclusive
  void include(int y, int x) {
    if (y1 < y0) {
      y0 = y1 = y;
      x0 = x1 = x;
      return;
    }
    y0 = std::min(y0, y);
    y1 = std::max(y1, y);
    x0 = std::min(x0, x);
    x1 = std::max(x1, x);
  }
};

enum class Membership : std::uint8_t { kIgnored, kInside, kOutside };

/// Bands one region (membership given by `inside`) within a window and ORs
/// the band into `out`.
template <typename InsideFn, typename ValidFn, typename Edt>
void band_region(int height, int width, const Box& box, int pad, const BoundaryGenConfig& cfg, InsideFn inside,
                 ValidFn valid, Edt&& edt_fn, BinaryMask& out) {
  const int wy0 = std::max(0, box.y0 - pad), wx0 = std::max(0, box.x0 - pad);
  const int wy1 = std::min(height - 1, box.y1 + pad), wx1 = std::min(width - 1, box.x1 + pad);
  const int wh = wy1 - wy0 + 1, ww = wx1 - wx0 + 1;
  const std::size_t n = static_cast<std::size_t>(wh) * ww;
  std::vector<Membership> member(n);
  std::vector<std::uint8_t> inner(n), outer(n);
  for (int y = 0; y < wh; ++y)
    for (int x = 0; x < ww; ++x) {
      const std::size_t i = static_cast<std::size_t>(y) * ww + x;
      const int gy = wy0 + y, gx = wx0 + x;
      if (!valid(gy, gx)) {
        member[i] = Membership::kIgnored;
      } else if (inside(gy, gx)) {
        member[i] = Membership::kInside;
        inner[i] = 1;
      } else {
        member[i] = Membership::kOutside;
        outer[i] = 1;
      }
    }
  const std::vector<double> to_inner = edt_fn(inner, wh, ww);
  const std::vector<double> to_outer = edt_fn(outer, wh, ww);
  const double r2 = cfg.radius * cfg.radius;
  for (int y = 0; y < wh; ++y)
    for (int x = 0; x < ww; ++x) {
      const std::size_t i = static_cast<std::size_t>(y) * ww + x;
      bool on = false;
      if (member[i] == Membership::kInside) {
        on = to_outer[i] <= r2;
        if (!on && cfg.image_border_is_boundary) {
          on = border_distance(wy0 + y, wx0 + x, height, width) <= cfg.radius;
        }
      } else if (member[i] == Membership::kOutside) {
        on = to_inner[i] <= r2;
      }
      if (on) out.at(wy0 + y, wx0 + x) = 1;
    }
}

void check_inputs(const LabelMap& labels, const BoundaryGenConfig& cfg, const InstanceMap* instances) {
  cfg.validate();
  if (labels.empty()) throw std::invalid_argument("empty label map");
  if (instances && !instances->same_extent(labels)) {
    throw std::invalid_argument("instance map extent does not match label map");
  }
  if (cfg.instance_sensitive && !instances) {
    throw std::invalid_argument("instance-sensitive boundaries requested without an instance map");
  }
}

template <typename Edt>
BinaryMask category_boundary_impl(const LabelMap& labels, int category, const BoundaryGenConfig& cfg,
                                  const InstanceMap* instances, bool windowed, Edt&& edt_fn) {
  const int H = labels.height(), W = labels.width();
  BinaryMask out(H, W, 0);
  const bool per_instance = cfg.instance_sensitive && instances;
  // Regions of this category: one per instance id, or the whole category.
  std::map<std::int32_t, Box> regions;
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x)
      if (labels.at(y, x) == category) regions[per_instance ? instances->at(y, x) : 0].include(y, x);
  if (regions.empty()) return out;

  const int pad = windowed ? static_cast<int>(std::ceil(cfg.radius)) : std::max(H, W);
  auto valid = [&](int y, int x) { return labels.at(y, x) != cfg.ignore_index; };
  for (const auto& [id, box] : regions) {
    if (per_instance) {
      const std::int32_t inst = id;
      band_region(
          H, W, box, pad, cfg,
          [&](int y, int x) { return labels.at(y, x) == category && instances->at(y, x) == inst; }, valid, edt_fn,
          out);
    } else {
      band_region(H, W, box, pad, cfg, [&](int y, int x) { return labels.at(y, x) == category; }, valid, edt_fn,
                  out);
    }
  }
  return out;
}

}  // namespace

DistanceMap distance_to_opposite(const BinaryMask& mask, bool image_border_is_boundary) {
  const int H = mask.height(), W = mask.width();
  std::vector<std::uint8_t> inner(mask.size()), outer(mask.size());
  for (std::size_t i = 0; i < mask.size(); ++i) {
    inner[i] = mask[i] ? 1 : 0;
    outer[i] = mask[i] ? 0 : 1;
  }
  const auto to_inner = edt::squared_distance_to_sites(inner, H, W);
  const auto to_outer = edt::squared_distance_to_sites(outer, H, W);
  DistanceMap out(H, W);
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      const std::size_t i = static_cast<std::size_t>(y) * W + x;
      double d = std::sqrt(mask[i] ? to_outer[i] : to_inner[i]);
      if (mask[i] && image_border_is_boundary) d = std::min(d, border_distance(y, x, H, W));
      out[i] = static_cast<float>(d);
    }
  return out;
}

BinaryMask category_boundary(const LabelMap& labels, int category, const BoundaryGenConfig& cfg,
                             const InstanceMap* instances) {
  check_inputs(labels, cfg, instances);
  return category_boundary_impl(labels, category, cfg, instances, true,
                                [](const std::vector<std::uint8_t>& s, int h, int w) {
                                  return edt::squared_distance_to_sites(s, h, w);
                                });
}

SemanticBoundaryTensor semantic_boundaries(const LabelMap& labels, int num_categories, const BoundaryGenConfig& cfg,
                                           const InstanceMap* instances) {
  check_inputs(labels, cfg, instances);
  SemanticBoundaryTensor out(num_categories, labels.height(), labels.width());
#pragma omp parallel for schedule(dynamic, 1)
  for (int c = 0; c < num_categories; ++c) {
    // Nested regions inside the EDT run serially; parallelism is per category.
    const BinaryMask band = category_boundary_impl(labels, c, cfg, instances, true,
                                                   [](const std::vector<std::uint8_t>& s, int h, int w) {
                                                     return edt::squared_distance_to_sites(s, h, w);
                                                   });
    std::copy(band.values().begin(), band.values().end(), out.channel(c).begin());
  }
  return out;
}

BinaryMask channel_union(const SemanticBoundaryTensor& boundaries) {
  BinaryMask out(boundaries.height(), boundaries.width(), 0);
  for (int c = 0; c < boundaries.num_categories(); ++c) {
    auto ch = boundaries.channel(c);
    for (std::size_t i = 0; i < ch.size(); ++i) out[i] |= ch[i];
  }
  return out;
}

BinaryMask binary_boundaries(const LabelMap& labels, const BoundaryGenConfig& cfg, const InstanceMap* instances) {
  check_inputs(labels, cfg, instances);
  int max_label = -1;
  for (auto v : labels.values())
    if (v != cfg.ignore_index) max_label = std::max(max_label, static_cast<int>(v));
  if (max_label < 0) return BinaryMask(labels.height(), labels.width(), 0);
  return channel_union(semantic_boundaries(labels, max_label + 1, cfg, instances));
}

namespace reference {

SemanticBoundaryTensor semantic_boundaries(const LabelMap& labels, int num_categories, const BoundaryGenConfig& cfg,
                                           const InstanceMap* instances) {
  check_inputs(labels, cfg, instances);
  SemanticBoundaryTensor out(num_categories, labels.height(), labels.width());
  for (int c = 0; c < num_categories; ++c) {
    const BinaryMask band = category_boundary_impl(labels, c, cfg, instances, false,
                                                   [](const std::vector<std::uint8_t>& s, int h, int w) {
                                                     return edt::reference::squared_distance_to_sites(s, h, w);
                                                   });
    std::copy(band.values().begin(), band.values().end(), out.channel(c).begin());
  }
  return out;
}

}  // namespace reference

SBCB_NAMESPACE_END
