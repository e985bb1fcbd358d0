#pragma once

#include <cstdint>
#include <limits>
#include <span>
#include <vector>

#include "sbcb/config.hpp"

SBCB_NAMESPACE_BEGIN

/// Exact Euclidean distance transform (Felzenszwalb-Huttenlocher lower
/// envelope of parabolas, separable over rows then columns). Squared
/// distances between pixel centres are integers, so results are exact.
namespace edt {

inline constexpr double kInfinity = std::numeric_limits<double>::infinity();

/// Squared distance from every pixel to the nearest non-zero entry of
/// `sites` (row-major, height x width). +inf everywhere when there is no site.
/// OpenMP over rows, then over column blocks.
std::vector<double> squared_distance_to_sites(std::span<const std::uint8_t> sites, int height, int width);

/// Lower envelope of the parabolas (q - i)^2 + f[i] for finite f[i].
/// `out[q]` receives the minimum; +inf when every f is infinite.
void lower_envelope_1d(std::span<const double> f, std::span<double> out, std::vector<int>& v,
                       std::vector<double>& z);

namespace reference {
/// Serial version of squared_distance_to_sites using the general 1-D envelope
/// on both axes.
std::vector<double> squared_distance_to_sites(std::span<const std::uint8_t> sites, int height, int width);
}  // namespace reference

}  // namespace edt

SBCB_NAMESPACE_END
