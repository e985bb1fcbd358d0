#include "sbcb/edt.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

SBCB_NAMESPACE_BEGIN
namespace edt {

void lower_envelope_1d(std::span<const double> f, std::span<double> out, std::vector<int>& v,
                       std::vector<double>& z) {
  const int n = static_cast<int>(f.size());
  v.resize(n);
  z.resize(n + 1);
  int k = -1;
  for (int q = 0; q < n; ++q) {
    if (!std::isfinite(f[q])) continue;
    const double fq = f[q] + static_cast<double>(q) * q;
    if (k < 0) {
      k = 0;
      v[0] = q;
      z[0] = -kInfinity;
      z[1] = kInfinity;
      continue;
    }
    double s = (fq - (f[v[k]] + static_cast<double>(v[k]) * v[k])) / (2.0 * q - 2.0 * v[k]);
    while (s <= z[k]) {
      --k;
      if (k < 0) break;
      s = (fq - (f[v[k]] + static_cast<double>(v[k]) * v[k])) / (2.0 * q - 2.0 * v[k]);
    }
    if (k < 0) {
      k = 0;
      v[0] = q;
      z[0] = -kInfinity;
      z[1] = kInfinity;
      continue;
    }
    ++k;
    v[k] = q;
    z[k] = s;
    z[k + 1] = kInfinity;
  }
  if (k < 0) {
    std::fill(out.begin(), out.end(), kInfinity);
    return;
  }
  int j = 0;
  for (int q = 0; q < n; ++q) {
    while (z[j + 1] < q) ++j;
    const double d = q - v[j];
    out[q] = d * d + f[v[j]];
  }
}

namespace {

void check_extent(std::size_t size, int height, int width) {
  if (height < 1 || width < 1 || size != static_cast<std::size_t>(height) * width) {
    throw std::invalid_argument("edt: site buffer does not match extent");
  }
}

}  // namespace

std::vector<double> squared_distance_to_sites(std::span<const std::uint8_t> sites, int height, int width) {
  check_extent(sites.size(), height, width);
  std::vector<double> dist(sites.size());
  // Rows: nearest site along the row by two linear sweeps.
#pragma omp parallel for schedule(static)
  for (int y = 0; y < height; ++y) {
    const std::uint8_t* row = sites.data() + static_cast<std::size_t>(y) * width;
    double* drow = dist.data() + static_cast<std::size_t>(y) * width;
    int last = -1;
    for (int x = 0; x < width; ++x) {
      if (row[x]) last = x;
      drow[x] = last < 0 ? kInfinity : static_cast<double>(x - last);
    }
    last = -1;
    for (int x = width - 1; x >= 0; --x) {
      if (row[x]) last = x;
      if (last >= 0) drow[x] = std::min(drow[x], static_cast<double>(last - x));
    }
    for (int x = 0; x < width; ++x) drow[x] = drow[x] * drow[x];
  }
  // Columns: exact envelope over the squared row distances.
#pragma omp parallel
  {
    std::vector<double> col(height), out(height), z;
    std::vector<int> v;
#pragma omp for schedule(static)
    for (int x = 0; x < width; ++x) {
      for (int y = 0; y < height; ++y) col[y] = dist[static_cast<std::size_t>(y) * width + x];
      lower_envelope_1d(col, out, v, z);
      for (int y = 0; y < height; ++y) dist[static_cast<std::size_t>(y) * width + x] = out[y];
    }
  }
  return dist;
}

namespace reference {

std::vector<double> squared_distance_to_sites(std::span<const std::uint8_t> sites, int height, int width) {
  check_extent(sites.size(), height, width);
  std::vector<double> dist(sites.size());
  std::vector<double> line, out, z;
  std::vector<int> v;
  line.resize(width);
  out.resize(width);
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) line[x] = sites[static_cast<std::size_t>(y) * width + x] ? 0.0 : kInfinity;
    lower_envelope_1d(line, out, v, z);
    std::copy(out.begin(), out.end(), dist.begin() + static_cast<std::ptrdiff_t>(y) * width);
  }
  line.resize(height);
  out.resize(height);
  for (int x = 0; x < width; ++x) {
    for (int y = 0; y < height; ++y) line[y] = dist[static_cast<std::size_t>(y) * width + x];
    lower_envelope_1d(line, out, v, z);
    for (int y = 0; y < height; ++y) dist[static_cast<std::size_t>(y) * width + x] = out[y];
  }
  return dist;
}

}  // namespace reference
}  // namespace edt
SBCB_NAMESPACE_END
