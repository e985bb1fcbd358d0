#include "sbcb/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <tuple>

#include "sbcb/edt.hpp"

SBCB_NAMESPACE_BEGIN

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

void check_extent(const auto& a, const auto& b, const char* what) {
  if (!a.same_extent(b)) {
    throw std::invalid_argument(std::string(what) + ": extent " + std::to_string(a.height()) + "x" +
                                std::to_string(a.width()) + " vs " + std::to_string(b.height()) + "x" +
                                std::to_string(b.width()));
  }
}

double mean_defined(const std::vector<double>& v) {
  double s = 0;
  int k = 0;
  for (double x : v)
    if (!std::isnan(x)) {
      s += x;
      ++k;
    }
  return k ? s / k : 0.0;
}

}  // namespace

ConfusionMatrix::ConfusionMatrix(int num_categories) : n_(num_categories) {
  if (n_ < 1) throw std::invalid_argument("ConfusionMatrix needs at least one category");
  counts_.assign(static_cast<std::size_t>(n_) * n_, 0);
}

void ConfusionMatrix::add(const LabelMap& pred, const LabelMap& gt, int ignore_index) {
  check_extent(pred, gt, "ConfusionMatrix::add");
  for (std::size_t i = 0; i < gt.size(); ++i) {
    const int g = gt[i];
    if (g == ignore_index) continue;
    const int p = pred[i];
    if (g < 0 || g >= n_ || p < 0 || p >= n_) {
      throw std::invalid_argument("ConfusionMatrix::add: label out of range (gt " + std::to_string(g) + ", pred " +
                                  std::to_string(p) + ")");
    }
    ++counts_[static_cast<std::size_t>(g) * n_ + p];
  }
}

void ConfusionMatrix::merge(const ConfusionMatrix& other) {
  if (other.n_ != n_) throw std::invalid_argument("ConfusionMatrix::merge: category count mismatch");
  for (std::size_t i = 0; i < counts_.size(); ++i) counts_[i] += other.counts_[i];
}

IoUResult ConfusionMatrix::iou() const {
  IoUResult r;
  for (int c = 0; c < n_; ++c) {
    std::int64_t tp = at(c, c), fp = 0, fn = 0;
    for (int k = 0; k < n_; ++k) {
      if (k == c) continue;
      fn += at(c, k);
      fp += at(k, c);
    }
    const std::int64_t denom = tp + fp + fn;
    r.per_category.push_back(denom ? double(tp) / double(denom) : kNaN);
  }
  r.mean = mean_defined(r.per_category);
  return r;
}

IoUResult miou(std::span<const LabelMap> preds, std::span<const LabelMap> gts, int num_categories, int ignore_index) {
  if (preds.size() != gts.size()) throw std::invalid_argument("miou: prediction and label counts differ");
  ConfusionMatrix cm(num_categories);
  for (std::size_t i = 0; i < preds.size(); ++i) cm.add(preds[i], gts[i], ignore_index);
  return cm.iou();
}

MatchCounts& MatchCounts::operator+=(const MatchCounts& o) {
  pred_matched += o.pred_matched;
  pred_total += o.pred_total;
  gt_matched += o.gt_matched;
  gt_total += o.gt_total;
  return *this;
}

double MatchCounts::precision() const { return pred_total ? double(pred_matched) / pred_total : 0.0; }
double MatchCounts::recall() const { return gt_total ? double(gt_matched) / gt_total : 0.0; }

double MatchCounts::fscore() const {
  if (pred_total == 0 && gt_total == 0) return 1.0;
  if (pred_total == 0 || gt_total == 0) return 0.0;
  const double p = precision(), r = recall();
  return p + r > 0 ? 2 * p * r / (p + r) : 0.0;
}

BinaryMask mask_boundary(const BinaryMask& mask) {
  const int h = mask.height(), w = mask.width();
  BinaryMask out(h, w, 0);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      if (!mask.at(y, x)) continue;
      const bool edge = (y > 0 && !mask.at(y - 1, x)) || (y + 1 < h && !mask.at(y + 1, x)) ||
                        (x > 0 && !mask.at(y, x - 1)) || (x + 1 < w && !mask.at(y, x + 1));
      out.at(y, x) = edge;
    }
  return out;
}

void BoundaryFScoreConfig::validate() const {
  if (trimap_width < 1) throw std::invalid_argument("trimap width must be >= 1");
}

MatchCounts boundary_match_counts(const BinaryMask& pred, const BinaryMask& gt, double width, const BinaryMask* valid) {
  check_extent(pred, gt, "boundary_match_counts");
  if (valid) check_extent(pred, *valid, "boundary_match_counts");
  const int h = pred.height(), w = pred.width();
  const double w2 = width * width;
  auto keep = [&](std::size_t i) { return !valid || (*valid)[i]; };
  MatchCounts m;
  // squared distance to the nearest pixel of the other set
  const std::vector<double> to_gt = edt::squared_distance_to_sites(gt.values(), h, w);
  const std::vector<double> to_pred = edt::squared_distance_to_sites(pred.values(), h, w);
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (!keep(i)) continue;
    if (pred[i]) {
      ++m.pred_total;
      m.pred_matched += to_gt[i] <= w2;
    }
    if (gt[i]) {
      ++m.gt_total;
      m.gt_matched += to_pred[i] <= w2;
    }
  }
  return m;
}

double boundary_fscore(const BinaryMask& pred_mask, const BinaryMask& gt_mask, const BoundaryFScoreConfig& cfg) {
  cfg.validate();
  return boundary_match_counts(mask_boundary(pred_mask), mask_boundary(gt_mask), cfg.trimap_width).fscore();
}

BoundaryFScoreAccumulator::BoundaryFScoreAccumulator(int num_categories, std::vector<int> widths, int ignore_index)
    : n_(num_categories), widths_(std::move(widths)), ignore_(ignore_index) {
  if (n_ < 1) throw std::invalid_argument("boundary F-score needs at least one category");
  if (widths_.empty()) throw std::invalid_argument("boundary F-score needs at least one width");
  for (int w : widths_) BoundaryFScoreConfig{w}.validate();
  counts_.assign(widths_.size(), std::vector<MatchCounts>(n_));
}

void BoundaryFScoreAccumulator::add(const LabelMap& pred, const LabelMap& gt) {
  check_extent(pred, gt, "BoundaryFScoreAccumulator::add");
  const int h = gt.height(), w = gt.width();
  BinaryMask valid(h, w, 1);
  bool any_ignore = false;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      if (gt.at(y, x) != ignore_) continue;
      any_ignore = true;
      valid.at(y, x) = 0;
      if (y > 0) valid.at(y - 1, x) = 0;
      if (y + 1 < h) valid.at(y + 1, x) = 0;
      if (x > 0) valid.at(y, x - 1) = 0;
      if (x + 1 < w) valid.at(y, x + 1) = 0;
    }
  for (int c = 0; c < n_; ++c) {
    BinaryMask pm(h, w, 0), gm(h, w, 0);
    bool any = false;
    for (std::size_t i = 0; i < gt.size(); ++i) {
      pm[i] = pred[i] == c;
      gm[i] = gt[i] == c;
      any = any || pm[i] || gm[i];
    }
    if (!any) continue;
    const BinaryMask pb = mask_boundary(pm), gb = mask_boundary(gm);
    for (std::size_t k = 0; k < widths_.size(); ++k)
      counts_[k][c] += boundary_match_counts(pb, gb, widths_[k], any_ignore ? &valid : nullptr);
  }
}

void BoundaryFScoreAccumulator::merge(const BoundaryFScoreAccumulator& other) {
  if (other.n_ != n_ || other.widths_ != widths_) throw std::invalid_argument("boundary F-score merge mismatch");
  for (std::size_t k = 0; k < widths_.size(); ++k)
    for (int c = 0; c < n_; ++c) counts_[k][c] += other.counts_[k][c];
}

std::vector<BoundaryFScoreResult> BoundaryFScoreAccumulator::result() const {
  std::vector<BoundaryFScoreResult> out;
  for (std::size_t k = 0; k < widths_.size(); ++k) {
    BoundaryFScoreResult r;
    r.width = widths_[k];
    for (const auto& m : counts_[k])
      r.per_category.push_back(m.pred_total == 0 && m.gt_total == 0 ? kNaN : m.fscore());
    r.mean = mean_defined(r.per_category);
    out.push_back(std::move(r));
  }
  return out;
}

BinaryMask thin(const BinaryMask& mask) {
  const int h = mask.height(), w = mask.width();
  BinaryMask img = mask;
  for (auto& v : img.values()) v = v != 0;
  auto px = [&](int y, int x) -> int { return y >= 0 && y < h && x >= 0 && x < w ? img.at(y, x) : 0; };
  // Only pixels with at least two background neighbours can go, and that
  // count only changes next to a deletion, so just those are revisited.
  // Deletions within a sub-iteration are applied together, as in the
  // full-raster formulation.
  std::vector<std::size_t> cand, del;
  std::vector<std::uint8_t> listed(img.size(), 0);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      if (!img.at(y, x)) continue;
      int b = 0;
      for (int dy = -1; dy <= 1; ++dy)
        for (int dx = -1; dx <= 1; ++dx) b += (dy || dx) && px(y + dy, x + dx);
      if (b <= 6) {
        cand.push_back(static_cast<std::size_t>(y) * w + x);
        listed[cand.back()] = 1;
      }
    }
  bool changed = true;
  while (changed) {
    changed = false;
    for (int pass = 0; pass < 2; ++pass) {
      del.clear();
      for (std::size_t idx : cand) {
        const int y = static_cast<int>(idx / w), x = static_cast<int>(idx % w);
        // p2..p9 clockwise from north
        const int p[8] = {px(y - 1, x), px(y - 1, x + 1), px(y, x + 1), px(y + 1, x + 1),
                          px(y + 1, x), px(y + 1, x - 1), px(y, x - 1), px(y - 1, x - 1)};
        int b = 0, a = 0;
        for (int i = 0; i < 8; ++i) {
          b += p[i];
          a += !p[i] && p[(i + 1) % 8];
        }
        if (b < 2 || b > 6 || a != 1) continue;
        if (pass == 0 && ((p[0] && p[2] && p[4]) || (p[2] && p[4] && p[6]))) continue;
        if (pass == 1 && ((p[0] && p[2] && p[6]) || (p[0] && p[4] && p[6]))) continue;
        del.push_back(idx);
      }
      if (del.empty()) continue;
      changed = true;
      for (std::size_t i : del) {
        img[i] = 0;
        listed[i] = 0;
      }
      std::vector<std::size_t> next;
      next.reserve(cand.size());
      for (std::size_t i : cand)
        if (img[i]) next.push_back(i);
      for (std::size_t i : del) {
        const int y = static_cast<int>(i / w), x = static_cast<int>(i % w);
        for (int dy = -1; dy <= 1; ++dy)
          for (int dx = -1; dx <= 1; ++dx) {
            if (!px(y + dy, x + dx)) continue;
            const std::size_t j = static_cast<std::size_t>(y + dy) * w + (x + dx);
            if (!listed[j]) {
              listed[j] = 1;
              next.push_back(j);
            }
          }
      }
      cand.swap(next);
    }
  }
  return img;
}

MatchCounts greedy_match(const BinaryMask& pred, const BinaryMask& gt, double tolerance) {
  check_extent(pred, gt, "greedy_match");
  const int h = pred.height(), w = pred.width();
  const int r = static_cast<int>(std::floor(tolerance));
  struct Offset {
    int d2, dy, dx;
  };
  std::vector<Offset> offsets;
  for (int dy = -r; dy <= r; ++dy)
    for (int dx = -r; dx <= r; ++dx)
      if (dy * dy + dx * dx <= tolerance * tolerance) offsets.push_back({dy * dy + dx * dx, dy, dx});
  std::sort(offsets.begin(), offsets.end(), [](const Offset& a, const Offset& b) {
    return std::tie(a.d2, a.dy, a.dx) < std::tie(b.d2, b.dy, b.dx);
  });
  BinaryMask taken(h, w, 0);
  MatchCounts m;
  for (auto v : gt.values()) m.gt_total += v != 0;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      if (!pred.at(y, x)) continue;
      ++m.pred_total;
      for (const auto& o : offsets) {
        const int yy = y + o.dy, xx = x + o.dx;
        if (yy < 0 || yy >= h || xx < 0 || xx >= w || !gt.at(yy, xx) || taken.at(yy, xx)) continue;
        taken.at(yy, xx) = 1;
        ++m.pred_matched;
        break;
      }
    }
  m.gt_matched = m.pred_matched;
  return m;
}

std::vector<double> ODSConfig::default_thresholds(int n) {
  std::vector<double> t;
  for (int k = 1; k <= n; ++k) t.push_back(double(k) / (n + 1));
  return t;
}

void ODSConfig::validate() const {
  if (thresholds.empty()) throw std::invalid_argument("ODS needs at least one threshold");
  for (std::size_t i = 0; i < thresholds.size(); ++i) {
    if (!(thresholds[i] > 0 && thresholds[i] < 1)) throw std::invalid_argument("ODS thresholds must lie in (0, 1)");
    if (i && !(thresholds[i] > thresholds[i - 1])) throw std::invalid_argument("ODS thresholds must increase");
  }
  if (!(match_tolerance >= 0)) throw std::invalid_argument("ODS match tolerance must be >= 0");
}

ODSAccumulator::ODSAccumulator(int num_categories, ODSConfig cfg) : n_(num_categories), cfg_(std::move(cfg)) {
  cfg_.validate();
  counts_.assign(cfg_.thresholds.size(), std::vector<MatchCounts>(n_));
}

void ODSAccumulator::add(const Tensor& probs, const SemanticBoundaryTensor& gt) {
  const Shape& s = probs.shape();
  if (s.n != 1 || s.c != n_ || gt.num_categories() != n_ || gt.height() != s.h || gt.width() != s.w) {
    throw std::invalid_argument("ODSAccumulator::add: probabilities " + s.str() + " vs ground truth " +
                                std::to_string(gt.num_categories()) + "x" + std::to_string(gt.height()) + "x" +
                                std::to_string(gt.width()));
  }
  ++images_;
#pragma omp parallel for schedule(dynamic)
  for (int c = 0; c < n_; ++c) {
    BinaryMask g = gt.channel_mask(c);
    if (cfg_.thinning) g = thin(g);
    const real* p = probs.plane(0, c);
    BinaryMask b(s.h, s.w, 0), prev;
    MatchCounts prev_counts;
    for (std::size_t t = 0; t < cfg_.thresholds.size(); ++t) {
      bool any = false;
      for (std::size_t i = 0; i < b.size(); ++i) {
        b[i] = p[i] >= cfg_.thresholds[t];
        any = any || b[i];
      }
      if (b == prev) {
        // no probability fell between the two thresholds
        counts_[t][c] += prev_counts;
        continue;
      }
      if (!any) {
        // nothing predicted here or at any higher threshold
        MatchCounts m;
        for (auto v : g.values()) m.gt_total += v != 0;
        for (std::size_t u = t; u < cfg_.thresholds.size(); ++u) counts_[u][c] += m;
        break;
      }
      prev_counts = greedy_match(cfg_.thinning ? thin(b) : b, g, cfg_.match_tolerance);
      prev = b;
      counts_[t][c] += prev_counts;
    }
  }
}

void ODSAccumulator::merge(const ODSAccumulator& other) {
  if (other.n_ != n_ || other.cfg_.thresholds != cfg_.thresholds) throw std::invalid_argument("ODS merge mismatch");
  images_ += other.images_;
  for (std::size_t t = 0; t < counts_.size(); ++t)
    for (int c = 0; c < n_; ++c) counts_[t][c] += other.counts_[t][c];
}

ODSResult ODSAccumulator::result() const {
  if (images_ == 0) throw std::invalid_argument("ODS over an empty dataset");
  ODSResult r;
  for (int c = 0; c < n_; ++c) {
    if (counts_[0][c].gt_total == 0) {
      r.per_category.push_back(kNaN);
      r.best_threshold.push_back(kNaN);
      continue;
    }
    double best = -1, at = 0;
    for (std::size_t t = 0; t < counts_.size(); ++t) {
      const double f = counts_[t][c].fscore();
      if (f > best) {
        best = f;
        at = cfg_.thresholds[t];
      }
    }
    r.per_category.push_back(best);
    r.best_threshold.push_back(at);
  }
  r.mf = mean_defined(r.per_category);
  return r;
}

ODSResult sbd_max_fscore_ods(std::span<const Tensor> probs, std::span<const SemanticBoundaryTensor> gt,
                             const ODSConfig& cfg) {
  if (probs.empty()) throw std::invalid_argument("sbd_max_fscore_ods: empty dataset");
  if (probs.size() != gt.size()) throw std::invalid_argument("sbd_max_fscore_ods: prediction/label count mismatch");
  ODSAccumulator acc(probs[0].c(), cfg);
  for (std::size_t i = 0; i < probs.size(); ++i) acc.add(probs[i], gt[i]);
  return acc.result();
}

SBCB_NAMESPACE_END
