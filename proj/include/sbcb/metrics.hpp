#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "sbcb/boundary_gen.hpp"
#include "sbcb/tensor.hpp"

SBCB_NAMESPACE_BEGIN

struct IoUResult {
  /// NaN for categories absent from both prediction and ground truth.
  std::vector<double> per_category;
  double mean = 0;
};

/// Rows are ground truth, columns are predictions. Ignore pixels are skipped.
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(int num_categories);

  void add(const LabelMap& pred, const LabelMap& gt, int ignore_index = kDefaultIgnoreIndex);
  void merge(const ConfusionMatrix& other);
  std::int64_t at(int gt, int pred) const { return counts_[static_cast<std::size_t>(gt) * n_ + pred]; }
  int num_categories() const { return n_; }
  IoUResult iou() const;

 private:
  int n_;
  std::vector<std::int64_t> counts_;
};

IoUResult miou(std::span<const LabelMap> preds, std::span<const LabelMap> gts, int num_categories,
               int ignore_index = kDefaultIgnoreIndex);

/// Match counts for one boundary comparison. Precision counts matched
/// predicted pixels, recall matched ground-truth pixels.
struct MatchCounts {
  std::int64_t pred_matched = 0, pred_total = 0;
  std::int64_t gt_matched = 0, gt_total = 0;

  MatchCounts& operator+=(const MatchCounts& o);
  double precision() const;
  double recall() const;
  /// 1 when both sides are empty, 0 when only one is.
  double fscore() const;
};

/// Pixels of `mask` with a 4-neighbour outside the mask (image edges do not count).
BinaryMask mask_boundary(const BinaryMask& mask);

struct BoundaryFScoreConfig {
  int trimap_width = 3;
  void validate() const;
};

/// Each predicted boundary pixel matches when a ground-truth boundary pixel
/// lies within `width` (Euclidean), and vice versa. Pixels where `valid` is 0
/// are dropped from both sides.
MatchCounts boundary_match_counts(const BinaryMask& pred_boundary, const BinaryMask& gt_boundary, double width,
                                  const BinaryMask* valid = nullptr);

/// F-score between the boundaries of two masks.
double boundary_fscore(const BinaryMask& pred_mask, const BinaryMask& gt_mask, const BoundaryFScoreConfig& cfg = {});

struct BoundaryFScoreResult {
  int width = 0;
  /// NaN for categories with no boundary pixels on either side over the data.
  std::vector<double> per_category;
  double mean = 0;
};

/// Dataset-level trimap F-score per category for several widths. Counts are
/// summed over images before the F-score is taken. Pixels on or 4-adjacent
/// to an ignore pixel are excluded.
class BoundaryFScoreAccumulator {
 public:
  BoundaryFScoreAccumulator(int num_categories, std::vector<int> widths, int ignore_index = kDefaultIgnoreIndex);
  void add(const LabelMap& pred, const LabelMap& gt);
  void merge(const BoundaryFScoreAccumulator& other);
  std::vector<BoundaryFScoreResult> result() const;
  const std::vector<int>& widths() const { return widths_; }

 private:
  int n_;
  std::vector<int> widths_;
  int ignore_;
  // [width][category]
  std::vector<std::vector<MatchCounts>> counts_;
};

/// Zhang-Suen thinning to a one-pixel skeleton.
BinaryMask thin(const BinaryMask& mask);

/// One-to-one matching: predicted pixels in raster order each take the
/// nearest unmatched ground-truth pixel within `tolerance`.
MatchCounts greedy_match(const BinaryMask& pred, const BinaryMask& gt, double tolerance);

struct ODSConfig {
  std::vector<double> thresholds = default_thresholds(99);
  double match_tolerance = 2.0;
  bool thinning = true;

  /// n thresholds spaced uniformly in (0, 1): k / (n + 1).
  static std::vector<double> default_thresholds(int n);
  void validate() const;
};

struct ODSResult {
  double mf = 0;
  /// NaN for categories with no ground-truth boundary in the data.
  std::vector<double> per_category;
  std::vector<double> best_threshold;
};

/// Accumulates thresholded, thinned, tolerance-matched counts per category
/// and threshold; mF takes one dataset-wide threshold per category.
class ODSAccumulator {
 public:
  ODSAccumulator(int num_categories, ODSConfig cfg);
  /// `probs` is (1, N_cat, H, W) with values in [0, 1].
  void add(const Tensor& probs, const SemanticBoundaryTensor& gt);
  void merge(const ODSAccumulator& other);
  std::size_t images() const { return images_; }
  ODSResult result() const;

 private:
  int n_;
  ODSConfig cfg_;
  std::size_t images_ = 0;
  // [threshold][category]
  std::vector<std::vector<MatchCounts>> counts_;
};

ODSResult sbd_max_fscore_ods(std::span<const Tensor> probs, std::span<const SemanticBoundaryTensor> gt,
                             const ODSConfig& cfg = {});

SBCB_NAMESPACE_END
