#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "sbcb/autograd.hpp"
#include "sbcb/boundary_gen.hpp"
#include "sbcb/sbd_heads.hpp"

SBCB_NAMESPACE_BEGIN

/// Mean cross-entropy over non-ignored pixels of a (N, C, H, W) batch. When
/// every pixel is ignored the loss is 0 and `all_ignored` is set.
Var seg_cross_entropy(const Var& logits, std::span<const LabelMap> labels, int ignore_index,
                      bool* all_ignored = nullptr);

enum class BalanceMode {
  kPerImage,     // rho over the whole N_cat x H x W target of an image
  kPerCategory,  // rho per image and channel
  kNone,
};

std::string to_string(BalanceMode m);
BalanceMode balance_mode_from_string(const std::string& s);

struct BceOptions {
  BalanceMode balance = BalanceMode::kPerImage;
  /// Drop every channel at pixels whose label is the ignore index.
  bool mask_ignore = true;
  int ignore_index = kDefaultIgnoreIndex;
};

/// Class-balanced multi-label BCE on logits: positives weighted (1 - rho),
/// negatives rho, averaged over all counted entries. A group whose rho is 0
/// or 1 falls back to unit weights and sets `fallback`. `labels` is only
/// consulted for ignore masking and may be empty.
Var balanced_multilabel_bce(const Var& logits, std::span<const SemanticBoundaryTensor> targets,
                            const BceOptions& opt = {}, std::span<const LabelMap> labels = {},
                            bool* fallback = nullptr);

struct LossWeights {
  double alpha = 5.0;
  double beta = 1.0;
  double aux = 0.4;
  void validate() const;
};

struct LossReport {
  double total = 0;
  double seg_ce = 0;
  std::optional<double> aux_ce;
  std::vector<double> sbd_bce;
  std::vector<double> bdry_bce;
  bool seg_all_ignored = false;
  bool bce_fallback = false;

  /// seg + aux_w * aux + alpha * sum(sbd) + beta * sum(bdry), in double.
  double recompose(const LossWeights& w) const;
};

struct LossTargets {
  std::span<const LabelMap> labels;
  /// Per image, N_cat channels.
  std::span<const SemanticBoundaryTensor> semantic;
  /// Per image, a single channel. Needed by BBCB and DDS.
  std::span<const SemanticBoundaryTensor> binary;
};

struct LossResult {
  Var total;
  LossReport report;
};

/// Segmentation CE + alpha * sum over {semantic side, fuse} + beta * sum over
/// the supervised binary sides, plus the weighted auxiliary CE when
/// `aux_logits` is defined. `head` may be null for a plain model.
LossResult total_loss(const Var& seg_logits, const HeadOutputs* head, HeadVariant variant, const Var& aux_logits,
                      const LossTargets& targets, const LossWeights& weights, const BceOptions& bce = {});

SBCB_NAMESPACE_END
