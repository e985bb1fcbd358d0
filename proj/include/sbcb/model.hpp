#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "sbcb/backbone.hpp"
#include "sbcb/fusion.hpp"
#include "sbcb/sbd_heads.hpp"

SBCB_NAMESPACE_BEGIN

struct ModelConfig {
  int num_categories = 5;
  int input_channels = 3;
  /// "toy" or "toy_multibranch".
  std::string backbone = "toy";
  std::vector<int> stage_channels{8, 16, 32, 32, 32};
  /// Backbone trick row for the toy backbone.
  std::string trick = "segmentation";
  /// Branch width for the multi-branch backbone.
  int branch_channels = 8;
  int seg_head_channels = 32;

  bool sbd_head = true;
  HeadVariant head_variant = HeadVariant::kCASENet;
  std::vector<int> sides{1, 2, 3, 5};

  bool fcn_aux = false;
  int aux_side = 4;
  int aux_channels = 32;

  MergeConfig fusion{};
  std::uint64_t seed = 0;

  void validate() const;
  /// The same network without the SBD head, auxiliary head or fusion.
  ModelConfig baseline() const;
};

std::shared_ptr<Backbone> make_backbone(const ModelConfig& cfg);

/// Context conv-norm-act then a 1x1 classifier; a stand-in for ASPP/PPM.
class SegHead : public Module {
 public:
  SegHead(int in_channels, int mid_channels, int num_categories, Rng& rng);
  Var context(const Var& x) const { return context_->forward(x); }
  Var classify(const Var& h) const { return cls_->forward(h); }
  int in_channels() const { return context_->conv().in_channels(); }
  int mid_channels() const { return context_->conv().out_channels(); }

 private:
  std::shared_ptr<ConvNormAct> context_;
  std::shared_ptr<Conv2d> cls_;
};

struct ModelOutputs {
  /// Upsampled to the input resolution.
  Var seg_logits;
  Var aux_logits;
  std::optional<HeadOutputs> head;
};

/// Backbone + segmentation head, with the optional training-time SBD head,
/// FCN auxiliary head and fusion. Parameters are named "backbone.*",
/// "seg_head.*", "sbd_head.*", "aux_head.*" and "fusion.*"; each part draws
/// its initial weights from its own seed stream, so attaching the SBD head
/// does not change the backbone or segmentation-head initialisation.
class SegModel : public Module {
 public:
  explicit SegModel(ModelConfig cfg);

  const ModelConfig& config() const { return cfg_; }
  /// Full training-time forward pass.
  ModelOutputs forward(const Var& images) const;
  /// Segmentation logits only. Skips the SBD head unless fusion needs it.
  Var segment(const Var& images) const;

  Backbone& backbone() const { return *backbone_; }
  bool has_head() const { return static_cast<bool>(head_); }
  SbdHead* head() const { return head_.get(); }
  SegHead& seg_head() const { return *seg_head_; }
  ChannelMerge* channel_merge() const { return merge_.get(); }
  TwoStreamMerge* two_stream() const { return two_stream_.get(); }
  const SideTapSpec& taps() const { return taps_; }

  /// Parameter count of backbone + segmentation head.
  std::size_t baseline_parameter_count() const;

 private:
  ModelOutputs run(const Var& images, bool with_head) const;

  ModelConfig cfg_;
  std::shared_ptr<Backbone> backbone_;
  SideTapSpec taps_;
  TapGroup aux_tap_;
  std::shared_ptr<SegHead> seg_head_;
  std::shared_ptr<SbdHead> head_;
  std::shared_ptr<FcnAuxHead> aux_;
  std::shared_ptr<ChannelMerge> merge_;
  std::shared_ptr<TwoStreamMerge> two_stream_;
};

/// Copies every parameter and buffer of `src` whose name exists in `dst`
/// (matching shapes required). Returns the number of tensors copied.
std::size_t copy_matching_state(const Module& src, Module& dst);

SBCB_NAMESPACE_END
