#pragma once

#include <memory>
#include <string>
#include <vector>

#include "sbcb/nn.hpp"

SBCB_NAMESPACE_BEGIN

enum class HeadVariant { kCASENet, kDFF, kDDS, kBBCB };

std::string to_string(HeadVariant v);
HeadVariant head_variant_from_string(const std::string& s);

struct HeadConfig {
  HeadVariant variant = HeadVariant::kCASENet;
  int num_categories = 1;
  /// Channels per tapped side: binary sides first, semantic side last.
  std::vector<int> side_channels;

  int num_sides() const { return static_cast<int>(side_channels.size()); }
  /// Width of the semantic side and of the fused output (1 for BBCB).
  int output_channels() const { return variant == HeadVariant::kBBCB ? 1 : num_categories; }
  void validate() const;
};

struct HeadOutputs {
  Var fuse_logits;
  Var semantic_side_logits;
  /// Supervised binary side outputs (DDS only).
  std::vector<Var> binary_side_logits;

  std::vector<Var> sbd_set() const { return {semantic_side_logits, fuse_logits}; }
};

/// Side features after the 1x1 projection and before upsampling; what the
/// channel-merge fusion consumes.
struct HeadProjection {
  std::vector<Var> binary;
  Var semantic;
};

/// 1x1 conv -> bilinear upsample to the target -> 3x3 conv that keeps the
/// channel count (depthwise when out > 1).
class SideLayer : public Module {
 public:
  SideLayer(int in_channels, int out_channels, Rng& rng);
  Var project(const Var& feature) const;
  Var finish(const Var& projected, int height, int width) const;
  Var forward(const Var& feature, int height, int width) const { return finish(project(feature), height, width); }

  Conv2d& projection() { return *proj_; }
  Conv2d& smoothing() { return *smooth_; }
  static std::size_t count(int in_channels, int out_channels);

 private:
  std::shared_ptr<Conv2d> proj_, smooth_;
};

/// Two 3x3 convs with an identity skip.
class BasicResBlock : public Module {
 public:
  BasicResBlock(int channels, Rng& rng);
  Var forward(const Var& x) const;
  ConvNormAct& first() { return *a_; }
  ConvNormAct& second() { return *b_; }
  static std::size_t count(int channels);

 private:
  std::shared_ptr<ConvNormAct> a_, b_;
};

/// Interleaves per category: block c is [b_1, ..., b_{K-1}, semantic_c].
Var sliced_concat(const std::vector<Var>& binary, const Var& semantic);

/// Grouped 1x1 conv, one group of K slices per category.
class FuseLayer : public Module {
 public:
  FuseLayer(int num_categories, int slices_per_category);
  Var forward(const Var& sliced) const;
  Conv2d& conv() { return *conv_; }
  static std::size_t count(int num_categories, int slices_per_category);

 private:
  int n_, k_;
  std::shared_ptr<Conv2d> conv_;
};

/// Location-specific weights for DFF: two 3x3 conv-norm-act layers, then a
/// 1x1 conv back to K*N_cat channels.
class AdaptiveWeightLearner : public Module {
 public:
  AdaptiveWeightLearner(int channels, Rng& rng);
  Var forward(const Var& sliced) const;
  static std::size_t count(int channels);

 private:
  std::shared_ptr<ConvNormAct> a_, b_;
  std::shared_ptr<Conv2d> out_;
};

/// weights * sliced, summed within each category group.
Var dff_fuse(const Var& sliced, const Var& weights, int num_categories);

/// CASENet / DFF / DDS / BBCB head over an arbitrary number of sides.
class SbdHead : public Module {
 public:
  SbdHead(HeadConfig cfg, Rng& rng);

  const HeadConfig& config() const { return cfg_; }
  HeadProjection project(const std::vector<Var>& sides) const;
  HeadOutputs finish(const HeadProjection& projected, int height, int width) const;
  HeadOutputs forward(const std::vector<Var>& sides, int height, int width) const {
    return finish(project(sides), height, width);
  }

  SideLayer& side(int i) { return *sides_.at(i); }
  FuseLayer& fuse() { return *fuse_; }

  /// Closed-form parameter count for a configuration.
  static std::size_t count(const HeadConfig& cfg);

 private:
  HeadConfig cfg_;
  std::vector<std::shared_ptr<SideLayer>> sides_;
  std::vector<std::vector<std::shared_ptr<BasicResBlock>>> blocks_;
  std::shared_ptr<FuseLayer> fuse_;
  std::shared_ptr<AdaptiveWeightLearner> learner_;
};

/// conv3x3-norm-act + 1x1 classifier, logits upsampled to the target.
class FcnAuxHead : public Module {
 public:
  FcnAuxHead(int in_channels, int mid_channels, int num_categories, Rng& rng);
  Var forward(const Var& feature, int height, int width) const;
  static std::size_t count(int in_channels, int mid_channels, int num_categories);

 private:
  std::shared_ptr<ConvNormAct> body_;
  std::shared_ptr<Conv2d> cls_;
};

SBCB_NAMESPACE_END
