#pragma once

#include <memory>
#include <string>
#include <vector>

#include "sbcb/nn.hpp"

SBCB_NAMESPACE_BEGIN

enum class FusionMode { kNone, kChannelMerge, kTwoStream };

std::string to_string(FusionMode m);
FusionMode fusion_mode_from_string(const std::string& s);

struct MergeConfig {
  FusionMode mode = FusionMode::kNone;
  int mix_layers = 2;
  /// Hidden width of the mix convs; 0 keeps the concatenated width.
  int mix_channels = 0;
  /// Two-stream projection width; 0 means N_cat.
  int projection_channels = 0;

  void validate() const;
  bool enabled() const { return mode != FusionMode::kNone; }
};

/// Side features (before their upsampling) and the segmentation head feature
/// are brought to the head resolution, concatenated and mixed by 1x1 convs.
/// The mix output is a residual: it is split back, the side slices are
/// resized to their own resolution and added to the side features, and the
/// head slice is added to the head feature. The last mix conv starts at
/// zero, so a fresh merge is the identity.
class ChannelMerge : public Module {
 public:
  ChannelMerge(std::vector<int> side_channels, int head_channels, const MergeConfig& cfg, Rng& rng);

  struct Result {
    std::vector<Var> sides;
    Var head;
  };
  Result forward(const std::vector<Var>& sides, const Var& head) const;

  int total_channels() const { return total_; }
  Conv2d& mix(int i) { return *mix_.at(i); }
  int mix_layers() const { return static_cast<int>(mix_.size()); }

 private:
  std::vector<int> side_channels_;
  int head_channels_;
  int total_;
  std::vector<std::shared_ptr<Conv2d>> mix_;
};

/// 1x1 projection of the fused boundary logits, resized to the context
/// input of the segmentation head (shape stream).
class TwoStreamMerge : public Module {
 public:
  TwoStreamMerge(int fuse_channels, int projection_channels, Rng& rng);
  Var forward(const Var& fuse_logits, int height, int width) const;
  int projection_channels() const { return proj_->out_channels(); }
  Conv2d& projection() { return *proj_; }

 private:
  std::shared_ptr<Conv2d> proj_;
};

SBCB_NAMESPACE_END
