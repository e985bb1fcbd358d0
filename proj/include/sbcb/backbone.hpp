#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "sbcb/nn.hpp"

SBCB_NAMESPACE_BEGIN

/// One feature map emitted by a backbone. `side` is the 1-based side number
/// (the stem is side 1); branching backbones emit several features with the
/// same side number.
struct StageSpec {
  int side = 1;
  std::string name;
  int channels = 1;
  /// Input extent divided by feature extent: 1, 2, 4, 8, 16 or 32.
  int downsample = 1;

  double resolution() const { return 1.0 / downsample; }
};

/// Indices into a backbone's feature list that are resized to the largest
/// member resolution and concatenated along channels.
struct TapGroup {
  std::vector<int> features;
};

struct SideTapSpec {
  std::vector<TapGroup> binary_sides;
  TapGroup semantic_side;

  /// Groups every feature whose side number is listed; the last listed side
  /// becomes the semantic side.
  static SideTapSpec from_sides(const std::vector<StageSpec>& stages, const std::vector<int>& sides);
  /// Throws std::invalid_argument on empty selections, unknown features, a
  /// semantic side that is not the deepest selection, or a first binary side
  /// that is not the highest-resolution selection.
  void validate(const std::vector<StageSpec>& stages) const;

  int num_sides() const { return static_cast<int>(binary_sides.size()) + 1; }
  /// Channels of each side after concatenation (binary sides, then semantic).
  std::vector<int> side_channels(const std::vector<StageSpec>& stages) const;
  std::vector<TapGroup> all_sides() const;
};

/// BiSeNet/STDC-style taps: the named detail stages feed the binary sides and
/// the named aggregation output feeds the semantic side.
SideTapSpec two_path_taps(const std::vector<StageSpec>& stages, const std::vector<std::string>& detail_stages,
                          const std::string& semantic_output);

struct BackboneOutput {
  Var final;
  std::vector<Var> features;
};

class Backbone : public Module {
 public:
  virtual std::vector<StageSpec> stage_specs() const = 0;
  virtual BackboneOutput forward(const Var& x) = 0;
  virtual int final_channels() const = 0;
  /// Downsampling factor of the final feature.
  virtual int final_downsample() const = 0;
};

/// Stride/dilation rewrite of a stem + four-stage backbone. Only geometry
/// changes; the parameter set is untouched.
struct BackboneTrickConfig {
  int stem_stride = 2;
  std::vector<int> strides{1, 2, 2, 2};
  std::vector<int> dilations{1, 1, 1, 1};

  /// "original", "segmentation" or "edge".
  static BackboneTrickConfig named(const std::string& row);
  /// Plain downsampling geometry for a backbone with `stages` stages.
  static BackboneTrickConfig original(int stages);
  bool operator==(const BackboneTrickConfig&) const = default;
};

struct ToyBackboneConfig {
  int input_channels = 3;
  /// Stem followed by the stages, e.g. {8, 16, 32, 64, 64}.
  std::vector<int> stage_channels{8, 16, 32, 64, 64};
  BackboneTrickConfig trick{};
  std::uint64_t seed = 0;
};

/// Plain conv-norm-activation pyramid: stem (side 1), then one 3x3 block per
/// stage. The first stage starts with a 2x2 max pool, as a ResNet stem does.
class ToyBackbone : public Backbone {
 public:
  explicit ToyBackbone(ToyBackboneConfig cfg);

  std::vector<StageSpec> stage_specs() const override;
  BackboneOutput forward(const Var& x) override;
  int final_channels() const override { return cfg_.stage_channels.back(); }
  int final_downsample() const override;
  const ToyBackboneConfig& config() const { return cfg_; }

  static std::size_t analytic_parameter_count(const std::vector<int>& stage_channels, int input_channels);

 private:
  ToyBackboneConfig cfg_;
  std::shared_ptr<ConvNormAct> stem_;
  std::vector<std::shared_ptr<ConvNormAct>> stages_;
};

std::shared_ptr<ToyBackbone> toy_backbone(const std::vector<int>& stage_channels, int input_channels,
                                          std::uint64_t seed = 0, const BackboneTrickConfig& trick = {});

/// Rebuilds `backbone` with new strides/dilations and copies every weight and
/// running statistic, so the rewritten network is the same parameter set.
std::shared_ptr<ToyBackbone> apply_backbone_trick(const ToyBackbone& backbone, const BackboneTrickConfig& trick);

struct ToyMultiBranchConfig {
  int input_channels = 3;
  int stem_channels = 8;
  /// Channels of the highest-resolution branch; branch b has width << b.
  int base_channels = 8;
  std::uint64_t seed = 0;
};

/// HRNet-shaped toy: stem at 1/2 (side 1), then four stages where stage k
/// carries k parallel branches at 1/4 ... 1/2^(k+1). The final feature is the
/// concatenation of the last stage's branches at 1/4.
class ToyMultiBranchBackbone : public Backbone {
 public:
  explicit ToyMultiBranchBackbone(ToyMultiBranchConfig cfg);

  std::vector<StageSpec> stage_specs() const override;
  BackboneOutput forward(const Var& x) override;
  int final_channels() const override;
  int final_downsample() const override { return 4; }

 private:
  ToyMultiBranchConfig cfg_;
  std::shared_ptr<ConvNormAct> stem_, stem2_;
  // stage -> branch blocks; transitions_[k] opens the new lowest branch of stage k.
  std::vector<std::vector<std::shared_ptr<ConvNormAct>>> branches_;
  std::vector<std::shared_ptr<ConvNormAct>> transitions_;
};

struct TapOutput {
  Var final;
  /// Binary sides in order, then the semantic side.
  std::vector<Var> sides;
  std::vector<Var> features;
};

/// Read-only observer of backbone stage outputs. Registering taps never
/// changes the backbone's own computation.
class TappedBackbone {
 public:
  TappedBackbone(std::shared_ptr<Backbone> backbone, SideTapSpec taps);

  TapOutput forward(const Var& x) const;
  const SideTapSpec& taps() const { return taps_; }
  Backbone& backbone() const { return *backbone_; }
  std::vector<int> side_channels() const;

 private:
  std::shared_ptr<Backbone> backbone_;
  SideTapSpec taps_;
};

TappedBackbone register_taps(std::shared_ptr<Backbone> backbone, const SideTapSpec& taps);

/// Resizes each member of a group to the largest member resolution and
/// concatenates along channels.
Var gather_group(const std::vector<Var>& features, const TapGroup& group);

SBCB_NAMESPACE_END
