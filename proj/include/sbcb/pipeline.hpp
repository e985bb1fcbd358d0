#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "sbcb/boundary_gen.hpp"
#include "sbcb/random.hpp"
#include "sbcb/tensor.hpp"

SBCB_NAMESPACE_BEGIN

struct RawSample {
  /// (1, 3, H, W), RGB in [0, 1].
  Tensor image;
  LabelMap labels;
  std::optional<InstanceMap> instances;
  std::string id;

  void validate() const;
};

/// A sample with boundary targets generated from its (final) labels.
struct Sample : RawSample {
  SemanticBoundaryTensor boundaries;
  /// Single-channel union of `boundaries`, when requested.
  std::optional<SemanticBoundaryTensor> binary_boundary;
};

class Dataset {
 public:
  virtual ~Dataset() = default;
  virtual std::size_t size() const = 0;
  virtual RawSample get(std::size_t index) const = 0;
  virtual bool has_instances() const = 0;
};

class InMemoryDataset : public Dataset {
 public:
  InMemoryDataset() = default;
  explicit InMemoryDataset(std::vector<RawSample> samples);
  std::size_t size() const override { return samples_.size(); }
  RawSample get(std::size_t index) const override { return samples_.at(index); }
  bool has_instances() const override;
  const std::vector<RawSample>& samples() const { return samples_; }

 private:
  std::vector<RawSample> samples_;
};

/// `images/`, `labels/` and optional `instances/` under one root, paired by
/// file stem. Shapes are checked when the dataset is opened; files are read
/// again on access.
class DirectoryDataset : public Dataset {
 public:
  explicit DirectoryDataset(const std::filesystem::path& root);
  std::size_t size() const override { return entries_.size(); }
  RawSample get(std::size_t index) const override;
  bool has_instances() const override { return has_instances_; }
  const std::filesystem::path& root() const { return root_; }

 private:
  struct Entry {
    std::string stem;
    std::filesystem::path image, labels, instances;
  };
  std::filesystem::path root_;
  std::vector<Entry> entries_;
  bool has_instances_ = false;
};

std::shared_ptr<DirectoryDataset> load_directory_dataset(const std::filesystem::path& root);

/// Writes a dataset in the directory layout read by DirectoryDataset.
void save_directory_dataset(const Dataset& data, const std::filesystem::path& root);

struct AugmentConfig {
  double scale_lo = 0.5, scale_hi = 2.0;
  int crop_h = 512, crop_w = 1024;
  double hflip_prob = 0.5;
  bool photometric = true;
  /// Max additive brightness shift (image in [0, 1]).
  double brightness = 32.0 / 255.0;
  /// Contrast and saturation factors drawn from [1 - v, 1 + v].
  double contrast = 0.5;
  double saturation = 0.5;
  /// Max hue rotation as a fraction of the full circle.
  double hue = 18.0 / 360.0;
  int ignore_index = kDefaultIgnoreIndex;

  void validate() const;
  /// No scaling, flipping or jitter; crop equal to the image.
  static AugmentConfig identity(int height, int width);
};

/// Scale (bilinear image, nearest labels/instances), random crop padded with
/// the ignore index, optional horizontal flip, then photometric jitter on the
/// image only.
RawSample augment(const RawSample& sample, const AugmentConfig& cfg, Rng& rng);

/// Generates the boundary targets from the sample's current labels.
Sample attach_targets(RawSample sample, int num_categories, const BoundaryGenConfig& cfg, bool need_binary);

struct SynthConfig {
  int num_samples = 500;
  int size = 64;
  int num_categories = 5;
  std::uint64_t seed = 0;
  /// Per-pixel Gaussian colour noise.
  double noise = 0.08;
};

/// Ellipses, polygons and 1-3 px bars over a background (category 0), one
/// instance id per shape. Deterministic in the seed.
InMemoryDataset synth_shapes(const SynthConfig& cfg);
InMemoryDataset synth_shapes(int num_samples, int size, int num_categories, std::uint64_t seed);

struct Batch {
  /// Normalised model input (N, 3, H, W).
  Tensor images;
  std::vector<LabelMap> labels;
  std::vector<SemanticBoundaryTensor> semantic;
  std::vector<SemanticBoundaryTensor> binary;
  std::vector<std::string> ids;
};

/// Maps [0, 1] RGB to the model's input range.
Tensor normalize_images(const Tensor& images);

/// Stacks samples of equal extent into a batch.
Batch collate(const std::vector<Sample>& samples);

SBCB_NAMESPACE_END
