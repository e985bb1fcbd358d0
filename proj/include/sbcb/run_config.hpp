#pragma once

#include <cstdint>
#include <filesystem>
#include <nlohmann/json.hpp>
#include <string>
#include <vector>

#include "sbcb/boundary_gen.hpp"
#include "sbcb/losses.hpp"
#include "sbcb/model.hpp"
#include "sbcb/pipeline.hpp"

SBCB_NAMESPACE_BEGIN

struct DataConfig {
  /// "synthetic" or "directory".
  std::string kind = "synthetic";
  int num_train = 500;
  int num_val = 100;
  int size = 64;
  double noise = 0.08;
  std::uint64_t seed = 1234;
  std::string train_dir;
  std::string val_dir;
};

struct OptimizerConfig {
  double lr = 0.01;
  double momentum = 0.9;
  double weight_decay = 5e-4;
};

struct ScheduleConfig {
  int max_iter = 2000;
  /// Taken as written for the poly schedule (9, not the usual 0.9).
  double power = 9.0;
};

struct EvalConfig {
  std::vector<int> widths{3, 5, 9, 12};
  bool ods = true;
  int ods_thresholds = 99;
  double match_tolerance = 2.0;
  bool thinning = true;
  /// Boundary radius for the ODS ground truth.
  double ods_radius = 1.0;
  /// "whole" or "slide".
  std::string mode = "whole";
  int window_h = 512, window_w = 1024;
  int stride_h = 341, stride_w = 683;
  bool ms_flip = false;
  std::vector<double> scales{0.5, 0.75, 1.0, 1.25, 1.5, 1.75, 2.0};
  int error_maps = 0;
};

struct RunConfig {
  std::uint64_t seed = 0;
  int num_categories = 5;
  std::vector<std::string> categories;
  int ignore_index = kDefaultIgnoreIndex;
  ModelConfig model;
  LossWeights loss;
  BceOptions bce;
  BoundaryGenConfig boundary;
  AugmentConfig augment;
  OptimizerConfig optimizer;
  ScheduleConfig schedule;
  int batch_size = 8;
  int eval_interval = 0;
  int checkpoint_interval = 0;
  int log_interval = 10;
  int queue_depth = 2;
  DataConfig data;
  EvalConfig eval;
  std::string output_dir = "runs/default";

  /// Copies shared fields (categories, seed, ignore index) into the
  /// sub-configs and checks everything.
  void finalize();
  /// Category names; "c<i>" where none were given.
  std::vector<std::string> category_names() const;
};

nlohmann::json to_json(const RunConfig& cfg);
/// Starts from the defaults; unknown keys are rejected.
RunConfig run_config_from_json(const nlohmann::json& j);
RunConfig load_run_config(const std::filesystem::path& path, const std::vector<std::string>& overrides = {});
/// "a.b.c=value"; the value is parsed as JSON when possible, else taken as a
/// string. The key must already exist.
void apply_override(nlohmann::json& j, const std::string& override);

nlohmann::json to_json(const ModelConfig& cfg);
ModelConfig model_config_from_json(const nlohmann::json& j);

/// FNV-1a of the canonical JSON dump, as 16 hex digits.
std::string config_hash(const nlohmann::json& j);

SBCB_NAMESPACE_END
