#pragma once

#include <condition_variable>
#include <deque>
#include <filesystem>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "sbcb/metrics.hpp"
#include "sbcb/run_config.hpp"

SBCB_NAMESPACE_BEGIN

/// lr0 * (1 - iter / max_iter)^power.
double poly_lr(int iter, int max_iter, double lr0, double power);

/// SGD with momentum and L2 weight decay, using the PyTorch update:
/// g += wd * p; buf = momentum * buf + g (buf = g on the first step);
/// p -= lr * buf. Parameters that received no gradient are skipped.
class Sgd {
 public:
  Sgd(std::vector<NamedParameter> params, OptimizerConfig cfg);
  void step(double lr);
  void zero_grad();

  const std::vector<NamedParameter>& params() const { return params_; }
  /// Empty until the parameter's first update.
  std::vector<Tensor>& momentum() { return momentum_; }
  const std::vector<Tensor>& momentum() const { return momentum_; }

 private:
  std::vector<NamedParameter> params_;
  OptimizerConfig cfg_;
  std::vector<Tensor> momentum_;
};

/// Batch for iteration i as a pure function of (config, dataset, i): epoch
/// order and per-sample augmentation draw from seed streams, so a resumed or
/// re-threaded run sees the same data. The last partial batch of an epoch is
/// dropped.
class BatchSource {
 public:
  BatchSource(std::shared_ptr<const Dataset> data, const RunConfig& cfg);
  Batch make(int iteration) const;
  int batches_per_epoch() const { return batches_per_epoch_; }
  /// Dataset indices used by `iteration`.
  std::vector<std::size_t> indices(int iteration) const;

 private:
  std::shared_ptr<const Dataset> data_;
  RunConfig cfg_;
  bool need_binary_;
  int batches_per_epoch_;
};

/// One worker thread building batches [begin, end) ahead of the consumer,
/// holding at most `depth` finished batches.
class BatchQueue {
 public:
  BatchQueue(const BatchSource& source, int begin, int end, int depth);
  ~BatchQueue();
  BatchQueue(const BatchQueue&) = delete;
  BatchQueue& operator=(const BatchQueue&) = delete;
  /// Rethrows worker exceptions.
  Batch pop();

 private:
  void work();

  const BatchSource& source_;
  int next_, end_, depth_;
  std::mutex mu_;
  std::condition_variable cv_;
  std::deque<Batch> ready_;
  std::exception_ptr error_;
  bool stop_ = false;
  std::thread worker_;
};

struct EvalReport {
  std::size_t images = 0;
  IoUResult iou;
  std::vector<BoundaryFScoreResult> fscores;
  std::optional<ODSResult> ods;

  /// F-score for a width; throws if it was not evaluated.
  const BoundaryFScoreResult& fscore(int width) const;
  nlohmann::json to_json(const std::vector<std::string>& names) const;
  std::string summary_table(const std::vector<std::string>& names) const;
};

/// Dataset-level accumulation of every evaluation metric.
class Evaluator {
 public:
  /// `ods_categories` is the boundary channel count (0 skips ODS).
  Evaluator(int num_categories, const EvalConfig& cfg, int ignore_index, int ods_categories = 0);
  void add_segmentation(const LabelMap& pred, const LabelMap& gt);
  /// `probs` (1, N_cat, H, W) in [0, 1].
  void add_boundaries(const Tensor& probs, const SemanticBoundaryTensor& gt);
  EvalReport report() const;

 private:
  int n_, ignore_;
  std::size_t images_ = 0;
  ConfusionMatrix confusion_;
  BoundaryFScoreAccumulator bf_;
  std::optional<ODSAccumulator> ods_;
};

LabelMap argmax_labels(const Tensor& logits);

/// Segmentation logits (1, N_cat, H, W) for one [0, 1] image using the
/// configured whole/slide mode and optional multi-scale + flip averaging.
Tensor predict_logits(const SegModel& model, const Tensor& image, const EvalConfig& cfg);

/// Runs the model over a dataset in eval mode. ODS is computed when the
/// model carries an SBD head and `cfg.eval.ods` is set. When `out_dir` is
/// non-empty, writes eval_report.jsonl, eval_summary.txt and up to
/// `cfg.eval.error_maps` error-map PNGs.
EvalReport evaluate(SegModel& model, const Dataset& data, const RunConfig& cfg,
                    const std::filesystem::path& out_dir = {});

struct StepRecord {
  int iteration = 0;
  double lr = 0;
  LossReport loss;
};

class NonFiniteLoss : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class Trainer {
 public:
  Trainer(RunConfig cfg, std::shared_ptr<const Dataset> train, std::shared_ptr<const Dataset> val = nullptr);

  /// Trains up to `stop_at` iterations (max_iter when negative), evaluating,
  /// checkpointing and logging at the configured intervals. A final
  /// checkpoint is written when max_iter is reached and output_dir is set.
  void run(int stop_at = -1);
  /// One optimisation step at the current iteration.
  StepRecord step(const Batch& batch);

  int iteration() const { return iteration_; }
  const RunConfig& config() const { return cfg_; }
  SegModel& model() { return *model_; }
  const SegModel& model() const { return *model_; }
  const Sgd& optimizer() const { return *sgd_; }
  const BatchSource& batches() const { return *source_; }
  const std::vector<StepRecord>& history() const { return history_; }

  void save_checkpoint(const std::filesystem::path& path) const;
  /// Restores weights, BN statistics, momentum and iteration. The model
  /// configuration and seed must match this trainer's.
  void load_checkpoint(const std::filesystem::path& path);

  std::function<void(const StepRecord&)> on_step;
  std::function<void(int, const EvalReport&)> on_eval;

 private:
  void dump_batch(const Batch& batch, const LossReport& report) const;

  RunConfig cfg_;
  std::shared_ptr<const Dataset> train_, val_;
  std::unique_ptr<SegModel> model_;
  std::unique_ptr<Sgd> sgd_;
  std::unique_ptr<BatchSource> source_;
  int iteration_ = 0;
  std::vector<StepRecord> history_;
};

/// Training and validation datasets described by `cfg.data`.
std::pair<std::shared_ptr<const Dataset>, std::shared_ptr<const Dataset>> make_datasets(const RunConfig& cfg);

/// Backbone + segmentation head only; refuses models with fusion enabled,
/// since the segmentation path then depends on the SBD head.
void export_inference(const SegModel& model, const RunConfig& cfg, const std::filesystem::path& out);
void export_checkpoint(const std::filesystem::path& checkpoint, const std::filesystem::path& out);

struct LoadedModel {
  std::unique_ptr<SegModel> model;
  RunConfig config;
  nlohmann::json manifest;
  /// "checkpoint" or "inference".
  std::string kind;
  int iteration = 0;
};

/// Reads either a training checkpoint or an exported inference artifact.
LoadedModel load_weights(const std::filesystem::path& path);

SBCB_NAMESPACE_END
