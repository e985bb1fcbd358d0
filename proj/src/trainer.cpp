#include "sbcb/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "container.hpp"
#include "sbcb/image_io.hpp"

SBCB_NAMESPACE_BEGIN

namespace fs = std::filesystem;
using nlohmann::json;

double poly_lr(int iter, int max_iter, double lr0, double power) {
  if (max_iter <= 0 || iter < 0 || iter > max_iter) {
    throw std::invalid_argument("poly_lr: need 0 <= iter <= max_iter, got " + std::to_string(iter) + " / " +
                                std::to_string(max_iter));
  }
  return lr0 * std::pow(1.0 - static_cast<double>(iter) / max_iter, power);
}

Sgd::Sgd(std::vector<NamedParameter> params, OptimizerConfig cfg)
    : params_(std::move(params)), cfg_(cfg), momentum_(params_.size()) {}

void Sgd::zero_grad() {
  // dropping the buffer (rather than zero filling) lets step() tell
  // unreached parameters apart
  for (auto& p : params_) p.var.grad() = Tensor();
}

void Sgd::step(double lr) {
  const real wd = static_cast<real>(cfg_.weight_decay), mu = static_cast<real>(cfg_.momentum),
             rate = static_cast<real>(lr);
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Var& v = params_[i].var;
    const Tensor& g = v.grad();
    if (g.empty()) continue;
    Tensor& p = v.mutable_value();
    Tensor& buf = momentum_[i];
    const bool first = buf.empty();
    if (first) buf = Tensor(p.shape());
    real* pb = p.data();
    real* bb = buf.data();
    const real* gb = g.data();
    const std::size_t n = p.numel();
    for (std::size_t k = 0; k < n; ++k) {
      const real d = gb[k] + wd * pb[k];
      bb[k] = first ? d : mu * bb[k] + d;
      pb[k] -= rate * bb[k];
    }
  }
}

BatchSource::BatchSource(std::shared_ptr<const Dataset> data, const RunConfig& cfg)
    : data_(std::move(data)), cfg_(cfg) {
  if (!data_ || data_->size() == 0) throw std::invalid_argument("training dataset is empty");
  batches_per_epoch_ = static_cast<int>(data_->size() / cfg_.batch_size);
  if (batches_per_epoch_ == 0) {
    throw std::invalid_argument("batch_size " + std::to_string(cfg_.batch_size) + " exceeds the " +
                                std::to_string(data_->size()) + " training samples");
  }
  need_binary_ = cfg_.model.sbd_head &&
                 (cfg_.model.head_variant == HeadVariant::kBBCB || cfg_.model.head_variant == HeadVariant::kDDS);
  if (cfg_.boundary.instance_sensitive && !data_->has_instances()) {
    throw std::invalid_argument("boundary.instance_sensitive is set but the dataset has no instance maps");
  }
}

std::vector<std::size_t> BatchSource::indices(int iteration) const {
  const int epoch = iteration / batches_per_epoch_, pos = iteration % batches_per_epoch_;
  std::vector<std::size_t> order(data_->size());
  std::iota(order.begin(), order.end(), 0);
  Rng rng = make_rng(cfg_.seed, "epoch", static_cast<std::uint64_t>(epoch));
  std::shuffle(order.begin(), order.end(), rng);
  const auto b = static_cast<std::size_t>(cfg_.batch_size);
  return {order.begin() + static_cast<std::ptrdiff_t>(pos * b), order.begin() + static_cast<std::ptrdiff_t>((pos + 1) * b)};
}

Batch BatchSource::make(int iteration) const {
  const auto idx = indices(iteration);
  std::vector<Sample> samples;
  samples.reserve(idx.size());
  for (std::size_t slot = 0; slot < idx.size(); ++slot) {
    Rng rng(derive_seed(cfg_.seed, hash_tag("augment"), static_cast<std::uint64_t>(iteration), slot));
    RawSample s = augment(data_->get(idx[slot]), cfg_.augment, rng);
    samples.push_back(attach_targets(std::move(s), cfg_.num_categories, cfg_.boundary, need_binary_));
  }
  return collate(samples);
}

BatchQueue::BatchQueue(const BatchSource& source, int begin, int end, int depth)
    : source_(source), next_(begin), end_(end), depth_(depth) {
  worker_ = std::thread([this] { work(); });
}

BatchQueue::~BatchQueue() {
  {
    std::lock_guard lock(mu_);
    stop_ = true;
  }
  cv_.notify_all();
  worker_.join();
}

void BatchQueue::work() {
  try {
    for (;;) {
      int it;
      {
        std::unique_lock lock(mu_);
        cv_.wait(lock, [&] { return stop_ || static_cast<int>(ready_.size()) < depth_; });
        if (stop_ || next_ >= end_) return;
        it = next_++;
      }
      Batch b = source_.make(it);
      {
        std::lock_guard lock(mu_);
        ready_.push_back(std::move(b));
      }
      cv_.notify_all();
    }
  } catch (...) {
    std::lock_guard lock(mu_);
    error_ = std::current_exception();
    cv_.notify_all();
  }
}

Batch BatchQueue::pop() {
  std::unique_lock lock(mu_);
  cv_.wait(lock, [&] { return !ready_.empty() || error_; });
  if (ready_.empty()) std::rethrow_exception(error_);
  Batch b = std::move(ready_.front());
  ready_.pop_front();
  lock.unlock();
  cv_.notify_all();
  return b;
}

namespace {

json finite_or_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

json loss_json(const StepRecord& r) {
  json j{{"iter", r.iteration}, {"lr", r.lr}, {"total", finite_or_null(r.loss.total)},
         {"seg_ce", finite_or_null(r.loss.seg_ce)}};
  if (r.loss.aux_ce) j["aux_ce"] = finite_or_null(*r.loss.aux_ce);
  if (!r.loss.sbd_bce.empty()) {
    j["sbd_bce"] = json::array();
    for (double v : r.loss.sbd_bce) j["sbd_bce"].push_back(finite_or_null(v));
  }
  if (!r.loss.bdry_bce.empty()) {
    j["bdry_bce"] = json::array();
    for (double v : r.loss.bdry_bce) j["bdry_bce"].push_back(finite_or_null(v));
  }
  if (r.loss.seg_all_ignored) j["seg_all_ignored"] = true;
  if (r.loss.bce_fallback) j["bce_fallback"] = true;
  return j;
}

bool loss_is_finite(const LossReport& r) {
  if (!std::isfinite(r.total) || !std::isfinite(r.seg_ce)) return false;
  if (r.aux_ce && !std::isfinite(*r.aux_ce)) return false;
  for (double v : r.sbd_bce)
    if (!std::isfinite(v)) return false;
  for (double v : r.bdry_bce)
    if (!std::isfinite(v)) return false;
  return true;
}

void append_line(const fs::path& file, const json& j) {
  std::ofstream out(file, std::ios::app);
  if (!out) throw std::runtime_error("cannot append to " + file.string());
  out << j.dump() << '\n';
}

}  // namespace

Trainer::Trainer(RunConfig cfg, std::shared_ptr<const Dataset> train, std::shared_ptr<const Dataset> val)
    : cfg_(std::move(cfg)), train_(std::move(train)), val_(std::move(val)) {
  cfg_.finalize();
  if (cfg_.schedule.max_iter < 1) throw std::invalid_argument("schedule.max_iter must be >= 1 for training");
  model_ = std::make_unique<SegModel>(cfg_.model);
  sgd_ = std::make_unique<Sgd>(model_->named_parameters(), cfg_.optimizer);
  source_ = std::make_unique<BatchSource>(train_, cfg_);
}

StepRecord Trainer::step(const Batch& batch) {
  if (iteration_ >= cfg_.schedule.max_iter) throw std::logic_error("training already reached max_iter");
  model_->train();
  const ModelOutputs out = model_->forward(Var(batch.images));
  const LossTargets targets{batch.labels, batch.semantic, batch.binary};
  const LossResult loss = total_loss(out.seg_logits, out.head ? &*out.head : nullptr, cfg_.model.head_variant,
                                     out.aux_logits, targets, cfg_.loss, cfg_.bce);
  StepRecord rec{iteration_, poly_lr(iteration_, cfg_.schedule.max_iter, cfg_.optimizer.lr, cfg_.schedule.power),
                 loss.report};
  if (!loss_is_finite(loss.report)) {
    dump_batch(batch, loss.report);
    throw NonFiniteLoss("non-finite loss at iteration " + std::to_string(iteration_) + ": " +
                        loss_json(rec).dump());
  }
  sgd_->zero_grad();
  backward(loss.total);
  sgd_->step(rec.lr);
  ++iteration_;
  history_.push_back(rec);
  return rec;
}

void Trainer::dump_batch(const Batch& batch, const LossReport& report) const {
  const fs::path root = cfg_.output_dir.empty() ? fs::temp_directory_path() : fs::path(cfg_.output_dir);
  const fs::path dir = root / ("nonfinite_iter" + std::to_string(iteration_));
  fs::create_directories(dir);
  const Tensor& x = batch.images;
  for (int n = 0; n < x.n(); ++n) {
    Tensor img(Shape{1, 3, x.h(), x.w()});
    for (int c = 0; c < 3; ++c)
      for (int y = 0; y < x.h(); ++y)
        for (int xx = 0; xx < x.w(); ++xx) img.at(0, c, y, xx) = x.at(n, c, y, xx) * real(0.25) + real(0.5);
    const std::string stem = batch.ids[n].empty() ? std::to_string(n) : batch.ids[n];
    write_image(dir / (stem + ".png"), img);
    write_label_png(dir / (stem + "_labels.png"), batch.labels[n]);
  }
  StepRecord rec{iteration_, 0, report};
  std::ofstream(dir / "report.json") << json{{"loss", loss_json(rec)}, {"ids", batch.ids}, {"config", to_json(cfg_)}}.dump(2);
}

void Trainer::run(int stop_at) {
  const int end = stop_at < 0 ? cfg_.schedule.max_iter : std::min(stop_at, cfg_.schedule.max_iter);
  if (iteration_ >= end) return;
  const bool files = !cfg_.output_dir.empty();
  const fs::path out(cfg_.output_dir);
  if (files) {
    fs::create_directories(out);
    std::ofstream(out / "config.json") << to_json(cfg_).dump(2) << '\n';
  }
  BatchQueue queue(*source_, iteration_, end, cfg_.queue_depth);
  while (iteration_ < end) {
    const Batch batch = queue.pop();
    const StepRecord rec = step(batch);
    const bool log_now =
        cfg_.log_interval > 0 && (iteration_ % cfg_.log_interval == 0 || iteration_ == 1 || iteration_ == end);
    if (files && log_now) append_line(out / "train_log.jsonl", loss_json(rec));
    if (on_step) on_step(rec);
    if (val_ && cfg_.eval_interval > 0 && iteration_ % cfg_.eval_interval == 0) {
      // training is paused here, so the weights are a consistent snapshot
      const EvalReport report = evaluate(*model_, *val_, cfg_);
      if (files) append_line(out / "train_log.jsonl", {{"iter", iteration_}, {"eval", report.to_json(cfg_.category_names())}});
      if (on_eval) on_eval(iteration_, report);
    }
    if (files && cfg_.checkpoint_interval > 0 && iteration_ % cfg_.checkpoint_interval == 0) {
      save_checkpoint(out / ("iter_" + std::to_string(iteration_) + ".ckpt"));
    }
  }
  if (files && iteration_ == cfg_.schedule.max_iter) save_checkpoint(out / "final.ckpt");
}

void Trainer::save_checkpoint(const fs::path& path) const {
  std::vector<std::pair<std::string, const Tensor*>> tensors;
  for (const auto& p : model_->named_parameters()) tensors.emplace_back("param/" + p.name, &p.var.value());
  for (const auto& b : model_->named_buffers()) tensors.emplace_back("buffer/" + b.name, b.tensor.get());
  const auto& params = sgd_->params();
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!sgd_->momentum()[i].empty()) tensors.emplace_back("momentum/" + params[i].name, &sgd_->momentum()[i]);
  }
  // every random stream is derived from (seed, iteration), so the iteration
  // is the whole RNG state
  const json meta{{"kind", "checkpoint"},
                  {"iteration", iteration_},
                  {"config", to_json(cfg_)},
                  {"rng", {{"seed", cfg_.seed}, {"derived_from", "seed, iteration"}}}};
  write_container(path, meta, tensors);
}

namespace {

void load_model_state(const Container& c, SegModel& model, const fs::path& path) {
  auto fetch = [&](const std::string& name, Tensor& dst) {
    const Tensor* t = c.find(name);
    if (!t) throw std::runtime_error(path.string() + ": missing tensor " + name);
    if (t->shape() != dst.shape()) {
      throw std::runtime_error(path.string() + ": tensor " + name + " has shape " + t->shape().str() + ", expected " +
                               dst.shape().str());
    }
    dst = *t;
  };
  for (auto& p : model.named_parameters()) fetch("param/" + p.name, p.var.mutable_value());
  for (auto& b : model.named_buffers()) fetch("buffer/" + b.name, *b.tensor);
}

}  // namespace

void Trainer::load_checkpoint(const fs::path& path) {
  const Container c = read_container(path);
  if (c.meta.value("kind", "") != "checkpoint") throw std::runtime_error(path.string() + " is not a training checkpoint");
  const RunConfig saved = run_config_from_json(c.meta.at("config"));
  if (to_json(saved.model) != to_json(cfg_.model) || saved.seed != cfg_.seed) {
    throw std::runtime_error(path.string() + " was written for a different model configuration or seed");
  }
  const int it = c.meta.at("iteration").get<int>();
  if (it > cfg_.schedule.max_iter) throw std::runtime_error(path.string() + " is past schedule.max_iter");
  load_model_state(c, *model_, path);
  const auto& params = sgd_->params();
  for (std::size_t i = 0; i < params.size(); ++i) {
    const Tensor* m = c.find("momentum/" + params[i].name);
    sgd_->momentum()[i] = m ? *m : Tensor();
  }
  iteration_ = it;
}

std::pair<std::shared_ptr<const Dataset>, std::shared_ptr<const Dataset>> make_datasets(const RunConfig& cfg) {
  const DataConfig& d = cfg.data;
  if (d.kind == "synthetic") {
    auto train = std::make_shared<InMemoryDataset>(
        synth_shapes(SynthConfig{d.num_train, d.size, cfg.num_categories, d.seed, d.noise}));
    std::shared_ptr<const Dataset> val;
    if (d.num_val > 0) {
      val = std::make_shared<InMemoryDataset>(synth_shapes(
          SynthConfig{d.num_val, d.size, cfg.num_categories, derive_seed(d.seed, hash_tag("val")), d.noise}));
    }
    return {train, val};
  }
  if (d.train_dir.empty()) throw std::invalid_argument("data.train_dir is required for directory data");
  std::shared_ptr<const Dataset> val;
  if (!d.val_dir.empty()) val = load_directory_dataset(d.val_dir);
  return {load_directory_dataset(d.train_dir), val};
}

void export_inference(const SegModel& model, const RunConfig& cfg, const fs::path& out) {
  if (model.config().fusion.enabled()) {
    throw std::invalid_argument("cannot discard the SBD head: fusion mode '" + to_string(model.config().fusion.mode) +
                                "' feeds it into the segmentation path");
  }
  RunConfig inference = cfg;
  inference.model = model.config().baseline();
  SegModel plain(inference.model);
  const std::size_t copied = copy_matching_state(model, plain);
  const std::size_t expected = plain.named_parameters().size() + plain.named_buffers().size();
  if (copied != expected) throw std::logic_error("export: baseline state not fully covered by the trained model");
  if (plain.parameter_count() != model.baseline_parameter_count()) {
    throw std::logic_error("export: parameter count differs from the baseline");
  }
  std::vector<std::pair<std::string, const Tensor*>> tensors;
  const auto params = plain.named_parameters();
  const auto buffers = plain.named_buffers();
  for (const auto& p : params) tensors.emplace_back("param/" + p.name, &p.var.value());
  for (const auto& b : buffers) tensors.emplace_back("buffer/" + b.name, b.tensor.get());
  const json manifest{{"config_hash", config_hash(to_json(cfg))},
                      {"categories", cfg.category_names()},
                      {"num_categories", cfg.num_categories},
                      {"fusion", "none"},
                      {"head_discarded", model.has_head()},
                      {"parameter_count", plain.parameter_count()},
                      {"dtype", kRealTypeName}};
  write_container(out, {{"kind", "inference"}, {"manifest", manifest}, {"config", to_json(inference)}}, tensors);
}

LoadedModel load_weights(const fs::path& path) {
  const Container c = read_container(path);
  LoadedModel m;
  m.kind = c.meta.value("kind", "");
  if (m.kind != "checkpoint" && m.kind != "inference") throw std::runtime_error(path.string() + ": unknown kind");
  m.config = run_config_from_json(c.meta.at("config"));
  if (m.kind == "inference") {
    m.manifest = c.meta.at("manifest");
  } else {
    m.iteration = c.meta.at("iteration").get<int>();
    m.manifest = {{"config_hash", config_hash(c.meta.at("config"))}, {"categories", m.config.category_names()}};
  }
  m.model = std::make_unique<SegModel>(m.config.model);
  load_model_state(c, *m.model, path);
  m.model->eval();
  if (m.kind == "inference" && m.model->parameter_count() != m.manifest.at("parameter_count").get<std::size_t>()) {
    throw std::runtime_error(path.string() + ": parameter count disagrees with its manifest");
  }
  return m;
}

void export_checkpoint(const fs::path& checkpoint, const fs::path& out) {
  const LoadedModel m = load_weights(checkpoint);
  if (m.kind != "checkpoint") throw std::invalid_argument(checkpoint.string() + " is already an inference artifact");
  export_inference(*m.model, m.config, out);
}

SBCB_NAMESPACE_END
