#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "sbcb/image_io.hpp"
#include "sbcb/kernels.hpp"
#include "sbcb/trainer.hpp"

SBCB_NAMESPACE_BEGIN

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

json nan_null(double v) { return std::isnan(v) ? json(nullptr) : json(v); }

json per_category(const std::vector<double>& v, const std::vector<std::string>& names) {
  json j = json::object();
  for (std::size_t i = 0; i < v.size(); ++i) j[i < names.size() ? names[i] : std::to_string(i)] = nan_null(v[i]);
  return j;
}

std::string cell(double v) {
  if (std::isnan(v)) return "     -";
  char buf[16];
  std::snprintf(buf, sizeof buf, "%6.4f", v);
  return buf;
}

Tensor crop_tensor(const Tensor& t, int y0, int x0, int h, int w) {
  Tensor out(Shape{t.n(), t.c(), h, w});
  for (int n = 0; n < t.n(); ++n)
    for (int c = 0; c < t.c(); ++c)
      for (int y = 0; y < h; ++y) std::copy_n(t.plane(n, c) + static_cast<std::size_t>(y0 + y) * t.w() + x0, w, out.plane(n, c) + static_cast<std::size_t>(y) * w);
  return out;
}

Tensor resize(const Tensor& t, int h, int w) {
  if (t.h() == h && t.w() == w) return t;
  Tensor out(Shape{t.n(), t.c(), h, w});
  kernels::resize_bilinear_forward(t, out);
  return out;
}

// Normalised input -> logits at the input resolution.
Tensor segment_once(const SegModel& model, const Tensor& x, const EvalConfig& cfg) {
  if (cfg.mode != "slide") return model.segment(Var(x)).value();
  const int H = x.h(), W = x.w();
  const int wh = std::min(cfg.window_h, H), ww = std::min(cfg.window_w, W);
  const int gy = std::max(H - wh + cfg.stride_h - 1, 0) / cfg.stride_h + 1;
  const int gx = std::max(W - ww + cfg.stride_w - 1, 0) / cfg.stride_w + 1;
  Tensor acc, count(Shape{1, 1, H, W});
  for (int iy = 0; iy < gy; ++iy) {
    for (int ix = 0; ix < gx; ++ix) {
      const int y2 = std::min(iy * cfg.stride_h + wh, H), x2 = std::min(ix * cfg.stride_w + ww, W);
      const int y1 = std::max(y2 - wh, 0), x1 = std::max(x2 - ww, 0);
      const Tensor part = model.segment(Var(crop_tensor(x, y1, x1, y2 - y1, x2 - x1))).value();
      if (acc.empty()) acc = Tensor(Shape{1, part.c(), H, W});
      for (int c = 0; c < part.c(); ++c)
        for (int y = y1; y < y2; ++y)
          for (int xx = x1; xx < x2; ++xx) acc.at(0, c, y, xx) += part.at(0, c, y - y1, xx - x1);
      for (int y = y1; y < y2; ++y)
        for (int xx = x1; xx < x2; ++xx) count.at(0, 0, y, xx) += 1;
    }
  }
  for (int c = 0; c < acc.c(); ++c)
    for (int y = 0; y < H; ++y)
      for (int xx = 0; xx < W; ++xx) acc.at(0, c, y, xx) /= count.at(0, 0, y, xx);
  return acc;
}

}  // namespace

const BoundaryFScoreResult& EvalReport::fscore(int width) const {
  for (const auto& f : fscores)
    if (f.width == width) return f;
  throw std::out_of_range("boundary F-score at width " + std::to_string(width) + " was not evaluated");
}

json EvalReport::to_json(const std::vector<std::string>& names) const {
  json j{{"images", images}, {"miou", nan_null(iou.mean)}, {"iou", per_category(iou.per_category, names)}};
  j["boundary_f"] = json::object();
  for (const auto& f : fscores) {
    j["boundary_f"][std::to_string(f.width)] = {{"mean", nan_null(f.mean)},
                                                 {"per_category", per_category(f.per_category, names)}};
  }
  if (ods) {
    std::vector<std::string> ods_names = names;
    if (ods->per_category.size() == 1) ods_names = {"boundary"};
    j["ods"] = {{"mf", nan_null(ods->mf)},
                {"per_category", per_category(ods->per_category, ods_names)},
                {"best_threshold", per_category(ods->best_threshold, ods_names)}};
  }
  return j;
}

std::string EvalReport::summary_table(const std::vector<std::string>& names) const {
  std::ostringstream os;
  std::size_t name_w = 8;
  for (const auto& n : names) name_w = std::max(name_w, n.size());
  const bool ods_cols = ods && ods->per_category.size() == iou.per_category.size();
  auto pad = [&](const std::string& s) { return s + std::string(name_w - std::min(name_w, s.size()) + 2, ' '); };
  os << pad("category") << "   IoU";
  for (const auto& f : fscores) os << "  F@" << f.width << (f.width < 10 ? "  " : " ");
  if (ods_cols) os << "   ODS";
  os << '\n';
  for (std::size_t c = 0; c < iou.per_category.size(); ++c) {
    os << pad(c < names.size() ? names[c] : std::to_string(c)) << cell(iou.per_category[c]);
    for (const auto& f : fscores) os << ' ' << cell(f.per_category[c]);
    if (ods_cols) os << ' ' << cell(ods->per_category[c]);
    os << '\n';
  }
  os << pad("mean") << cell(iou.mean);
  for (const auto& f : fscores) os << ' ' << cell(f.mean);
  if (ods) os << ' ' << cell(ods->mf);
  os << '\n' << images << " images\n";
  return os.str();
}

Evaluator::Evaluator(int num_categories, const EvalConfig& cfg, int ignore_index, int ods_categories)
    : n_(num_categories), ignore_(ignore_index), confusion_(num_categories), bf_(num_categories, cfg.widths, ignore_index) {
  if (ods_categories > 0) {
    ODSConfig oc;
    oc.thresholds = ODSConfig::default_thresholds(cfg.ods_thresholds);
    oc.match_tolerance = cfg.match_tolerance;
    oc.thinning = cfg.thinning;
    oc.validate();
    ods_.emplace(ods_categories, oc);
  }
}

void Evaluator::add_segmentation(const LabelMap& pred, const LabelMap& gt) {
  if (!pred.same_extent(gt)) throw std::invalid_argument("prediction and ground truth differ in extent");
  for (std::size_t i = 0; i < gt.size(); ++i) {
    if (gt[i] != ignore_ && (gt[i] < 0 || gt[i] >= n_)) {
      throw std::invalid_argument("ground-truth label " + std::to_string(gt[i]) + " outside [0, " + std::to_string(n_) + ")");
    }
  }
  confusion_.add(pred, gt, ignore_);
  bf_.add(pred, gt);
  ++images_;
}

void Evaluator::add_boundaries(const Tensor& probs, const SemanticBoundaryTensor& gt) {
  if (!ods_) throw std::logic_error("evaluator was built without ODS");
  ods_->add(probs, gt);
}

EvalReport Evaluator::report() const {
  EvalReport r;
  r.images = images_;
  r.iou = confusion_.iou();
  r.fscores = bf_.result();
  if (ods_ && ods_->images() > 0) r.ods = ods_->result();
  return r;
}

LabelMap argmax_labels(const Tensor& logits) {
  LabelMap out(logits.h(), logits.w());
  for (int y = 0; y < logits.h(); ++y) {
    for (int x = 0; x < logits.w(); ++x) {
      int best = 0;
      for (int c = 1; c < logits.c(); ++c)
        if (logits.at(0, c, y, x) > logits.at(0, best, y, x)) best = c;
      out.at(y, x) = best;
    }
  }
  return out;
}

Tensor predict_logits(const SegModel& model, const Tensor& image, const EvalConfig& cfg) {
  NoGradGuard no_grad;
  if (!cfg.ms_flip) return segment_once(model, normalize_images(image), cfg);
  const int H = image.h(), W = image.w();
  Tensor acc;
  int passes = 0;
  for (double s : cfg.scales) {
    const int h = std::max(1, static_cast<int>(std::lround(H * s))), w = std::max(1, static_cast<int>(std::lround(W * s)));
    const Tensor scaled = normalize_images(resize(image, h, w));
    for (int flip = 0; flip < 2; ++flip) {
      Tensor l = segment_once(model, flip ? flip_horizontal(scaled) : scaled, cfg);
      if (flip) l = flip_horizontal(l);
      l = resize(l, H, W);
      if (acc.empty()) acc = Tensor(l.shape());
      acc.add_(l);
      ++passes;
    }
  }
  acc.scale_(real(1) / static_cast<real>(passes));
  return acc;
}

EvalReport evaluate(SegModel& model, const Dataset& data, const RunConfig& cfg, const fs::path& out_dir) {
  const bool was_training = model.is_training();
  model.eval();
  const int n = cfg.num_categories;
  if (model.config().num_categories != n) {
    throw std::invalid_argument("model predicts " + std::to_string(model.config().num_categories) +
                                " categories, the evaluation expects " + std::to_string(n));
  }
  const bool with_ods = cfg.eval.ods && model.has_head();
  const int ods_channels = with_ods ? model.head()->config().output_channels() : 0;
  Evaluator ev(n, cfg.eval, cfg.ignore_index, ods_channels);
  BoundaryGenConfig ods_gt = cfg.boundary;
  ods_gt.radius = cfg.eval.ods_radius;
  ods_gt.instance_sensitive = cfg.boundary.instance_sensitive && data.has_instances();

  const bool files = !out_dir.empty();
  std::ofstream jsonl;
  if (files) {
    fs::create_directories(out_dir);
    jsonl.open(out_dir / "eval_report.jsonl");
    if (!jsonl) throw std::runtime_error("cannot write " + (out_dir / "eval_report.jsonl").string());
  }
  int maps_written = 0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const RawSample s = data.get(i);
    const Tensor logits = predict_logits(model, s.image, cfg.eval);
    if (logits.c() != n) throw std::invalid_argument("logit channels do not match num_categories");
    const LabelMap pred = argmax_labels(logits);
    ev.add_segmentation(pred, s.labels);
    if (with_ods) {
      NoGradGuard no_grad;
      const ModelOutputs out = model.forward(Var(normalize_images(s.image)));
      Tensor probs = out.head->fuse_logits.value();
      for (auto& v : probs.values()) v = real(1) / (real(1) + std::exp(-v));
      if (ods_channels == 1) {
        const BinaryMask u = binary_boundaries(s.labels, ods_gt, ods_gt.instance_sensitive ? &*s.instances : nullptr);
        SemanticBoundaryTensor gt(1, u.height(), u.width());
        std::copy(u.values().begin(), u.values().end(), gt.channel(0).begin());
        ev.add_boundaries(probs, gt);
      } else {
        ev.add_boundaries(probs, semantic_boundaries(s.labels, n, ods_gt,
                                                     ods_gt.instance_sensitive ? &*s.instances : nullptr));
      }
    }
    if (files) {
      std::int64_t valid = 0, correct = 0;
      for (std::size_t k = 0; k < pred.size(); ++k) {
        if (s.labels[k] == cfg.ignore_index) continue;
        ++valid;
        correct += pred[k] == s.labels[k];
      }
      const std::string id = s.id.empty() ? std::to_string(i) : s.id;
      jsonl << json{{"id", id}, {"valid_pixels", valid}, {"pixel_accuracy", valid ? json(double(correct) / valid) : json(nullptr)}}.dump()
            << '\n';
      if (maps_written < cfg.eval.error_maps) {
        // white: correct, red: wrong, black: ignored
        std::vector<std::uint8_t> rgb(pred.size() * 3, 0);
        for (std::size_t k = 0; k < pred.size(); ++k) {
          if (s.labels[k] == cfg.ignore_index) continue;
          const bool ok = pred[k] == s.labels[k];
          rgb[3 * k] = 255;
          rgb[3 * k + 1] = rgb[3 * k + 2] = ok ? 255 : 0;
        }
        fs::create_directories(out_dir / "error_maps");
        write_rgb_png(out_dir / "error_maps" / (id + ".png"), rgb, pred.height(), pred.width());
        ++maps_written;
      }
    }
  }
  if (was_training) model.train();
  EvalReport report = ev.report();
  if (files) {
    const auto names = cfg.category_names();
    jsonl << json{{"summary", report.to_json(names)}}.dump() << '\n';
    std::ofstream(out_dir / "eval_summary.txt") << report.summary_table(names);
  }
  return report;
}

SBCB_NAMESPACE_END
