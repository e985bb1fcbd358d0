#include "sbcb/run_config.hpp"

#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

#include "sbcb/metrics.hpp"
#include "sbcb/random.hpp"

SBCB_NAMESPACE_BEGIN

using nlohmann::json;

namespace {

void reject_unknown(const json& j, const json& known, const std::string& where) {
  if (!j.is_object()) throw std::invalid_argument("config: '" + where + "' must be an object");
  for (const auto& [k, v] : j.items()) {
    if (!known.contains(k)) throw std::invalid_argument("config: unknown key '" + where + (where.empty() ? "" : ".") + k + "'");
    if (known[k].is_object() && k != "categories") reject_unknown(v, known[k], where.empty() ? k : where + "." + k);
  }
}

template <typename T>
void get(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

}  // namespace

json to_json(const ModelConfig& m) {
  return json{{"backbone", m.backbone},
              {"stage_channels", m.stage_channels},
              {"trick", m.trick},
              {"branch_channels", m.branch_channels},
              {"input_channels", m.input_channels},
              {"seg_head_channels", m.seg_head_channels},
              {"sbd_head", m.sbd_head},
              {"head_variant", to_string(m.head_variant)},
              {"sides", m.sides},
              {"fcn_aux", m.fcn_aux},
              {"aux_side", m.aux_side},
              {"aux_channels", m.aux_channels},
              {"fusion",
               {{"mode", to_string(m.fusion.mode)},
                {"mix_layers", m.fusion.mix_layers},
                {"mix_channels", m.fusion.mix_channels},
                {"projection_channels", m.fusion.projection_channels}}}};
}

ModelConfig model_config_from_json(const json& j) {
  ModelConfig m;
  get(j, "backbone", m.backbone);
  get(j, "stage_channels", m.stage_channels);
  get(j, "trick", m.trick);
  get(j, "branch_channels", m.branch_channels);
  get(j, "input_channels", m.input_channels);
  get(j, "seg_head_channels", m.seg_head_channels);
  get(j, "sbd_head", m.sbd_head);
  if (j.contains("head_variant")) m.head_variant = head_variant_from_string(j["head_variant"].get<std::string>());
  get(j, "sides", m.sides);
  get(j, "fcn_aux", m.fcn_aux);
  get(j, "aux_side", m.aux_side);
  get(j, "aux_channels", m.aux_channels);
  if (j.contains("fusion")) {
    const json& f = j["fusion"];
    if (f.contains("mode")) m.fusion.mode = fusion_mode_from_string(f["mode"].get<std::string>());
    get(f, "mix_layers", m.fusion.mix_layers);
    get(f, "mix_channels", m.fusion.mix_channels);
    get(f, "projection_channels", m.fusion.projection_channels);
  }
  // these two are carried by the run config
  if (j.contains("num_categories")) m.num_categories = j["num_categories"].get<int>();
  if (j.contains("seed")) m.seed = j["seed"].get<std::uint64_t>();
  return m;
}

json to_json(const RunConfig& c) {
  return json{
      {"seed", c.seed},
      {"num_categories", c.num_categories},
      {"categories", c.categories},
      {"ignore_index", c.ignore_index},
      {"model", to_json(c.model)},
      {"loss",
       {{"alpha", c.loss.alpha},
        {"beta", c.loss.beta},
        {"aux_weight", c.loss.aux},
        {"balance", to_string(c.bce.balance)},
        {"mask_ignore", c.bce.mask_ignore}}},
      {"boundary",
       {{"radius", c.boundary.radius},
        {"instance_sensitive", c.boundary.instance_sensitive},
        {"image_border_is_boundary", c.boundary.image_border_is_boundary}}},
      {"augment",
       {{"scale_range", {c.augment.scale_lo, c.augment.scale_hi}},
        {"crop", {c.augment.crop_h, c.augment.crop_w}},
        {"hflip_prob", c.augment.hflip_prob},
        {"photometric", c.augment.photometric},
        {"brightness", c.augment.brightness},
        {"contrast", c.augment.contrast},
        {"saturation", c.augment.saturation},
        {"hue", c.augment.hue}}},
      {"optimizer",
       {{"lr", c.optimizer.lr}, {"momentum", c.optimizer.momentum}, {"weight_decay", c.optimizer.weight_decay}}},
      {"schedule", {{"max_iter", c.schedule.max_iter}, {"power", c.schedule.power}}},
      {"batch_size", c.batch_size},
      {"eval_interval", c.eval_interval},
      {"checkpoint_interval", c.checkpoint_interval},
      {"log_interval", c.log_interval},
      {"queue_depth", c.queue_depth},
      {"data",
       {{"kind", c.data.kind},
        {"num_train", c.data.num_train},
        {"num_val", c.data.num_val},
        {"size", c.data.size},
        {"noise", c.data.noise},
        {"seed", c.data.seed},
        {"train_dir", c.data.train_dir},
        {"val_dir", c.data.val_dir}}},
      {"eval",
       {{"widths", c.eval.widths},
        {"ods", c.eval.ods},
        {"ods_thresholds", c.eval.ods_thresholds},
        {"match_tolerance", c.eval.match_tolerance},
        {"thinning", c.eval.thinning},
        {"ods_radius", c.eval.ods_radius},
        {"mode", c.eval.mode},
        {"window", {c.eval.window_h, c.eval.window_w}},
        {"stride", {c.eval.stride_h, c.eval.stride_w}},
        {"ms_flip", c.eval.ms_flip},
        {"scales", c.eval.scales},
        {"error_maps", c.eval.error_maps}}},
      {"output_dir", c.output_dir},
  };
}

RunConfig run_config_from_json(const json& j) {
  RunConfig c;
  reject_unknown(j, to_json(c), "");
  get(j, "seed", c.seed);
  get(j, "num_categories", c.num_categories);
  get(j, "categories", c.categories);
  get(j, "ignore_index", c.ignore_index);
  if (j.contains("model")) c.model = model_config_from_json(j["model"]);
  if (j.contains("loss")) {
    const json& l = j["loss"];
    get(l, "alpha", c.loss.alpha);
    get(l, "beta", c.loss.beta);
    get(l, "aux_weight", c.loss.aux);
    if (l.contains("balance")) c.bce.balance = balance_mode_from_string(l["balance"].get<std::string>());
    get(l, "mask_ignore", c.bce.mask_ignore);
  }
  if (j.contains("boundary")) {
    const json& b = j["boundary"];
    get(b, "radius", c.boundary.radius);
    get(b, "instance_sensitive", c.boundary.instance_sensitive);
    get(b, "image_border_is_boundary", c.boundary.image_border_is_boundary);
  }
  if (j.contains("augment")) {
    const json& a = j["augment"];
    if (a.contains("scale_range")) {
      c.augment.scale_lo = a["scale_range"].at(0).get<double>();
      c.augment.scale_hi = a["scale_range"].at(1).get<double>();
    }
    if (a.contains("crop")) {
      c.augment.crop_h = a["crop"].at(0).get<int>();
      c.augment.crop_w = a["crop"].at(1).get<int>();
    }
    get(a, "hflip_prob", c.augment.hflip_prob);
    get(a, "photometric", c.augment.photometric);
    get(a, "brightness", c.augment.brightness);
    get(a, "contrast", c.augment.contrast);
    get(a, "saturation", c.augment.saturation);
    get(a, "hue", c.augment.hue);
  }
  if (j.contains("optimizer")) {
    get(j["optimizer"], "lr", c.optimizer.lr);
    get(j["optimizer"], "momentum", c.optimizer.momentum);
    get(j["optimizer"], "weight_decay", c.optimizer.weight_decay);
  }
  if (j.contains("schedule")) {
    get(j["schedule"], "max_iter", c.schedule.max_iter);
    get(j["schedule"], "power", c.schedule.power);
  }
  get(j, "batch_size", c.batch_size);
  get(j, "eval_interval", c.eval_interval);
  get(j, "checkpoint_interval", c.checkpoint_interval);
  get(j, "log_interval", c.log_interval);
  get(j, "queue_depth", c.queue_depth);
  if (j.contains("data")) {
    const json& d = j["data"];
    get(d, "kind", c.data.kind);
    get(d, "num_train", c.data.num_train);
    get(d, "num_val", c.data.num_val);
    get(d, "size", c.data.size);
    get(d, "noise", c.data.noise);
    get(d, "seed", c.data.seed);
    get(d, "train_dir", c.data.train_dir);
    get(d, "val_dir", c.data.val_dir);
  }
  if (j.contains("eval")) {
    const json& e = j["eval"];
    get(e, "widths", c.eval.widths);
    get(e, "ods", c.eval.ods);
    get(e, "ods_thresholds", c.eval.ods_thresholds);
    get(e, "match_tolerance", c.eval.match_tolerance);
    get(e, "thinning", c.eval.thinning);
    get(e, "ods_radius", c.eval.ods_radius);
    get(e, "mode", c.eval.mode);
    if (e.contains("window")) {
      c.eval.window_h = e["window"].at(0).get<int>();
      c.eval.window_w = e["window"].at(1).get<int>();
    }
    if (e.contains("stride")) {
      c.eval.stride_h = e["stride"].at(0).get<int>();
      c.eval.stride_w = e["stride"].at(1).get<int>();
    }
    get(e, "ms_flip", c.eval.ms_flip);
    get(e, "scales", c.eval.scales);
    get(e, "error_maps", c.eval.error_maps);
  }
  get(j, "output_dir", c.output_dir);
  c.finalize();
  return c;
}

void RunConfig::finalize() {
  if (num_categories < 1) throw std::invalid_argument("num_categories must be >= 1");
  if (!categories.empty() && static_cast<int>(categories.size()) != num_categories) {
    throw std::invalid_argument("categories lists " + std::to_string(categories.size()) + " names for " +
                                std::to_string(num_categories) + " categories");
  }
  model.num_categories = num_categories;
  model.seed = seed;
  boundary.ignore_index = ignore_index;
  bce.ignore_index = ignore_index;
  augment.ignore_index = ignore_index;
  model.validate();
  loss.validate();
  boundary.validate();
  augment.validate();
  if (batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
  if (schedule.max_iter < 0) throw std::invalid_argument("schedule.max_iter must be >= 0");
  if (queue_depth < 1) throw std::invalid_argument("queue_depth must be >= 1");
  if (!(optimizer.lr >= 0) || !(optimizer.momentum >= 0) || !(optimizer.weight_decay >= 0)) {
    throw std::invalid_argument("optimizer settings must be >= 0");
  }
  if (data.kind != "synthetic" && data.kind != "directory") {
    throw std::invalid_argument("data.kind must be 'synthetic' or 'directory'");
  }
  if (eval.mode != "whole" && eval.mode != "slide") throw std::invalid_argument("eval.mode must be whole or slide");
  for (int w : eval.widths) BoundaryFScoreConfig{w}.validate();
}

std::vector<std::string> RunConfig::category_names() const {
  if (!categories.empty()) return categories;
  std::vector<std::string> out;
  for (int i = 0; i < num_categories; ++i) out.push_back("c" + std::to_string(i));
  return out;
}

void apply_override(json& j, const std::string& override) {
  const auto eq = override.find('=');
  if (eq == std::string::npos || eq == 0) throw std::invalid_argument("override '" + override + "' is not key=value");
  const std::string key = override.substr(0, eq), raw = override.substr(eq + 1);
  json* node = &j;
  std::stringstream ss(key);
  std::string part;
  while (std::getline(ss, part, '.')) {
    if (!node->is_object() || !node->contains(part)) throw std::invalid_argument("override: unknown key '" + key + "'");
    node = &(*node)[part];
  }
  json value;
  try {
    value = json::parse(raw);
  } catch (const json::parse_error&) {
    value = raw;
  }
  *node = value;
}

RunConfig load_run_config(const std::filesystem::path& path, const std::vector<std::string>& overrides) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config " + path.string());
  json file;
  try {
    file = json::parse(in, nullptr, true, /*ignore_comments=*/true);
  } catch (const json::parse_error& e) {
    throw std::runtime_error("cannot parse config " + path.string() + ": " + e.what());
  }
  // resolve against the full default tree so overrides can reach any key
  json full = to_json(run_config_from_json(file));
  for (const auto& o : overrides) apply_override(full, o);
  return run_config_from_json(full);
}

std::string config_hash(const json& j) {
  const std::string s = j.dump();
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 0x100000001b3ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

SBCB_NAMESPACE_END
