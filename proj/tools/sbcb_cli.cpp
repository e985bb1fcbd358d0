#include <CLI11.hpp>
#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>

#include "sbcb/image_io.hpp"
#include "sbcb/trainer.hpp"

using namespace sbcb;
namespace fs = std::filesystem;

namespace {

int cmd_train(const std::string& config, const std::vector<std::string>& overrides, const std::string& resume) {
  const RunConfig cfg = load_run_config(config, overrides);
  auto [train, val] = make_datasets(cfg);
  Trainer trainer(cfg, train, val);
  if (!resume.empty()) {
    trainer.load_checkpoint(resume);
    std::printf("resumed from %s at iteration %d\n", resume.c_str(), trainer.iteration());
  }
  std::printf("training %s for %d iterations (%zu parameters, %zu at inference)\n",
              cfg.model.sbd_head ? to_string(cfg.model.head_variant).c_str() : "baseline", cfg.schedule.max_iter,
              trainer.model().parameter_count(), trainer.model().baseline_parameter_count());
  trainer.on_step = [&](const StepRecord& r) {
    const int done = r.iteration + 1;
    if (cfg.log_interval > 0 && (done % cfg.log_interval == 0 || done == cfg.schedule.max_iter)) {
      std::printf("iter %6d  lr %.3e  loss %.4f  seg %.4f\n", done, r.lr, r.loss.total, r.loss.seg_ce);
      std::fflush(stdout);
    }
  };
  trainer.on_eval = [&](int it, const EvalReport& r) {
    std::printf("eval @ %d\n%s", it, r.summary_table(cfg.category_names()).c_str());
  };
  trainer.run();
  if (!cfg.output_dir.empty()) std::printf("checkpoint: %s\n", (fs::path(cfg.output_dir) / "final.ckpt").c_str());
  return 0;
}

int cmd_eval(const std::string& weights, const std::string& data, const std::vector<int>& widths, std::string out,
             const std::string& mode, bool ms_flip, bool no_ods, int error_maps) {
  LoadedModel m = load_weights(weights);
  RunConfig cfg = m.config;
  cfg.eval.widths = widths;
  if (!mode.empty()) cfg.eval.mode = mode;
  cfg.eval.ms_flip = ms_flip;
  if (no_ods) cfg.eval.ods = false;
  cfg.eval.error_maps = error_maps;
  cfg.finalize();
  const auto dataset = load_directory_dataset(data);
  if (out.empty()) out = fs::path(weights).replace_extension("").string() + "_eval";
  const EvalReport r = evaluate(*m.model, *dataset, cfg, out);
  std::printf("%s weights, %s inference%s\n", m.kind.c_str(), cfg.eval.mode.c_str(), ms_flip ? " + multi-scale/flip" : "");
  std::printf("%s", r.summary_table(cfg.category_names()).c_str());
  std::printf("report: %s\n", (fs::path(out) / "eval_report.jsonl").c_str());
  return 0;
}

int cmd_export(const std::string& checkpoint, const std::string& out) {
  export_checkpoint(checkpoint, out);
  const LoadedModel m = load_weights(out);
  std::printf("wrote %s: %zu parameters, config %s\n", out.c_str(), m.model->parameter_count(),
              m.manifest["config_hash"].get<std::string>().c_str());
  return 0;
}

std::map<std::string, fs::path> pngs_by_stem(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw std::runtime_error(dir.string() + " is not a directory");
  std::map<std::string, fs::path> out;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ".png") out[e.path().stem().string()] = e.path();
  return out;
}

int cmd_gen_boundaries(const std::string& labels_dir, const std::string& out_dir, double radius,
                       const std::string& instances_dir, int num_categories, int ignore_index, bool border) {
  BoundaryGenConfig cfg;
  cfg.radius = radius;
  cfg.ignore_index = ignore_index;
  cfg.image_border_is_boundary = border;
  cfg.instance_sensitive = !instances_dir.empty();
  cfg.validate();
  const auto labels = pngs_by_stem(labels_dir);
  if (labels.empty()) throw std::runtime_error("no label PNGs in " + labels_dir);
  std::map<std::string, fs::path> instances;
  if (!instances_dir.empty()) instances = pngs_by_stem(instances_dir);
  if (num_categories <= 0) {
    int top = -1;
    for (const auto& [stem, path] : labels) {
      const LabelMap l = read_label_png(path);
      for (auto v : l.values())
        if (v != ignore_index) top = std::max(top, static_cast<int>(v));
    }
    num_categories = top + 1;
    if (num_categories < 1) throw std::runtime_error("every label pixel is ignore; pass --num-categories");
  }
  std::size_t total = 0;
  for (const auto& [stem, path] : labels) {
    const LabelMap l = read_label_png(path);
    for (auto v : l.values()) {
      if (v != ignore_index && (v < 0 || v >= num_categories)) {
        throw std::runtime_error(path.string() + ": label " + std::to_string(v) + " outside [0, " +
                                 std::to_string(num_categories) + ")");
      }
    }
    std::optional<InstanceMap> inst;
    if (cfg.instance_sensitive) {
      auto it = instances.find(stem);
      if (it == instances.end()) throw std::runtime_error("no instance map for " + path.string());
      inst = read_label_png(it->second);
      if (!inst->same_extent(l)) throw std::runtime_error(it->second.string() + ": extent differs from its labels");
    }
    const SemanticBoundaryTensor b = semantic_boundaries(l, num_categories, cfg, inst ? &*inst : nullptr);
    const fs::path dir = fs::path(out_dir) / stem;
    fs::create_directories(dir);
    for (int c = 0; c < num_categories; ++c) {
      char name[32];
      std::snprintf(name, sizeof name, "cat%02d.png", c);
      write_mask_png(dir / name, b.channel_mask(c));
    }
    write_mask_png(dir / "binary.png", channel_union(b));
    total += b.count();
  }
  std::printf("%zu label maps, %d categories, radius %g: %zu boundary pixels -> %s\n", labels.size(), num_categories,
              radius, total, out_dir.c_str());
  return 0;
}

int cmd_synth(const std::string& out, int n, int size, int categories, std::uint64_t seed) {
  save_directory_dataset(synth_shapes(SynthConfig{n, size, categories, seed, 0.08}), out);
  std::printf("wrote %d samples to %s\n", n, out.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"semantic segmentation with a training-time boundary head"};
  app.require_subcommand(1);

  auto* train = app.add_subcommand("train", "train from a JSON config");
  std::string config, resume;
  std::vector<std::string> overrides;
  train->add_option("--config", config, "run config (JSON, comments allowed)")->required()->check(CLI::ExistingFile);
  train->add_option("--override", overrides, "dotted key=value, repeatable")->take_all();
  train->add_option("--resume", resume, "checkpoint to continue from")->check(CLI::ExistingFile);

  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint or exported model on a directory dataset");
  std::string weights, data, out, mode;
  std::vector<int> widths{3, 5, 9, 12};
  bool ms_flip = false, no_ods = false;
  int error_maps = 0;
  eval->add_option("--weights", weights)->required()->check(CLI::ExistingFile);
  eval->add_option("--data", data, "directory with images/ and labels/")->required()->check(CLI::ExistingDirectory);
  eval->add_option("--widths", widths, "trimap widths")->delimiter(',');
  eval->add_option("--out", out, "report directory");
  eval->add_option("--mode", mode, "whole or slide")->check(CLI::IsMember({"whole", "slide"}));
  eval->add_flag("--ms-flip", ms_flip, "multi-scale + flip averaging");
  eval->add_flag("--no-ods", no_ods, "skip the boundary-head ODS score");
  eval->add_option("--error-maps", error_maps, "number of error-map PNGs to write");

  auto* exp = app.add_subcommand("export", "drop the boundary head and write an inference artifact");
  std::string checkpoint, exp_out;
  exp->add_option("--checkpoint", checkpoint)->required()->check(CLI::ExistingFile);
  exp->add_option("--out", exp_out)->required();

  auto* gen = app.add_subcommand("gen-boundaries", "write boundary masks for a directory of label PNGs");
  std::string labels_dir, gen_out, instances_dir;
  double radius = 2.0;
  int num_categories = 0, ignore_index = kDefaultIgnoreIndex;
  bool border = false;
  gen->add_option("--labels", labels_dir)->required()->check(CLI::ExistingDirectory);
  gen->add_option("--out", gen_out)->required();
  gen->add_option("--radius", radius)->required();
  gen->add_option("--instances", instances_dir, "instance-id PNGs, same stems")->check(CLI::ExistingDirectory);
  gen->add_option("--num-categories", num_categories, "default: largest label + 1");
  gen->add_option("--ignore-index", ignore_index);
  gen->add_flag("--image-border", border, "treat the image edge as a boundary");

  auto* synth = app.add_subcommand("synth", "write a synthetic shapes dataset");
  std::string synth_out;
  int synth_n = 100, synth_size = 64, synth_cat = 5;
  std::uint64_t synth_seed = 0;
  synth->add_option("--out", synth_out)->required();
  synth->add_option("--num", synth_n);
  synth->add_option("--size", synth_size);
  synth->add_option("--categories", synth_cat);
  synth->add_option("--seed", synth_seed);

  CLI11_PARSE(app, argc, argv);
  try {
    if (*train) return cmd_train(config, overrides, resume);
    if (*eval) return cmd_eval(weights, data, widths, out, mode, ms_flip, no_ods, error_maps);
    if (*exp) return cmd_export(checkpoint, exp_out);
    if (*gen) {
      return cmd_gen_boundaries(labels_dir, gen_out, radius, instances_dir, num_categories, ignore_index, border);
    }
    if (*synth) return cmd_synth(synth_out, synth_n, synth_size, synth_cat, synth_seed);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
