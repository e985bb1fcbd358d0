#include <filesystem>
#include <fstream>
#include <random>
#include <unistd.h>

#include "doctest.h"
#include "sbcb/trainer.hpp"
#include "test_support.hpp"

using namespace sbcb;
namespace fs = std::filesystem;
using sbcb_test::max_abs_diff;

#ifndef SBCB_SOURCE_DIR
#error "SBCB_SOURCE_DIR must point at the source tree"
#endif

namespace {

fs::path temp_dir(const std::string& name) {
  fs::path p = fs::temp_directory_path() / ("sbcb_trainer_" + name + "_" + std::to_string(::getpid()));
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

RunConfig tiny(std::uint64_t seed = 3) {
  RunConfig c;
  c.seed = seed;
  c.num_categories = 3;
  c.model.stage_channels = {4, 8, 8, 8, 8};
  c.model.seg_head_channels = 8;
  c.augment.crop_h = c.augment.crop_w = 32;
  c.batch_size = 4;
  c.schedule.max_iter = 8;
  c.data.num_train = 12;
  c.data.num_val = 4;
  c.data.size = 32;
  c.eval.ods_thresholds = 9;
  c.output_dir = "";
  c.finalize();
  return c;
}

bool same_bits(const Tensor& a, const Tensor& b) {
  return a.shape() == b.shape() && std::equal(a.values().begin(), a.values().end(), b.values().begin());
}

// every parameter and buffer, compared bit for bit
bool same_state(const Module& a, const Module& b) {
  const auto pa = a.named_parameters(), pb = b.named_parameters();
  if (pa.size() != pb.size()) return false;
  for (std::size_t i = 0; i < pa.size(); ++i)
    if (pa[i].name != pb[i].name || !same_bits(pa[i].var.value(), pb[i].var.value())) return false;
  const auto ba = a.named_buffers(), bb = b.named_buffers();
  if (ba.size() != bb.size()) return false;
  for (std::size_t i = 0; i < ba.size(); ++i)
    if (ba[i].name != bb[i].name || !same_bits(*ba[i].tensor, *bb[i].tensor)) return false;
  return true;
}

Trainer make_trainer(const RunConfig& c) {
  auto [train, val] = make_datasets(c);
  return Trainer(c, train, val);
}

std::shared_ptr<const Dataset> single_image_set(int n, int size, int ncat, std::uint64_t seed) {
  return std::make_shared<InMemoryDataset>(synth_shapes(n, size, ncat, seed));
}

}  // namespace

TEST_CASE("poly schedule endpoints and midpoint") {
  CHECK(poly_lr(0, 100, 0.01, 9) == doctest::Approx(0.01).epsilon(1e-15));
  CHECK(poly_lr(100, 100, 0.01, 9) == 0.0);
  CHECK(poly_lr(50, 100, 0.01, 9) == doctest::Approx(0.01 / 512).epsilon(1e-12));
  CHECK(poly_lr(1000, 2000, 0.02, 9) == doctest::Approx(0.02 / 512).epsilon(1e-12));
  CHECK(poly_lr(25, 100, 1.0, 1) == doctest::Approx(0.75));
  double prev = 1e9;
  for (int i = 0; i <= 40; ++i) {
    const double lr = poly_lr(i, 40, 0.01, 9);
    CHECK(lr <= prev);
    prev = lr;
  }
  CHECK_THROWS_AS(poly_lr(-1, 100, 0.01, 9), std::invalid_argument);
  CHECK_THROWS_AS(poly_lr(101, 100, 0.01, 9), std::invalid_argument);
}

TEST_CASE("run config defaults") {
  const RunConfig c;
  CHECK(c.optimizer.lr == 0.01);
  CHECK(c.optimizer.momentum == 0.9);
  CHECK(c.optimizer.weight_decay == 5e-4);
  CHECK(c.schedule.power == 9.0);
  CHECK(c.eval.widths == std::vector<int>{3, 5, 9, 12});
  CHECK(c.model.head_variant == HeadVariant::kCASENet);
}

TEST_CASE("run config json round trip and key checking") {
  RunConfig c = tiny();
  c.model.head_variant = HeadVariant::kDDS;
  c.model.sides = {1, 2, 3, 4, 5};
  c.loss.alpha = 2.5;
  c.bce.balance = BalanceMode::kPerCategory;
  c.eval.mode = "slide";
  c.categories = {"a", "b", "c"};
  c.finalize();
  const auto j = to_json(c);
  CHECK(to_json(run_config_from_json(j)) == j);
  CHECK(config_hash(j) == config_hash(to_json(run_config_from_json(j))));
  auto j2 = j;
  j2["loss"]["alpha"] = 2.0;
  CHECK(config_hash(j2) != config_hash(j));

  CHECK_THROWS_WITH_AS(run_config_from_json({{"optimiser", {{"lr", 1}}}}), doctest::Contains("optimiser"),
                       std::invalid_argument);
  CHECK_THROWS_WITH_AS(run_config_from_json({{"model", {{"sidez", {1}}}}}), doctest::Contains("model.sidez"),
                       std::invalid_argument);
  CHECK_THROWS_AS(run_config_from_json({{"categories", {"x"}}}), std::invalid_argument);
  CHECK_THROWS_AS(run_config_from_json({{"model", {{"head_variant", "hed"}}}}), std::invalid_argument);
  CHECK_THROWS_AS(run_config_from_json({{"model", {{"head_variant", "dds"}, {"sides", {1, 2, 3, 4, 5}}, {"fusion", {{"mode", "channel_merge"}}}}}}),
                  std::invalid_argument);
}

TEST_CASE("dotted overrides") {
  auto j = to_json(RunConfig{});
  apply_override(j, "optimizer.lr=0.5");
  apply_override(j, "model.head_variant=dds");
  apply_override(j, "model.sides=[1,2,3,4,5]");
  apply_override(j, "eval.widths=[3]");
  apply_override(j, "output_dir=");
  const RunConfig c = run_config_from_json(j);
  CHECK(c.optimizer.lr == 0.5);
  CHECK(c.model.head_variant == HeadVariant::kDDS);
  CHECK(c.eval.widths == std::vector<int>{3});
  CHECK(c.output_dir.empty());
  CHECK_THROWS_AS(apply_override(j, "optimizer.lrr=1"), std::invalid_argument);
  CHECK_THROWS_AS(apply_override(j, "no_equals_sign"), std::invalid_argument);
  CHECK_THROWS_AS(apply_override(j, "seed.x=1"), std::invalid_argument);

  const fs::path dir = temp_dir("override");
  std::ofstream(dir / "c.json") << "// comment\n{ \"seed\": 7, \"loss\": { \"beta\": 0.5 } }\n";
  const RunConfig f = load_run_config(dir / "c.json", {"loss.alpha=0", "seed=9"});
  CHECK(f.seed == 9);
  CHECK(f.model.seed == 9);
  CHECK(f.loss.alpha == 0.0);
  CHECK(f.loss.beta == 0.5);
  CHECK_THROWS_WITH(load_run_config(dir / "missing.json"), doctest::Contains("missing.json"));
  std::ofstream(dir / "bad.json") << "{ \"seed\": ";
  CHECK_THROWS_WITH(load_run_config(dir / "bad.json"), doctest::Contains("bad.json"));
  fs::remove_all(dir);
}

TEST_CASE("bundled configs load") {
  for (const char* name : {"toy_sbcb.json", "toy_baseline.json"}) {
    const RunConfig c = load_run_config(fs::path(SBCB_SOURCE_DIR) / "configs" / name);
    CHECK(c.num_categories == 5);
    CHECK(c.model.sbd_head == (std::string(name) == "toy_sbcb.json"));
  }
}

TEST_CASE("sgd matches the momentum update written out by hand") {
  const double lr = 0.1, mu = 0.9, wd = 0.01;
  Var p(Tensor(Shape{1, 1, 1, 2}, std::vector<real>{1.0, -2.0}), true);
  Var idle(Tensor(Shape{1, 1, 1, 1}, real(3)), true);
  Sgd sgd({{"p", p}, {"idle", idle}}, OptimizerConfig{lr, mu, wd});
  const double g[2][2] = {{0.5, 0.1}, {-0.2, 0.3}};
  double ref[2] = {1.0, -2.0}, buf[2] = {0, 0};
  for (int step = 0; step < 2; ++step) {
    sgd.zero_grad();
    p.grad() = Tensor(Shape{1, 1, 1, 2}, std::vector<real>{real(g[step][0]), real(g[step][1])});
    sgd.step(lr);
    for (int k = 0; k < 2; ++k) {
      const double d = g[step][k] + wd * ref[k];
      buf[k] = step == 0 ? d : mu * buf[k] + d;
      ref[k] -= lr * buf[k];
    }
    CHECK(p.value()[0] == doctest::Approx(ref[0]).epsilon(1e-6));
    CHECK(p.value()[1] == doctest::Approx(ref[1]).epsilon(1e-6));
  }
  // step 1: 1 - 0.1 * 0.51
  CHECK(ref[0] == doctest::Approx(1.0 - 0.051 + -0.1 * (0.9 * 0.51 + (-0.2 + 0.01 * 0.949))));
  CHECK(idle.value()[0] == 3);
  CHECK(sgd.momentum()[1].empty());
}

TEST_CASE("batch order covers each epoch and drops the remainder") {
  RunConfig c = tiny();
  c.data.num_train = 13;
  auto data = single_image_set(13, 32, 3, 5);
  BatchSource src(data, c);
  CHECK(src.batches_per_epoch() == 3);
  for (int epoch = 0; epoch < 3; ++epoch) {
    std::vector<std::size_t> seen;
    for (int b = 0; b < 3; ++b) {
      const auto idx = src.indices(epoch * 3 + b);
      CHECK(idx.size() == 4);
      seen.insert(seen.end(), idx.begin(), idx.end());
    }
    std::sort(seen.begin(), seen.end());
    CHECK(std::adjacent_find(seen.begin(), seen.end()) == seen.end());
    CHECK(seen.size() == 12);
  }
  CHECK(src.indices(0) != src.indices(3));

  const Batch a = src.make(4), b = src.make(4);
  CHECK(same_bits(a.images, b.images));
  CHECK(a.labels == b.labels);
  CHECK(a.semantic == b.semantic);
  CHECK(a.images.shape() == Shape{4, 3, 32, 32});

  BatchQueue q(src, 2, 7, 2);
  for (int it = 2; it < 7; ++it) {
    const Batch x = q.pop(), y = src.make(it);
    CHECK(same_bits(x.images, y.images));
    CHECK(x.ids == y.ids);
  }

  RunConfig big = tiny();
  big.batch_size = 20;
  CHECK_THROWS_WITH_AS(BatchSource(data, big), doctest::Contains("batch_size"), std::invalid_argument);
}

TEST_CASE("binary targets are built for heads that need them") {
  RunConfig c = tiny();
  c.model.head_variant = HeadVariant::kBBCB;
  c.finalize();
  BatchSource src(single_image_set(8, 32, 3, 2), c);
  const Batch b = src.make(0);
  REQUIRE(b.binary.size() == 4);
  CHECK(b.binary[0].num_categories() == 1);
}

TEST_CASE("two identical runs give identical weights") {
  const RunConfig c = tiny();
  Trainer a = make_trainer(c), b = make_trainer(c);
  a.run(6);
  b.run(6);
  CHECK(a.iteration() == 6);
  CHECK(same_state(a.model(), b.model()));
  for (std::size_t i = 0; i < a.history().size(); ++i) CHECK(a.history()[i].loss.total == b.history()[i].loss.total);
  RunConfig other = c;
  other.seed = 4;
  other.finalize();
  Trainer d = make_trainer(other);
  d.run(6);
  CHECK_FALSE(same_state(a.model(), d.model()));
}

TEST_CASE("resuming from a checkpoint reproduces the uninterrupted run") {
  for (HeadVariant v : {HeadVariant::kCASENet, HeadVariant::kDDS}) {
    RunConfig c = tiny();
    c.model.head_variant = v;
    if (v == HeadVariant::kDDS) c.model.sides = {1, 2, 3, 4, 5};
    c.finalize();
    const fs::path dir = temp_dir("resume");
    Trainer full = make_trainer(c);
    full.run();

    Trainer first = make_trainer(c);
    first.run(3);
    first.save_checkpoint(dir / "mid.ckpt");
    Trainer resumed = make_trainer(c);
    resumed.load_checkpoint(dir / "mid.ckpt");
    CHECK(resumed.iteration() == 3);
    resumed.run();
    CHECK(resumed.iteration() == c.schedule.max_iter);
    CHECK(same_state(full.model(), resumed.model()));
    const auto& m1 = full.optimizer().momentum();
    const auto& m2 = resumed.optimizer().momentum();
    for (std::size_t i = 0; i < m1.size(); ++i) CHECK(same_bits(m1[i], m2[i]));
    CHECK(resumed.history().back().loss.total == full.history().back().loss.total);

    RunConfig other = c;
    other.model.seg_head_channels = 6;
    other.finalize();
    Trainer wrong = make_trainer(other);
    CHECK_THROWS_WITH(wrong.load_checkpoint(dir / "mid.ckpt"), doctest::Contains("different model"));
    fs::remove_all(dir);
  }
}

TEST_CASE("alpha = beta = 0 follows the baseline trajectory") {
  for (HeadVariant v : {HeadVariant::kCASENet, HeadVariant::kBBCB}) {
    RunConfig sbcb = tiny(11);
    sbcb.model.head_variant = v;
    sbcb.loss.alpha = 0;
    sbcb.loss.beta = 0;
    sbcb.schedule.max_iter = 10;
    sbcb.finalize();
    RunConfig base = sbcb;
    base.model.sbd_head = false;
    base.finalize();
    Trainer a = make_trainer(sbcb), b = make_trainer(base);
    a.run();
    b.run();
    for (int i = 0; i < 10; ++i) {
      CHECK(a.history()[i].loss.seg_ce == b.history()[i].loss.seg_ce);
      CHECK(a.history()[i].loss.total == b.history()[i].loss.total);
    }
    SegModel plain(base.model);
    copy_matching_state(a.model(), plain);
    CHECK(same_state(plain, b.model()));
  }
}

TEST_CASE("the bundled toy config trains for 200 steps and the loss falls") {
  const RunConfig c = load_run_config(fs::path(SBCB_SOURCE_DIR) / "configs" / "toy_sbcb.json",
                                      {"schedule.max_iter=200", "output_dir=", "data.num_val=20"});
  Trainer t = make_trainer(c);
  t.run();
  const auto& h = t.history();
  REQUIRE(h.size() == 200);
  double first = 0, last = 0;
  for (int i = 0; i < 10; ++i) {
    first += h[i].loss.total / 10;
    last += h[190 + i].loss.total / 10;
  }
  CHECK(h.back().loss.total < h.front().loss.total);
  CHECK(last < first);
  MESSAGE("toy loss " << first << " -> " << last);

  // the width ladder: F never rises as the trimap narrows
  auto [train, val] = make_datasets(c);
  const EvalReport r = evaluate(t.model(), *val, c);
  for (std::size_t i = 1; i < r.fscores.size(); ++i) CHECK(r.fscores[i - 1].mean <= r.fscores[i].mean);
  REQUIRE(r.ods);
  CHECK(r.ods->mf >= 0.0);
  CHECK(r.ods->mf <= 1.0);
}

TEST_CASE("training writes logs and checkpoints") {
  RunConfig c = tiny();
  const fs::path dir = temp_dir("logs");
  c.output_dir = dir.string();
  c.log_interval = 2;
  c.eval_interval = 4;
  c.checkpoint_interval = 4;
  Trainer t = make_trainer(c);
  int evals = 0;
  t.on_eval = [&](int, const EvalReport& r) {
    ++evals;
    CHECK(r.images == 4);
  };
  t.run();
  CHECK(evals == 2);
  CHECK(fs::exists(dir / "iter_4.ckpt"));
  CHECK(fs::exists(dir / "final.ckpt"));
  CHECK(fs::exists(dir / "config.json"));
  std::ifstream log(dir / "train_log.jsonl");
  int steps = 0, eval_lines = 0;
  for (std::string line; std::getline(log, line);) {
    const auto j = nlohmann::json::parse(line);
    if (j.contains("eval")) {
      ++eval_lines;
      CHECK(j["eval"].contains("boundary_f"));
    } else {
      ++steps;
      CHECK(j.contains("sbd_bce"));
      CHECK(j["sbd_bce"].size() == 2);
    }
  }
  CHECK(steps == 5);  // iterations 1, 2, 4, 6, 8
  CHECK(eval_lines == 2);
  const LoadedModel m = load_weights(dir / "final.ckpt");
  CHECK(m.kind == "checkpoint");
  CHECK(m.iteration == 8);
  CHECK(same_state(*m.model, t.model()));
  fs::remove_all(dir);
}

TEST_CASE("a non-finite loss aborts with a dump of the batch") {
  RunConfig c = tiny();
  const fs::path dir = temp_dir("nan");
  c.output_dir = dir.string();
  c.optimizer.lr = 1e30;
  c.finalize();
  Trainer t = make_trainer(c);
  CHECK_THROWS_WITH_AS(t.run(), doctest::Contains("non-finite"), NonFiniteLoss);
  CHECK(t.iteration() < c.schedule.max_iter);
  CHECK(fs::exists(dir / ("nonfinite_iter" + std::to_string(t.iteration())) / "report.json"));

  // a NaN pixel has to reach the loss rather than vanish in a ReLU
  RunConfig d = tiny();
  d.output_dir = dir.string();
  d.augment = AugmentConfig::identity(32, 32);
  d.finalize();
  std::vector<RawSample> samples = synth_shapes(4, 32, 3, 1).samples();
  for (auto& s : samples) s.image.at(0, 1, 5, 5) = std::numeric_limits<real>::quiet_NaN();
  Trainer bad(d, std::make_shared<InMemoryDataset>(samples));
  CHECK_THROWS_AS(bad.run(), NonFiniteLoss);
  CHECK(bad.iteration() == 0);
  CHECK(fs::exists(dir / "nonfinite_iter0" / "report.json"));
  fs::remove_all(dir);
}

TEST_CASE("export keeps only the baseline network") {
  RunConfig c = tiny();
  c.model.fcn_aux = true;
  c.model.aux_side = 4;
  c.finalize();
  const fs::path dir = temp_dir("export");
  Trainer t = make_trainer(c);
  t.run(3);
  t.save_checkpoint(dir / "run.ckpt");
  export_checkpoint(dir / "run.ckpt", dir / "model.bin");
  const LoadedModel m = load_weights(dir / "model.bin");
  CHECK(m.kind == "inference");
  CHECK_FALSE(m.model->has_head());
  CHECK(m.model->parameter_count() == t.model().baseline_parameter_count());
  CHECK(m.model->parameter_count() == SegModel(c.model.baseline()).parameter_count());
  CHECK(m.model->parameter_count() < t.model().parameter_count());
  CHECK(m.manifest["config_hash"] == config_hash(to_json(t.config())));
  CHECK(m.manifest["categories"].get<std::vector<std::string>>() == c.category_names());
  CHECK(m.manifest["fusion"] == "none");
  for (const auto& p : m.model->named_parameters()) {
    const std::string& n = p.name;
    CHECK((n.rfind("backbone.", 0) == 0 || n.rfind("seg_head.", 0) == 0));
  }

  // exporting the loaded artifact again is refused
  CHECK_THROWS_AS(export_checkpoint(dir / "model.bin", dir / "again.bin"), std::invalid_argument);

  std::mt19937_64 rng(9);
  t.model().eval();
  for (int i = 0; i < 5; ++i) {
    const Tensor x = sbcb_test::random_tensor(Shape{1, 3, 32, 32}, rng, 0, 1);
    NoGradGuard ng;
    CHECK(max_abs_diff(t.model().segment(Var(x)).value(), m.model->segment(Var(x)).value()) <= 1e-6);
  }
  fs::remove_all(dir);
}

TEST_CASE("export is refused when fusion feeds the head into segmentation") {
  for (FusionMode mode : {FusionMode::kChannelMerge, FusionMode::kTwoStream}) {
    RunConfig c = tiny();
    c.model.fusion.mode = mode;
    c.finalize();
    Trainer t = make_trainer(c);
    CHECK_THROWS_WITH_AS(export_inference(t.model(), c, temp_dir("fused") / "x.bin"), doctest::Contains("fusion"),
                         std::invalid_argument);
  }
}

TEST_CASE("corrupt weight files are rejected with their path") {
  const fs::path dir = temp_dir("corrupt");
  std::ofstream(dir / "junk.bin") << "not a checkpoint";
  CHECK_THROWS_WITH(load_weights(dir / "junk.bin"), doctest::Contains("junk.bin"));
  CHECK_THROWS_WITH(load_weights(dir / "absent.bin"), doctest::Contains("absent.bin"));
  fs::remove_all(dir);
}

TEST_CASE("ground truth scored against itself") {
  std::mt19937_64 rng(21);
  EvalConfig ec;
  ec.ods_thresholds = 9;
  Evaluator ev(4, ec, kDefaultIgnoreIndex, 4);
  BoundaryGenConfig bg;
  bg.radius = 1;
  for (int i = 0; i < 6; ++i) {
    const LabelMap gt = sbcb_test::random_label_map(rng, 24, 24, 4, 0.02);
    ev.add_segmentation(gt, gt);
    const SemanticBoundaryTensor b = semantic_boundaries(gt, 4, bg);
    Tensor probs(Shape{1, 4, 24, 24});
    for (int c = 0; c < 4; ++c)
      for (int y = 0; y < 24; ++y)
        for (int x = 0; x < 24; ++x) probs.at(0, c, y, x) = b.at(c, y, x);
    ev.add_boundaries(probs, b);
  }
  const EvalReport r = ev.report();
  CHECK(r.iou.mean == 1.0);
  for (const auto& f : r.fscores) CHECK(f.mean == 1.0);
  REQUIRE(r.ods);
  CHECK(r.ods->mf == 1.0);
  const auto j = r.to_json({"a", "b", "c", "d"});
  CHECK(j["miou"] == 1.0);
  CHECK(j["boundary_f"]["12"]["mean"] == 1.0);
  CHECK(r.summary_table({"a", "b", "c", "d"}).find("mean") != std::string::npos);

  LabelMap bad(24, 24, 7);
  CHECK_THROWS_AS(ev.add_segmentation(bad, bad), std::invalid_argument);
  CHECK_THROWS_AS(ev.add_segmentation(LabelMap(3, 3), LabelMap(4, 4)), std::invalid_argument);
}

TEST_CASE("whole and slide inference agree when the image fits one window") {
  const RunConfig c = tiny();
  SegModel model(c.model);
  model.eval();
  std::mt19937_64 rng(4);
  const Tensor img = sbcb_test::random_tensor(Shape{1, 3, 32, 32}, rng, 0, 1);
  EvalConfig whole = c.eval, slide = c.eval;
  slide.mode = "slide";
  for (auto [wh, ww] : {std::pair{32, 32}, std::pair{64, 128}}) {
    slide.window_h = wh;
    slide.window_w = ww;
    CHECK(same_bits(predict_logits(model, img, whole), predict_logits(model, img, slide)));
  }
  slide.window_h = slide.window_w = 16;
  slide.stride_h = slide.stride_w = 12;
  const Tensor tiled = predict_logits(model, img, slide);
  CHECK(tiled.shape() == Shape{1, 3, 32, 32});
  for (real v : tiled.values()) CHECK(std::isfinite(v));

  // one scale with flip: the mean of the plain and mirrored passes
  EvalConfig tta = c.eval;
  tta.ms_flip = true;
  tta.scales = {1.0};
  const Tensor plain = predict_logits(model, img, whole);
  const Tensor mirrored = flip_horizontal(predict_logits(model, flip_horizontal(img), whole));
  Tensor expect = plain;
  expect.add_(mirrored);
  expect.scale_(real(0.5));
  CHECK(max_abs_diff(predict_logits(model, img, tta), expect) <= 1e-6);
  tta.scales = {0.5, 1.0, 1.5};
  CHECK(predict_logits(model, img, tta).shape() == Shape{1, 3, 32, 32});
}

TEST_CASE("evaluate writes its report files") {
  RunConfig c = tiny();
  c.eval.error_maps = 2;
  c.finalize();
  SegModel model(c.model);
  auto val = single_image_set(3, 32, 3, 8);
  const fs::path dir = temp_dir("eval");
  const EvalReport r = evaluate(model, *val, c, dir);
  CHECK(r.images == 3);
  CHECK(r.ods.has_value());
  CHECK(model.is_training());
  std::ifstream in(dir / "eval_report.jsonl");
  int lines = 0;
  std::string line, last;
  while (std::getline(in, line)) {
    ++lines;
    last = line;
  }
  CHECK(lines == 4);
  CHECK(nlohmann::json::parse(last).contains("summary"));
  CHECK(fs::exists(dir / "eval_summary.txt"));
  int maps = 0;
  for ([[maybe_unused]] const auto& e : fs::directory_iterator(dir / "error_maps")) ++maps;
  CHECK(maps == 2);

  RunConfig wrong = c;
  wrong.num_categories = 4;
  wrong.categories.clear();
  wrong.finalize();
  CHECK_THROWS_AS(evaluate(model, *val, wrong), std::invalid_argument);

  RunConfig bin = c;
  bin.model.head_variant = HeadVariant::kBBCB;
  bin.finalize();
  SegModel bmodel(bin.model);
  const EvalReport br = evaluate(bmodel, *val, bin);
  REQUIRE(br.ods);
  CHECK(br.ods->per_category.size() == 1);
  fs::remove_all(dir);
}
