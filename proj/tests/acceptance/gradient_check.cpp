#include "gradient_check.hpp"

#include <functional>
#include <random>
#include <sstream>

#include "sbcb/boundary_gen.hpp"
#include "sbcb/losses.hpp"
#include "sbcb/model.hpp"
#include "test_support.hpp"

using namespace sbcb;

static_assert(sizeof(real) == 8, "compile this file with SBCB_DOUBLE_PRECISION");

namespace {

constexpr double kEps = 1e-4;
constexpr double kRel = 1e-3;

struct Toy {
  std::vector<LabelMap> labels;
  std::vector<SemanticBoundaryTensor> sem, bin;
  Var images;
};

// 4x4 images, batch of two, three categories
Toy toy_batch(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  Toy t;
  BoundaryGenConfig bg;
  bg.radius = 1;
  for (int n = 0; n < 2; ++n) {
    t.labels.push_back(sbcb_test::random_label_map(rng, 4, 4, 3));
    t.sem.push_back(semantic_boundaries(t.labels.back(), 3, bg));
    SemanticBoundaryTensor b(1, 4, 4);
    const BinaryMask m = binary_boundaries(t.labels.back(), bg);
    for (int i = 0; i < 16; ++i) b.channel(0)[i] = m[i];
    t.bin.push_back(b);
  }
  t.images = Var(sbcb_test::random_tensor(Shape{2, 3, 4, 4}, rng));
  return t;
}

ModelConfig toy_config(HeadVariant v, FusionMode f = FusionMode::kNone) {
  ModelConfig cfg;
  cfg.num_categories = 3;
  cfg.stage_channels = {3, 4, 4, 4, 4};
  cfg.trick = "edge";
  cfg.seg_head_channels = 4;
  cfg.head_variant = v;
  cfg.sides = v == HeadVariant::kDDS ? std::vector<int>{1, 2, 3, 4, 5} : std::vector<int>{1, 2, 3, 5};
  cfg.fcn_aux = true;
  cfg.aux_channels = 4;
  cfg.fusion.mode = f;
  cfg.seed = 5;
  return cfg;
}

// BN affine terms start at (1, 0); a constant channel then sits on the ReLU
// kink where a central difference is meaningless
void jitter_norms(SegModel& m) {
  std::mt19937_64 rng(13);
  std::uniform_real_distribution<double> d(-0.3, 0.3);
  for (auto& p : m.named_parameters())
    if (p.name.find(".bn.") != std::string::npos)
      for (auto& v : p.var.mutable_value().values()) v += d(rng);
}

double loss_value(const SegModel& m, const Toy& t, Var* keep = nullptr) {
  const ModelOutputs o = m.forward(t.images);
  const LossResult r = total_loss(o.seg_logits, o.head ? &*o.head : nullptr, m.config().head_variant, o.aux_logits,
                                  LossTargets{t.labels, t.sem, t.bin}, LossWeights{});
  if (keep) *keep = r.total;
  return r.total.value()[0];
}

}  // namespace

GradientCheckSummary run_gradient_check() {
  GradientCheckSummary s;
  std::ostringstream detail;
  const std::vector<std::pair<HeadVariant, FusionMode>> cases{
      {HeadVariant::kCASENet, FusionMode::kNone},        {HeadVariant::kDFF, FusionMode::kNone},
      {HeadVariant::kDDS, FusionMode::kNone},            {HeadVariant::kBBCB, FusionMode::kNone},
      {HeadVariant::kCASENet, FusionMode::kChannelMerge}, {HeadVariant::kCASENet, FusionMode::kTwoStream}};
  for (const auto& [v, f] : cases) {
    SegModel model(toy_config(v, f));
    jitter_norms(model);
    if (auto* cm = model.channel_merge()) cm->mix(1).weight().mutable_value().fill(0.05);
    const Toy toy = toy_batch(17);
    Var total;
    loss_value(model, toy, &total);
    backward(total);
    auto params = model.named_parameters();
    std::mt19937_64 pick(29);
    int here = 0;
    for (int attempt = 0; attempt < 400 && here < 12; ++attempt) {
      auto& p = params[pick() % params.size()];
      const std::size_t i = pick() % p.var.value().numel();
      const double a = p.var.grad().numel() ? p.var.grad()[i] : 0.0;
      Tensor& w = p.var.mutable_value();
      const double keep = w[i];
      w[i] = keep + kEps;
      const double up = loss_value(model, toy);
      w[i] = keep - kEps;
      const double down = loss_value(model, toy);
      w[i] = keep;
      const double n = (up - down) / (2 * kEps);
      if (a == 0 && n == 0) continue;
      const double rel = std::abs(a - n) / std::max(std::abs(a), std::abs(n));
      if (std::max(std::abs(a), std::abs(n)) > 1e-6) s.worst_rel = std::max(s.worst_rel, rel);
      if (std::abs(a - n) > kRel * std::max(std::abs(a), std::abs(n)) + 1e-10) {
        ++s.failed;
        detail << to_string(v) << "/" << to_string(f) << ":" << p.name << "[" << i << "] " << a << " vs " << n << "; ";
      }
      ++here;
    }
    s.checked += here;
    if (here < 10) {
      ++s.failed;
      detail << to_string(v) << "/" << to_string(f) << " only " << here << " weights; ";
    }
  }

  // SBD terms alone must reach every tapped stage
  s.stages_reached = true;
  for (HeadVariant v : {HeadVariant::kCASENet, HeadVariant::kDDS}) {
    SegModel model(toy_config(v));
    const Toy toy = toy_batch(23);
    const ModelOutputs o = model.forward(toy.images);
    std::vector<Var> terms;
    for (const Var& x : o.head->sbd_set()) terms.push_back(balanced_multilabel_bce(x, toy.sem, {}, toy.labels));
    for (const Var& x : o.head->binary_side_logits) terms.push_back(balanced_multilabel_bce(x, toy.bin, {}, toy.labels));
    backward(weighted_sum(terms, std::vector<real>(terms.size(), 1)));
    const auto specs = model.backbone().stage_specs();
    for (const auto& g : model.taps().all_sides())
      for (int f : g.features) {
        const std::string name = "backbone." + specs[f].name + ".conv.weight";
        bool nonzero = false;
        for (auto& p : model.named_parameters())
          if (p.name == name && p.var.grad().numel() > 0 && sbcb_test::max_abs(p.var.grad()) > 0) nonzero = true;
        if (!nonzero) {
          s.stages_reached = false;
          detail << to_string(v) << ": no SBD gradient at " << name << "; ";
        }
      }
  }
  s.detail = detail.str();
  return s;
}
