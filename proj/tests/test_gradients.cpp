// Central finite differences against the analytic backward passes, in double.
#include <functional>
#include <random>

#include "doctest.h"
#include "sbcb/boundary_gen.hpp"
#include "sbcb/losses.hpp"
#include "sbcb/model.hpp"
#include "test_support.hpp"

using namespace sbcb;
using sbcb_test::random_tensor;

static_assert(sizeof(real) == 8, "gradient checks need the double build");

namespace {

constexpr double kEps = 1e-4;
constexpr double kRel = 1e-3;

// <x, r> reduced to a scalar node.
Var dot(const Var& x, const Tensor& r) {
  double s = 0;
  for (std::size_t i = 0; i < r.numel(); ++i) s += x.value()[i] * r[i];
  return make_result(Tensor::scalar(s), {x}, [r](Node& self) {
    Tensor& g = self.inputs[0]->grad_buffer();
    for (std::size_t i = 0; i < r.numel(); ++i) g[i] += self.grad[0] * r[i];
  });
}

bool agrees(double analytic, double numeric) {
  return std::abs(analytic - numeric) <= kRel * std::max(std::abs(analytic), std::abs(numeric)) + 1e-10;
}

double numeric_grad(const std::function<double()>& f, Tensor& t, std::size_t i) {
  const double keep = t[i];
  t[i] = keep + kEps;
  const double up = f();
  t[i] = keep - kEps;
  const double down = f();
  t[i] = keep;
  return (up - down) / (2 * kEps);
}

// Checks every input entry of a unary op.
void check_op(const std::function<Var(const Var&)>& op, Shape in, std::uint64_t seed, double lo = -1, double hi = 1) {
  std::mt19937_64 rng(seed);
  Var x(random_tensor(in, rng, lo, hi), true);
  const Tensor probe = random_tensor(op(x).shape(), rng);
  backward(dot(op(x), probe));
  const Tensor analytic = x.grad();
  Tensor& v = x.mutable_value();
  for (std::size_t i = 0; i < v.numel(); ++i) {
    const double n = numeric_grad([&] { return dot(op(x), probe).value()[0]; }, v, i);
    CAPTURE(i);
    CHECK(agrees(analytic[i], n));
  }
}

struct Toy {
  std::vector<LabelMap> labels;
  std::vector<SemanticBoundaryTensor> sem, bin;
  Var images;
};

Toy toy_batch(int c, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  Toy t;
  BoundaryGenConfig bg;
  bg.radius = 1;
  for (int n = 0; n < 2; ++n) {
    t.labels.push_back(sbcb_test::random_label_map(rng, 4, 4, c));
    t.sem.push_back(semantic_boundaries(t.labels.back(), c, bg));
    SemanticBoundaryTensor b(1, 4, 4);
    const BinaryMask m = binary_boundaries(t.labels.back(), bg);
    for (int i = 0; i < 16; ++i) b.channel(0)[i] = m[i];
    t.bin.push_back(b);
  }
  t.images = Var(random_tensor(Shape{2, 3, 4, 4}, rng));
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
  cfg.seed = 21;
  return cfg;
}

// BN betas start at exactly 0, so a constant channel lands on the ReLU kink;
// move the affine parameters to a generic point first.
void jitter_norms(SegModel& m, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> d(-0.3, 0.3);
  for (auto& p : m.named_parameters()) {
    if (p.name.find(".bn.") == std::string::npos) continue;
    for (auto& v : p.var.mutable_value().values()) v += d(rng);
  }
}

Var model_loss(const SegModel& m, const Toy& t) {
  const ModelOutputs o = m.forward(t.images);
  return total_loss(o.seg_logits, o.head ? &*o.head : nullptr, m.config().head_variant, o.aux_logits,
                    LossTargets{t.labels, t.sem, t.bin}, LossWeights{})
      .total;
}

}  // namespace

TEST_CASE("elementwise and layout ops") {
  check_op([](const Var& x) { return relu(x); }, {2, 3, 4, 4}, 1);
  check_op([](const Var& x) { return sigmoid(x); }, {2, 3, 4, 4}, 2, -4, 4);
  check_op([](const Var& x) { return scale(x, 1.7); }, {1, 2, 3, 3}, 3);
  check_op([](const Var& x) { return max_pool2d(x, 2); }, {2, 2, 6, 5}, 4);
  check_op([](const Var& x) { return resize_bilinear(x, 9, 7); }, {1, 2, 4, 3}, 5);
  check_op([](const Var& x) { return resize_bilinear(x, 3, 2); }, {1, 2, 7, 5}, 6);
  check_op([](const Var& x) { return group_sum(x, 2); }, {2, 6, 3, 3}, 7);
  check_op([](const Var& x) { return slice_channels(x, 1, 2); }, {2, 4, 3, 3}, 8);
  check_op([](const Var& x) { return concat_channels({x, scale(x, 2), x}); }, {2, 2, 3, 3}, 9);
  check_op([](const Var& x) { return mul(x, add(x, x)); }, {1, 3, 3, 3}, 10);
}

TEST_CASE("convolution and batch norm") {
  std::mt19937_64 rng(11);
  struct Case {
    int cin, cout, k;
    ConvGeometry g;
  };
  for (const Case& cc : {Case{3, 4, 3, {1, 1, 1, 1}}, Case{4, 4, 3, {2, 2, 2, 2}}, Case{6, 3, 1, {1, 0, 1, 3}},
                         Case{4, 4, 3, {1, 1, 1, 4}}}) {
    const Tensor w = random_tensor(Shape{cc.cout, cc.cin / cc.g.groups, cc.k, cc.k}, rng);
    const Tensor b = random_tensor(Shape{1, cc.cout, 1, 1}, rng);
    check_op([&](const Var& x) { return conv2d(x, Var(w), Var(b), cc.g); }, {2, cc.cin, 6, 5}, 12);
    // gradients w.r.t. the weights
    const Var x(random_tensor(Shape{2, cc.cin, 6, 5}, rng));
    check_op([&](const Var& wv) { return conv2d(x, wv, Var(b), cc.g); }, w.shape(), 13);
    check_op([&](const Var& bv) { return conv2d(x, Var(w), bv, cc.g); }, b.shape(), 14);
  }
  Tensor rm(Shape{1, 3, 1, 1}, 0), rv(Shape{1, 3, 1, 1}, 1);
  const Var gamma(random_tensor(Shape{1, 3, 1, 1}, rng, 0.5, 1.5)), beta(random_tensor(Shape{1, 3, 1, 1}, rng));
  check_op([&](const Var& x) { return batch_norm(x, gamma, beta, rm, rv, true, 0.1, 1e-5); }, {2, 3, 3, 4}, 15);
  check_op([&](const Var& x) { return batch_norm(x, gamma, beta, rm, rv, false, 0.1, 1e-5); }, {2, 3, 3, 4}, 16);
  const Var x(random_tensor(Shape{2, 3, 3, 4}, rng));
  check_op([&](const Var& g) { return batch_norm(x, g, beta, rm, rv, true, 0.1, 1e-5); }, {1, 3, 1, 1}, 17);
}

TEST_CASE("losses") {
  std::mt19937_64 rng(21);
  std::vector<LabelMap> labels{sbcb_test::random_label_map(rng, 4, 5, 3, 0.2),
                               sbcb_test::random_label_map(rng, 4, 5, 3, 0.2)};
  std::vector<SemanticBoundaryTensor> t;
  for (const auto& l : labels) t.push_back(semantic_boundaries(l, 3, BoundaryGenConfig{1.0}));
  check_op([&](const Var& x) { return seg_cross_entropy(x, labels, 255); }, {2, 3, 4, 5}, 22, -3, 3);
  BceOptions cat;
  cat.balance = BalanceMode::kPerCategory;
  check_op([&](const Var& x) { return balanced_multilabel_bce(x, t, {}, labels); }, {2, 3, 4, 5}, 23, -3, 3);
  check_op([&](const Var& x) { return balanced_multilabel_bce(x, t, cat, labels); }, {2, 3, 4, 5}, 24, -3, 3);
}

TEST_CASE("total loss through every head variant at sampled weights") {
  const std::vector<std::pair<HeadVariant, FusionMode>> cases{
      {HeadVariant::kCASENet, FusionMode::kNone},        {HeadVariant::kDFF, FusionMode::kNone},
      {HeadVariant::kDDS, FusionMode::kNone},            {HeadVariant::kBBCB, FusionMode::kNone},
      {HeadVariant::kCASENet, FusionMode::kChannelMerge}, {HeadVariant::kCASENet, FusionMode::kTwoStream}};
  for (const auto& [variant, fusion] : cases) {
    CAPTURE(to_string(variant));
    CAPTURE(to_string(fusion));
    SegModel model(toy_config(variant, fusion));
    jitter_norms(model, 61);
    if (auto* cm = model.channel_merge()) {
      // move the merge off its identity start so its path is exercised
      cm->mix(1).weight().mutable_value().fill(0.05);
    }
    const Toy toy = toy_batch(3, 31);
    backward(model_loss(model, toy));
    auto params = model.named_parameters();
    std::mt19937_64 pick(41);
    int checked = 0;
    for (int attempt = 0; attempt < 200 && checked < 12; ++attempt) {
      auto& p = params[pick() % params.size()];
      const std::size_t i = pick() % p.var.value().numel();
      const double a = p.var.grad().numel() ? p.var.grad()[i] : 0.0;
      const double n = numeric_grad([&] { return model_loss(model, toy).value()[0]; }, p.var.mutable_value(), i);
      if (a == 0 && n == 0) continue;  // unreached entries say nothing
      CAPTURE(p.name);
      CAPTURE(a);
      CAPTURE(n);
      CHECK(agrees(a, n));
      ++checked;
    }
    CHECK(checked >= 10);
  }
}

TEST_CASE("every tapped stage receives gradient from the SBD terms alone") {
  for (auto variant : {HeadVariant::kCASENet, HeadVariant::kDDS}) {
    SegModel model(toy_config(variant));
    const Toy toy = toy_batch(3, 51);
    const ModelOutputs o = model.forward(toy.images);
    // seg weight 1 but isolate: use the head terms only
    std::vector<Var> terms;
    for (const Var& v : o.head->sbd_set()) terms.push_back(balanced_multilabel_bce(v, toy.sem, {}, toy.labels));
    for (const Var& v : o.head->binary_side_logits) terms.push_back(balanced_multilabel_bce(v, toy.bin, {}, toy.labels));
    backward(weighted_sum(terms, std::vector<real>(terms.size(), 1)));
    const auto specs = model.backbone().stage_specs();
    for (const auto& g : model.taps().all_sides())
      for (int f : g.features) {
        const std::string prefix = "backbone." + specs[f].name + ".conv.weight";
        bool found = false;
        for (const auto& p : model.named_parameters())
          if (p.name == prefix) {
            found = true;
            CAPTURE(prefix);
            REQUIRE(p.var.grad().numel() > 0);
            CHECK(sbcb_test::max_abs(p.var.grad()) > 0);
          }
        CHECK(found);
      }
  }
}
