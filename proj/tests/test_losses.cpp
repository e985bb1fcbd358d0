#include <cmath>
#include <random>

#include "doctest.h"
#include "sbcb/losses.hpp"
#include "test_support.hpp"

using namespace sbcb;
using sbcb_test::random_tensor;

namespace {

double ce_oracle(const Tensor& x, const std::vector<LabelMap>& labels, int ignore) {
  double total = 0;
  int count = 0;
  for (int n = 0; n < x.n(); ++n)
    for (int y = 0; y < x.h(); ++y)
      for (int xx = 0; xx < x.w(); ++xx) {
        const int t = labels[n].at(y, xx);
        if (t == ignore) continue;
        double z = 0;
        for (int c = 0; c < x.c(); ++c) z += std::exp(double(x.at(n, c, y, xx)));
        total += -std::log(std::exp(double(x.at(n, t, y, xx))) / z);
        ++count;
      }
  return count ? total / count : 0.0;
}

double bce_oracle(const Tensor& x, const std::vector<SemanticBoundaryTensor>& t, const std::vector<LabelMap>& labels,
                  bool per_category) {
  double total = 0;
  long long entries = 0;
  for (int n = 0; n < x.n(); ++n) {
    auto keep = [&](int y, int xx) { return labels.empty() || labels[n].at(y, xx) != 255; };
    std::vector<double> rho(x.c());
    double pos_all = 0, tot_all = 0;
    for (int c = 0; c < x.c(); ++c) {
      double pos = 0, tot = 0;
      for (int y = 0; y < x.h(); ++y)
        for (int xx = 0; xx < x.w(); ++xx)
          if (keep(y, xx)) {
            ++tot;
            pos += t[n].at(c, y, xx);
          }
      rho[c] = pos / tot;
      pos_all += pos;
      tot_all += tot;
    }
    for (int c = 0; c < x.c(); ++c) {
      double r = per_category ? rho[c] : pos_all / tot_all;
      double wp = 1 - r, wn = r;
      if (r == 0 || r == 1) wp = wn = 1;
      for (int y = 0; y < x.h(); ++y)
        for (int xx = 0; xx < x.w(); ++xx) {
          if (!keep(y, xx)) continue;
          const double p = 1 / (1 + std::exp(-double(x.at(n, c, y, xx))));
          total += t[n].at(c, y, xx) ? -wp * std::log(p) : -wn * std::log(1 - p);
          ++entries;
        }
    }
  }
  return total / entries;
}

SemanticBoundaryTensor random_targets(std::mt19937_64& rng, int c, int h, int w, double p) {
  SemanticBoundaryTensor t(c, h, w);
  std::bernoulli_distribution d(p);
  for (int k = 0; k < c; ++k)
    for (auto& v : t.channel(k)) v = d(rng);
  return t;
}

}  // namespace

TEST_CASE("segmentation cross-entropy closed forms") {
  std::vector<LabelMap> labels{LabelMap(3, 5, 2)};
  labels[0].at(1, 1) = 0;
  CHECK(seg_cross_entropy(Var(Tensor(Shape{1, 4, 3, 5}, 0)), labels, 255).value()[0] ==
        doctest::Approx(std::log(4.0)));
  Tensor onehot(Shape{1, 4, 3, 5}, -20);
  for (int y = 0; y < 3; ++y)
    for (int x = 0; x < 5; ++x) onehot.at(0, labels[0].at(y, x), y, x) = 20;
  CHECK(seg_cross_entropy(Var(onehot), labels, 255).value()[0] < 1e-6);

  bool flag = false;
  std::vector<LabelMap> ignored{LabelMap(3, 5, 255)};
  Var logits(Tensor(Shape{1, 4, 3, 5}, 1), true);
  const Var loss = seg_cross_entropy(logits, ignored, 255, &flag);
  CHECK(flag);
  CHECK(loss.value()[0] == 0);
  backward(loss);
  CHECK(sbcb_test::max_abs(logits.grad()) == 0.0);
  seg_cross_entropy(logits, labels, 255, &flag);
  CHECK_FALSE(flag);

  std::vector<LabelMap> bad{LabelMap(3, 5, 7)};
  CHECK_THROWS_AS(seg_cross_entropy(logits, bad, 255), std::invalid_argument);
  std::vector<LabelMap> wrong{LabelMap(4, 5, 0)};
  CHECK_THROWS_AS(seg_cross_entropy(logits, wrong, 255), std::invalid_argument);
  CHECK_THROWS_AS(seg_cross_entropy(logits, {}, 255), std::invalid_argument);
}

TEST_CASE("segmentation cross-entropy matches the direct formula") {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 10; ++trial) {
    const Tensor x = random_tensor(Shape{2, 5, 7, 6}, rng, -3, 3);
    std::vector<LabelMap> labels{sbcb_test::random_label_map(rng, 7, 6, 5, 0.2),
                                 sbcb_test::random_label_map(rng, 7, 6, 5, 0.2)};
    CHECK(seg_cross_entropy(Var(x), labels, 255).value()[0] == doctest::Approx(ce_oracle(x, labels, 255)).epsilon(1e-5));
  }
}

TEST_CASE("balanced BCE closed forms") {
  std::mt19937_64 rng(5);
  SUBCASE("all-zero targets, confident negatives") {
    std::vector<SemanticBoundaryTensor> t{SemanticBoundaryTensor(3, 4, 4)};
    bool fb = false;
    const double l = balanced_multilabel_bce(Var(Tensor(Shape{1, 3, 4, 4}, -30)), t, {}, {}, &fb).value()[0];
    CHECK(l < 1e-9);
    CHECK(fb);
  }
  SUBCASE("zero logits give 2 rho (1 - rho) ln 2") {
    for (double p : {0.05, 0.3, 0.5}) {
      std::vector<SemanticBoundaryTensor> t{random_targets(rng, 4, 9, 9, p), random_targets(rng, 4, 9, 9, p)};
      // same rho in both images keeps the closed form exact
      t[1] = t[0];
      const double rho = double(t[0].count()) / (4 * 81);
      bool fb = true;
      const double l = balanced_multilabel_bce(Var(Tensor(Shape{2, 4, 9, 9}, 0)), t, {}, {}, &fb).value()[0];
      CHECK_FALSE(fb);
      CHECK(l == doctest::Approx(2 * rho * (1 - rho) * std::log(2.0)).epsilon(1e-6));
    }
  }
  SUBCASE("random logits match the direct formula, both balance modes, with ignore") {
    for (int trial = 0; trial < 10; ++trial) {
      const Tensor x = random_tensor(Shape{2, 3, 6, 7}, rng, -4, 4);
      std::vector<SemanticBoundaryTensor> t{random_targets(rng, 3, 6, 7, 0.2), random_targets(rng, 3, 6, 7, 0.4)};
      std::vector<LabelMap> labels{sbcb_test::random_label_map(rng, 6, 7, 3, 0.3),
                                   sbcb_test::random_label_map(rng, 6, 7, 3, 0.3)};
      BceOptions img, cat;
      cat.balance = BalanceMode::kPerCategory;
      CHECK(balanced_multilabel_bce(Var(x), t, img, labels).value()[0] ==
            doctest::Approx(bce_oracle(x, t, labels, false)).epsilon(1e-5));
      CHECK(balanced_multilabel_bce(Var(x), t, cat, labels).value()[0] ==
            doctest::Approx(bce_oracle(x, t, labels, true)).epsilon(1e-5));
      CHECK(balanced_multilabel_bce(Var(x), t, img).value()[0] ==
            doctest::Approx(bce_oracle(x, t, {}, false)).epsilon(1e-5));
    }
  }
  SUBCASE("ignored pixels do not contribute") {
    Tensor x = random_tensor(Shape{1, 2, 5, 5}, rng);
    std::vector<SemanticBoundaryTensor> t{random_targets(rng, 2, 5, 5, 0.3)};
    std::vector<LabelMap> labels{LabelMap(5, 5, 0)};
    labels[0].at(2, 2) = 255;
    const double before = balanced_multilabel_bce(Var(x), t, {}, labels).value()[0];
    x.at(0, 0, 2, 2) = 100;
    t[0].at(1, 2, 2) = !t[0].at(1, 2, 2);
    CHECK(balanced_multilabel_bce(Var(x), t, {}, labels).value()[0] == before);
  }
  CHECK_THROWS_AS(balanced_multilabel_bce(Var(Tensor(Shape{1, 2, 5, 5}, 0)), {}), std::invalid_argument);
  std::vector<SemanticBoundaryTensor> wrong{SemanticBoundaryTensor(3, 5, 5)};
  CHECK_THROWS_AS(balanced_multilabel_bce(Var(Tensor(Shape{1, 2, 5, 5}, 0)), wrong), std::invalid_argument);
}

TEST_CASE("total loss assembles the supervision sets per variant") {
  std::mt19937_64 rng(9);
  const int n = 2, c = 3, h = 6, w = 6;
  std::vector<LabelMap> labels{sbcb_test::random_label_map(rng, h, w, c), sbcb_test::random_label_map(rng, h, w, c)};
  std::vector<SemanticBoundaryTensor> sem{random_targets(rng, c, h, w, 0.3), random_targets(rng, c, h, w, 0.3)};
  std::vector<SemanticBoundaryTensor> bin{random_targets(rng, 1, h, w, 0.3), random_targets(rng, 1, h, w, 0.3)};
  const LossTargets targets{labels, sem, bin};
  const Var seg(random_tensor(Shape{n, c, h, w}, rng));
  HeadOutputs casenet{Var(random_tensor(Shape{n, c, h, w}, rng)), Var(random_tensor(Shape{n, c, h, w}, rng)), {}};
  HeadOutputs dds = casenet;
  for (int k = 0; k < 4; ++k) dds.binary_side_logits.push_back(Var(random_tensor(Shape{n, 1, h, w}, rng)));
  HeadOutputs bbcb{Var(random_tensor(Shape{n, 1, h, w}, rng)), Var(random_tensor(Shape{n, 1, h, w}, rng)), {}};

  const LossWeights lw;
  const auto r1 = total_loss(seg, &casenet, HeadVariant::kCASENet, Var(), targets, lw);
  CHECK(r1.report.sbd_bce.size() == 2);
  CHECK(r1.report.bdry_bce.empty());
  CHECK(r1.report.total == doctest::Approx(r1.report.recompose(lw)).epsilon(1e-6));

  const auto r2 = total_loss(seg, &dds, HeadVariant::kDDS, Var(), targets, lw);
  CHECK(r2.report.sbd_bce.size() == 2);
  CHECK(r2.report.bdry_bce.size() == 4);
  CHECK(r2.report.total == doctest::Approx(r2.report.recompose(lw)).epsilon(1e-6));

  const auto r3 = total_loss(seg, &bbcb, HeadVariant::kBBCB, seg, targets, lw);
  CHECK(r3.report.aux_ce.has_value());
  CHECK(r3.report.total == doctest::Approx(r3.report.recompose(lw)).epsilon(1e-6));

  const auto r0 = total_loss(seg, &dds, HeadVariant::kDDS, Var(), targets, LossWeights{0, 0, 0.4});
  CHECK(r0.report.total == doctest::Approx(r0.report.seg_ce).epsilon(1e-7));

  LossWeights doubled = lw;
  doubled.alpha *= 2;
  const auto rd = total_loss(seg, &casenet, HeadVariant::kCASENet, Var(), targets, doubled);
  const double sbd1 = r1.report.total - r1.report.seg_ce, sbd2 = rd.report.total - rd.report.seg_ce;
  CHECK(sbd2 == doctest::Approx(2 * sbd1).epsilon(1e-5));
  CHECK(rd.report.sbd_bce == r1.report.sbd_bce);

  const auto plain = total_loss(seg, nullptr, HeadVariant::kCASENet, Var(), targets, lw);
  CHECK(plain.report.total == plain.report.seg_ce);

  CHECK_THROWS_AS(total_loss(seg, &casenet, HeadVariant::kDDS, Var(), targets, lw), std::invalid_argument);
  CHECK_THROWS_AS(total_loss(seg, &bbcb, HeadVariant::kBBCB, Var(), LossTargets{labels, sem, {}}, lw),
                  std::invalid_argument);
  CHECK_THROWS_AS(total_loss(seg, &casenet, HeadVariant::kCASENet, Var(), targets, LossWeights{-1, 0, 0}),
                  std::invalid_argument);
  CHECK_THROWS_AS(balance_mode_from_string("x"), std::invalid_argument);
}
