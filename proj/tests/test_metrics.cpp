#include <cmath>
#include <random>

#include "doctest.h"
#include "sbcb/metrics.hpp"
#include "test_support.hpp"

using namespace sbcb;

namespace {

BinaryMask half_mask(int h, int w, int split) {
  BinaryMask m(h, w, 0);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < split; ++x) m.at(y, x) = 1;
  return m;
}

BinaryMask random_mask(std::mt19937_64& rng, int h, int w) {
  const LabelMap l = sbcb_test::random_label_map(rng, h, w, 3);
  BinaryMask m(h, w, 0);
  for (std::size_t i = 0; i < m.size(); ++i) m[i] = l[i] == 1;
  return m;
}

// Direct O(P*G) match counting.
MatchCounts brute_match(const BinaryMask& a, const BinaryMask& b, double width) {
  MatchCounts m;
  auto near = [&](const BinaryMask& from, int y, int x) {
    for (int yy = 0; yy < from.height(); ++yy)
      for (int xx = 0; xx < from.width(); ++xx)
        if (from.at(yy, xx) && (yy - y) * (yy - y) + (xx - x) * (xx - x) <= width * width) return true;
    return false;
  };
  for (int y = 0; y < a.height(); ++y)
    for (int x = 0; x < a.width(); ++x) {
      if (a.at(y, x)) {
        ++m.pred_total;
        m.pred_matched += near(b, y, x);
      }
      if (b.at(y, x)) {
        ++m.gt_total;
        m.gt_matched += near(a, y, x);
      }
    }
  return m;
}

}  // namespace

TEST_CASE("mIoU hand-computed cases") {
  LabelMap gt(4, 4, 0), pred(4, 4, 0);
  for (int y = 2; y < 4; ++y)
    for (int x = 0; x < 4; ++x) gt.at(y, x) = pred.at(y, x) = 1;
  std::vector<LabelMap> g{gt}, p{gt};
  auto same = miou(p, g, 2);
  CHECK(same.mean == 1.0);
  pred.at(2, 0) = 0;
  pred.at(3, 3) = 0;
  p = {pred};
  auto r = miou(p, g, 2);
  CHECK(r.per_category[0] == doctest::Approx(8.0 / 10.0));
  CHECK(r.per_category[1] == doctest::Approx(6.0 / 8.0));
  CHECK(r.mean == doctest::Approx(0.775));
  // a third category absent from both is left out of the mean
  auto r3 = miou(p, g, 3);
  CHECK(std::isnan(r3.per_category[2]));
  CHECK(r3.mean == doctest::Approx(0.775));
  // disjoint prediction for a category
  LabelMap all1(4, 4, 1);
  p = {all1};
  CHECK(miou(p, g, 2).per_category[0] == 0.0);
  // ignore pixels are skipped
  gt.at(0, 0) = 255;
  g = {gt};
  p = {gt};
  CHECK(miou(p, g, 2).mean == 1.0);
  LabelMap bad(4, 4, 9);
  p = {bad};
  CHECK_THROWS_AS(miou(p, g, 2), std::invalid_argument);
}

TEST_CASE("mIoU is invariant to relabelling") {
  std::mt19937_64 rng(2);
  const std::vector<int> perm{3, 0, 4, 1, 2};
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<LabelMap> p{sbcb_test::random_label_map(rng, 12, 10, 5)}, g{sbcb_test::random_label_map(rng, 12, 10, 5)};
    const double a = miou(p, g, 5).mean;
    for (auto* v : {&p[0], &g[0]})
      for (auto& x : v->values()) x = perm[x];
    CHECK(miou(p, g, 5).mean == doctest::Approx(a).epsilon(1e-12));
  }
}

TEST_CASE("boundary F-score closed forms") {
  const BinaryMask a = half_mask(16, 16, 8);
  CHECK(boundary_fscore(a, a) == 1.0);
  CHECK(boundary_fscore(half_mask(16, 16, 9), a) == 1.0);
  CHECK(boundary_fscore(half_mask(16, 16, 8 + 3 + 2), a) == 0.0);
  CHECK(boundary_fscore(half_mask(16, 16, 8 + 3), a) == 1.0);
  BinaryMask empty(16, 16, 0);
  CHECK(boundary_fscore(empty, empty) == 1.0);
  CHECK(boundary_fscore(empty, a) == 0.0);
  CHECK(boundary_fscore(a, empty) == 0.0);
  // mask boundary is the inner ring; the image edge does not count
  const BinaryMask b = mask_boundary(a);
  for (int y = 0; y < 16; ++y)
    for (int x = 0; x < 16; ++x) CHECK(b.at(y, x) == (x == 7));
  CHECK_THROWS_AS(boundary_fscore(a, a, BoundaryFScoreConfig{0}), std::invalid_argument);
}

TEST_CASE("boundary matching agrees with brute force and is symmetric") {
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 30; ++trial) {
    const BinaryMask p = mask_boundary(random_mask(rng, 14, 17)), g = mask_boundary(random_mask(rng, 14, 17));
    for (double w : {1.0, 2.0, 3.0, 5.0}) {
      const MatchCounts m = boundary_match_counts(p, g, w), o = brute_match(p, g, w);
      CHECK(m.pred_matched == o.pred_matched);
      CHECK(m.gt_matched == o.gt_matched);
      CHECK(m.pred_total == o.pred_total);
      CHECK(m.gt_total == o.gt_total);
      const MatchCounts s = boundary_match_counts(g, p, w);
      CHECK(s.precision() == m.recall());
      CHECK(s.fscore() == doctest::Approx(m.fscore()).epsilon(1e-12));
    }
  }
}

TEST_CASE("dataset boundary F-score") {
  std::mt19937_64 rng(6);
  std::vector<LabelMap> gts, preds;
  for (int i = 0; i < 8; ++i) {
    gts.push_back(sbcb_test::random_label_map(rng, 24, 24, 4, 0.0));
    LabelMap p = gts.back();
    // perturb a block so boundaries move
    for (int y = 3; y < 9; ++y)
      for (int x = 5; x < 15; ++x) p.at(y, x) = (p.at(y, x) + 1) % 4;
    preds.push_back(p);
  }
  BoundaryFScoreAccumulator self(4, {3, 5, 9, 12}), acc(4, {3, 5, 9, 12});
  for (std::size_t i = 0; i < gts.size(); ++i) {
    self.add(gts[i], gts[i]);
    acc.add(preds[i], gts[i]);
  }
  for (const auto& r : self.result()) CHECK(r.mean == 1.0);
  const auto res = acc.result();
  for (std::size_t k = 1; k < res.size(); ++k) CHECK(res[k].mean >= res[k - 1].mean);
  // merging split halves equals one pass
  BoundaryFScoreAccumulator a(4, {3}), b(4, {3}), all(4, {3});
  for (std::size_t i = 0; i < gts.size(); ++i) {
    (i % 2 ? a : b).add(preds[i], gts[i]);
    all.add(preds[i], gts[i]);
  }
  a.merge(b);
  CHECK(a.result()[0].mean == all.result()[0].mean);
  // pixels next to ignore do not count
  LabelMap g(8, 8, 0), p(8, 8, 0);
  for (int y = 0; y < 8; ++y) g.at(y, 4) = 255;
  for (int y = 0; y < 8; ++y)
    for (int x = 5; x < 8; ++x) g.at(y, x) = 1, p.at(y, x) = 0;
  BoundaryFScoreAccumulator ig(2, {1});
  ig.add(p, g);
  CHECK(std::isnan(ig.result()[0].per_category[0]));
}

TEST_CASE("thinning") {
  BinaryMask line(9, 9, 0);
  for (int x = 1; x < 8; ++x) line.at(4, x) = 1;
  CHECK(thin(line) == line);
  BinaryMask bar(9, 12, 0);
  for (int y = 3; y < 6; ++y)
    for (int x = 1; x < 11; ++x) bar.at(y, x) = 1;
  const BinaryMask t = thin(bar);
  std::size_t n = 0;
  for (int y = 0; y < 9; ++y)
    for (int x = 0; x < 12; ++x) {
      n += t.at(y, x);
      if (t.at(y, x)) CHECK(bar.at(y, x));
      if (y + 1 < 9 && x + 1 < 12) {
        const bool block = t.at(y, x) && t.at(y + 1, x) && t.at(y, x + 1) && t.at(y + 1, x + 1);
        CHECK_FALSE(block);
      }
    }
  CHECK(n > 0);
  CHECK(n < 14);
  CHECK(thin(t) == t);
}

namespace {

// textbook Zhang-Suen: every pixel examined in every sub-iteration
BinaryMask full_raster_thin(BinaryMask img) {
  const int h = img.height(), w = img.width();
  auto px = [&](int y, int x) -> int { return y >= 0 && y < h && x >= 0 && x < w ? img.at(y, x) != 0 : 0; };
  for (bool changed = true; changed;) {
    changed = false;
    for (int pass = 0; pass < 2; ++pass) {
      std::vector<std::pair<int, int>> del;
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
          if (!px(y, x)) continue;
          const int p2 = px(y - 1, x), p3 = px(y - 1, x + 1), p4 = px(y, x + 1), p5 = px(y + 1, x + 1);
          const int p6 = px(y + 1, x), p7 = px(y + 1, x - 1), p8 = px(y, x - 1), p9 = px(y - 1, x - 1);
          const int seq[9] = {p2, p3, p4, p5, p6, p7, p8, p9, p2};
          int a = 0;
          for (int i = 0; i < 8; ++i) a += seq[i] == 0 && seq[i + 1] == 1;
          const int b = p2 + p3 + p4 + p5 + p6 + p7 + p8 + p9;
          if (b < 2 || b > 6 || a != 1) continue;
          if (pass == 0 && (p2 * p4 * p6 != 0 || p4 * p6 * p8 != 0)) continue;
          if (pass == 1 && (p2 * p4 * p8 != 0 || p2 * p6 * p8 != 0)) continue;
          del.emplace_back(y, x);
        }
      for (auto [y, x] : del) img.at(y, x) = 0;
      changed = changed || !del.empty();
    }
  }
  for (auto& v : img.values()) v = v != 0;
  return img;
}

}  // namespace

TEST_CASE("thinning matches the full-raster formulation") {
  std::mt19937_64 rng(77);
  for (int trial = 0; trial < 60; ++trial) {
    const int h = 8 + static_cast<int>(rng() % 40), w = 8 + static_cast<int>(rng() % 40);
    const LabelMap l = sbcb_test::random_label_map(rng, h, w, 2, trial % 3 == 0 ? 0.1 : 0.0);
    BinaryMask m(h, w, 0);
    for (std::size_t i = 0; i < m.size(); ++i) m[i] = l[i] == 1;
    const bool same = thin(m) == full_raster_thin(m);
    CHECK(same);
  }
}

TEST_CASE("ODS hand case: one spurious pixel") {
  SemanticBoundaryTensor gt(1, 8, 8);
  for (int x = 1; x <= 6; ++x) gt.at(0, 3, x) = 1;
  Tensor probs(Shape{1, 1, 8, 8}, 0);
  for (int x = 1; x <= 6; ++x) probs.at(0, 0, 3, x) = 1;
  probs.at(0, 0, 6, 6) = 1;
  ODSConfig cfg;
  cfg.match_tolerance = 1;
  std::vector<Tensor> p{probs};
  std::vector<SemanticBoundaryTensor> g{gt};
  // P = 6/7, R = 1
  CHECK(sbd_max_fscore_ods(p, g, cfg).mf == doctest::Approx(12.0 / 13.0));
  const MatchCounts m = greedy_match(gt.channel_mask(0), gt.channel_mask(0), 0);
  CHECK(m.pred_matched == 6);
}

TEST_CASE("ODS perfect, empty and tolerance monotonicity") {
  std::mt19937_64 rng(8);
  std::vector<Tensor> perfect, zeros, noisy;
  std::vector<SemanticBoundaryTensor> gts;
  BoundaryGenConfig bg;
  bg.radius = 1;
  for (int i = 0; i < 6; ++i) {
    const LabelMap l = sbcb_test::random_label_map(rng, 32, 32, 4);
    gts.push_back(semantic_boundaries(l, 4, bg));
    Tensor p(Shape{1, 4, 32, 32}, 0), q(Shape{1, 4, 32, 32}, 0);
    std::uniform_real_distribution<double> u(0, 1);
    for (int c = 0; c < 4; ++c)
      for (int y = 0; y < 32; ++y)
        for (int x = 0; x < 32; ++x) {
          p.at(0, c, y, x) = gts.back().at(c, y, x);
          // blurred, shifted and noisy copy
          const int xs = std::min(31, x + 1);
          q.at(0, c, y, x) = static_cast<real>(0.6 * gts.back().at(c, y, xs) + 0.4 * u(rng));
        }
    perfect.push_back(p);
    zeros.push_back(Tensor(Shape{1, 4, 32, 32}, 0));
    noisy.push_back(q);
  }
  const ODSResult r = sbd_max_fscore_ods(perfect, gts);
  CHECK(r.mf == 1.0);
  CHECK(sbd_max_fscore_ods(zeros, gts).mf == 0.0);
  double prev = -1;
  for (double tol : {0.0, 1.0, 1.5, 2.0, 3.0, 5.0}) {
    ODSConfig cfg;
    cfg.match_tolerance = tol;
    const double mf = sbd_max_fscore_ods(noisy, gts, cfg).mf;
    CAPTURE(tol);
    CHECK(mf >= prev);
    prev = mf;
  }
  CHECK_THROWS_AS(sbd_max_fscore_ods({}, {}), std::invalid_argument);
  ODSConfig bad;
  bad.thresholds = {0.5, 0.4};
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad.thresholds = {0.0};
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
}

TEST_CASE("greedy matching count never drops as tolerance grows") {
  std::mt19937_64 rng(10);
  for (int trial = 0; trial < 200; ++trial) {
    BinaryMask p(12, 12, 0), g(12, 12, 0);
    std::bernoulli_distribution d(0.15);
    for (auto& v : p.values()) v = d(rng);
    for (auto& v : g.values()) v = d(rng);
    std::int64_t prev = -1;
    for (double tol : {0.0, 1.0, 1.5, 2.0, 2.5, 3.0, 4.0}) {
      const auto m = greedy_match(p, g, tol);
      CHECK(m.pred_matched >= prev);
      prev = m.pred_matched;
    }
  }
}
