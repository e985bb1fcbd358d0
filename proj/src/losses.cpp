#include "sbcb/losses.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

SBCB_NAMESPACE_BEGIN

namespace {

void check_batch(const Shape& s, std::size_t count, int h, int w, const char* what, std::size_t i) {
  if (count != static_cast<std::size_t>(s.n)) {
    throw std::invalid_argument(std::string(what) + ": " + std::to_string(count) + " targets for batch " +
                                std::to_string(s.n));
  }
  if (h != s.h || w != s.w) {
    throw std::invalid_argument(std::string(what) + ": target " + std::to_string(i) + " is " + std::to_string(h) +
                                "x" + std::to_string(w) + ", logits are " + s.str());
  }
}

}  // namespace

Var seg_cross_entropy(const Var& logits, std::span<const LabelMap> labels, int ignore_index, bool* all_ignored) {
  const Shape s = logits.shape();
  if (labels.size() != static_cast<std::size_t>(s.n)) check_batch(s, labels.size(), s.h, s.w, "seg_cross_entropy", 0);
  for (std::size_t i = 0; i < labels.size(); ++i)
    check_batch(s, labels.size(), labels[i].height(), labels[i].width(), "seg_cross_entropy", i);
  const std::size_t hw = static_cast<std::size_t>(s.h) * s.w;
  const Tensor& x = logits.value();
  // softmax probabilities kept for the backward pass
  auto probs = std::make_shared<Tensor>(s);
  double total = 0;
  std::size_t valid = 0;
  for (int n = 0; n < s.n; ++n) {
    const auto lab = labels[n].values();
    for (std::size_t p = 0; p < hw; ++p) {
      const int t = lab[p];
      if (t == ignore_index) continue;
      if (t < 0 || t >= s.c) {
        throw std::invalid_argument("seg_cross_entropy: label " + std::to_string(t) + " outside [0, " +
                                    std::to_string(s.c) + ") and not the ignore index");
      }
      double m = -INFINITY;
      for (int c = 0; c < s.c; ++c) m = std::max(m, double(x.plane(n, c)[p]));
      double z = 0;
      for (int c = 0; c < s.c; ++c) z += std::exp(double(x.plane(n, c)[p]) - m);
      for (int c = 0; c < s.c; ++c) probs->plane(n, c)[p] = static_cast<real>(std::exp(double(x.plane(n, c)[p]) - m) / z);
      total += std::log(z) + m - double(x.plane(n, t)[p]);
      ++valid;
    }
  }
  if (all_ignored) *all_ignored = valid == 0;
  if (valid == 0) return make_result(Tensor::scalar(0), {logits}, [](Node&) {});
  const real inv = real(1.0 / valid);
  std::vector<LabelMap> kept(labels.begin(), labels.end());
  return make_result(Tensor::scalar(static_cast<real>(total / valid)), {logits},
                     [probs, kept = std::move(kept), ignore_index, inv, s, hw](Node& self) {
                       Tensor& g = self.inputs[0]->grad_buffer();
                       const real up = self.grad[0] * inv;
                       for (int n = 0; n < s.n; ++n) {
                         const auto lab = kept[n].values();
                         for (std::size_t p = 0; p < hw; ++p) {
                           const int t = lab[p];
                           if (t == ignore_index) continue;
                           for (int c = 0; c < s.c; ++c) {
                             const real d = probs->plane(n, c)[p] - (c == t ? real(1) : real(0));
                             g.plane(n, c)[p] += up * d;
                           }
                         }
                       }
                     });
}

std::string to_string(BalanceMode m) {
  switch (m) {
    case BalanceMode::kPerImage: return "per_image";
    case BalanceMode::kPerCategory: return "per_category";
    case BalanceMode::kNone: return "none";
  }
  return "?";
}

BalanceMode balance_mode_from_string(const std::string& s) {
  if (s == "per_image") return BalanceMode::kPerImage;
  if (s == "per_category") return BalanceMode::kPerCategory;
  if (s == "none") return BalanceMode::kNone;
  throw std::invalid_argument("unknown balance mode '" + s + "' (per_image|per_category|none)");
}

Var balanced_multilabel_bce(const Var& logits, std::span<const SemanticBoundaryTensor> targets, const BceOptions& opt,
                            std::span<const LabelMap> labels, bool* fallback) {
  const Shape s = logits.shape();
  if (targets.size() != static_cast<std::size_t>(s.n)) {
    throw std::invalid_argument("balanced_multilabel_bce: " + std::to_string(targets.size()) +
                                " targets for batch " + std::to_string(s.n));
  }
  const bool masked = opt.mask_ignore && !labels.empty();
  for (int n = 0; n < s.n; ++n) {
    const auto& t = targets[n];
    if (t.num_categories() != s.c || t.height() != s.h || t.width() != s.w) {
      throw std::invalid_argument("balanced_multilabel_bce: target " + std::to_string(n) + " is " +
                                  std::to_string(t.num_categories()) + "x" + std::to_string(t.height()) + "x" +
                                  std::to_string(t.width()) + ", logits are " + s.str());
    }
    if (masked) check_batch(s, labels.size(), labels[n].height(), labels[n].width(), "balanced_multilabel_bce", n);
  }
  const std::size_t hw = static_cast<std::size_t>(s.h) * s.w;
  auto counted = [&](int n, std::size_t p) { return !masked || labels[n].values()[p] != opt.ignore_index; };

  // per (image, channel) weights for positives / negatives
  std::vector<real> wpos(static_cast<std::size_t>(s.n) * s.c, 1), wneg(wpos.size(), 1);
  bool fell_back = false;
  std::size_t entries = 0;
  for (int n = 0; n < s.n; ++n) {
    std::vector<std::size_t> pos(s.c, 0), tot(s.c, 0);
    for (int c = 0; c < s.c; ++c) {
      const auto ch = targets[n].channel(c);
      for (std::size_t p = 0; p < hw; ++p) {
        if (!counted(n, p)) continue;
        ++tot[c];
        pos[c] += ch[p] != 0;
      }
      entries += tot[c];
    }
    if (opt.balance == BalanceMode::kNone) continue;
    auto assign = [&](int c0, int c1, std::size_t p, std::size_t t) {
      if (t == 0) return;
      if (p == 0 || p == t) {
        fell_back = true;
        return;
      }
      const real rho = static_cast<real>(double(p) / double(t));
      for (int c = c0; c < c1; ++c) {
        wpos[n * s.c + c] = real(1) - rho;
        wneg[n * s.c + c] = rho;
      }
    };
    if (opt.balance == BalanceMode::kPerImage) {
      std::size_t p = 0, t = 0;
      for (int c = 0; c < s.c; ++c) {
        p += pos[c];
        t += tot[c];
      }
      assign(0, s.c, p, t);
    } else {
      for (int c = 0; c < s.c; ++c) assign(c, c + 1, pos[c], tot[c]);
    }
  }
  if (fallback) *fallback = fell_back;
  if (entries == 0) return make_result(Tensor::scalar(0), {logits}, [](Node&) {});

  const Tensor& x = logits.value();
  double total = 0;
  for (int n = 0; n < s.n; ++n)
    for (int c = 0; c < s.c; ++c) {
      const real* xp = x.plane(n, c);
      const auto ch = targets[n].channel(c);
      const double wp = wpos[n * s.c + c], wn = wneg[n * s.c + c];
      for (std::size_t p = 0; p < hw; ++p) {
        if (!counted(n, p)) continue;
        const double v = xp[p];
        // log(1 + exp(-|v|)) + max(v, 0) - v * t
        const double sp = std::log1p(std::exp(-std::abs(v))) + std::max(v, 0.0);
        total += ch[p] ? wp * (sp - v) : wn * sp;
      }
    }
  const real inv = real(1.0 / entries);
  std::vector<SemanticBoundaryTensor> tgt(targets.begin(), targets.end());
  std::vector<LabelMap> lab;
  if (masked) lab.assign(labels.begin(), labels.end());
  const int ignore = opt.ignore_index;
  return make_result(
      Tensor::scalar(static_cast<real>(total / entries)), {logits},
      [tgt = std::move(tgt), lab = std::move(lab), wpos = std::move(wpos), wneg = std::move(wneg), inv, s, hw,
       ignore](Node& self) {
        Tensor& g = self.inputs[0]->grad_buffer();
        const Tensor& x = self.inputs[0]->value;
        const real up = self.grad[0] * inv;
        for (int n = 0; n < s.n; ++n)
          for (int c = 0; c < s.c; ++c) {
            const real* xp = x.plane(n, c);
            real* gp = g.plane(n, c);
            const auto ch = tgt[n].channel(c);
            const real wp = wpos[n * s.c + c], wn = wneg[n * s.c + c];
            for (std::size_t p = 0; p < hw; ++p) {
              if (!lab.empty() && lab[n].values()[p] == ignore) continue;
              const real v = xp[p];
              const real sg = v >= 0 ? real(1) / (real(1) + std::exp(-v)) : std::exp(v) / (real(1) + std::exp(v));
              gp[p] += up * (ch[p] ? wp * (sg - real(1)) : wn * sg);
            }
          }
      });
}

void LossWeights::validate() const {
  if (!(alpha >= 0) || !(beta >= 0) || !(aux >= 0)) throw std::invalid_argument("loss weights must be >= 0");
}

double LossReport::recompose(const LossWeights& w) const {
  double t = seg_ce;
  if (aux_ce) t += w.aux * *aux_ce;
  for (double v : sbd_bce) t += w.alpha * v;
  for (double v : bdry_bce) t += w.beta * v;
  return t;
}

LossResult total_loss(const Var& seg_logits, const HeadOutputs* head, HeadVariant variant, const Var& aux_logits,
                      const LossTargets& targets, const LossWeights& weights, const BceOptions& bce) {
  weights.validate();
  LossResult r;
  std::vector<Var> terms;
  std::vector<real> coeffs;
  terms.push_back(seg_cross_entropy(seg_logits, targets.labels, bce.ignore_index, &r.report.seg_all_ignored));
  coeffs.push_back(1);
  r.report.seg_ce = terms.back().value()[0];
  if (aux_logits.defined()) {
    terms.push_back(seg_cross_entropy(aux_logits, targets.labels, bce.ignore_index));
    coeffs.push_back(static_cast<real>(weights.aux));
    r.report.aux_ce = terms.back().value()[0];
  }
  if (head) {
    if (!head->fuse_logits.defined() || !head->semantic_side_logits.defined()) {
      throw std::invalid_argument("total_loss: head outputs lack the fuse or semantic side logits");
    }
    const bool binary_sbd = variant == HeadVariant::kBBCB;
    const auto sbd_targets = binary_sbd ? targets.binary : targets.semantic;
    if (sbd_targets.empty()) {
      throw std::invalid_argument(std::string("total_loss: missing ") + (binary_sbd ? "binary" : "semantic") +
                                  " boundary targets");
    }
    for (const Var& v : head->sbd_set()) {
      bool fb = false;
      terms.push_back(balanced_multilabel_bce(v, sbd_targets, bce, targets.labels, &fb));
      coeffs.push_back(static_cast<real>(weights.alpha));
      r.report.sbd_bce.push_back(terms.back().value()[0]);
      r.report.bce_fallback |= fb;
    }
    if (variant == HeadVariant::kDDS) {
      if (head->binary_side_logits.empty()) throw std::invalid_argument("total_loss: DDS head without binary sides");
      if (targets.binary.empty()) throw std::invalid_argument("total_loss: DDS needs binary boundary targets");
      for (const Var& v : head->binary_side_logits) {
        bool fb = false;
        terms.push_back(balanced_multilabel_bce(v, targets.binary, bce, targets.labels, &fb));
        coeffs.push_back(static_cast<real>(weights.beta));
        r.report.bdry_bce.push_back(terms.back().value()[0]);
        r.report.bce_fallback |= fb;
      }
    }
  }
  r.total = weighted_sum(terms, coeffs);
  r.report.total = r.total.value()[0];
  return r;
}

SBCB_NAMESPACE_END
