#include "sbcb/sbd_heads.hpp"

#include <stdexcept>

SBCB_NAMESPACE_BEGIN

std::string to_string(HeadVariant v) {
  switch (v) {
    case HeadVariant::kCASENet: return "casenet";
    case HeadVariant::kDFF: return "dff";
    case HeadVariant::kDDS: return "dds";
    case HeadVariant::kBBCB: return "bbcb";
  }
  return "?";
}

HeadVariant head_variant_from_string(const std::string& s) {
  if (s == "casenet") return HeadVariant::kCASENet;
  if (s == "dff") return HeadVariant::kDFF;
  if (s == "dds") return HeadVariant::kDDS;
  if (s == "bbcb") return HeadVariant::kBBCB;
  throw std::invalid_argument("unknown head variant '" + s + "' (casenet|dff|dds|bbcb)");
}

void HeadConfig::validate() const {
  if (num_sides() < 2) throw std::invalid_argument("SBD head needs at least two sides");
  if (num_categories < 1) throw std::invalid_argument("SBD head needs num_categories >= 1");
  for (int c : side_channels)
    if (c < 1) throw std::invalid_argument("side channel counts must be positive");
}

SideLayer::SideLayer(int in_channels, int out_channels, Rng& rng) {
  proj_ = register_module("proj", std::make_shared<Conv2d>(in_channels, out_channels, 1, ConvGeometry{}, true, rng));
  smooth_ = register_module("smooth", std::make_shared<Conv2d>(out_channels, out_channels, 3,
                                                                same_geometry(3, 1, 1, out_channels), true, rng));
}

Var SideLayer::project(const Var& feature) const { return proj_->forward(feature); }

Var SideLayer::finish(const Var& projected, int height, int width) const {
  const Shape& s = projected.shape();
  if (height < s.h || width < s.w) {
    throw std::invalid_argument("side layer target " + std::to_string(height) + "x" + std::to_string(width) +
                                " is smaller than its input " + std::to_string(s.h) + "x" + std::to_string(s.w));
  }
  return smooth_->forward(resize_bilinear(projected, height, width));
}

std::size_t SideLayer::count(int in_channels, int out_channels) {
  return std::size_t(out_channels) * (in_channels + 1) + std::size_t(out_channels) * 10;
}

BasicResBlock::BasicResBlock(int channels, Rng& rng) {
  a_ = register_module("conv1", std::make_shared<ConvNormAct>(channels, channels, 3, same_geometry(3), rng));
  b_ = register_module("conv2", std::make_shared<ConvNormAct>(channels, channels, 3, same_geometry(3), rng));
}

Var BasicResBlock::forward(const Var& x) const {
  // second block is conv-bn only; the activation follows the skip
  Var h = a_->forward(x);
  h = b_->forward_linear(h);
  return relu(add(h, x));
}

std::size_t BasicResBlock::count(int channels) { return 2 * ConvNormAct::count(channels, channels, 3); }

Var sliced_concat(const std::vector<Var>& binary, const Var& semantic) {
  const Shape& s = semantic.shape();
  for (const auto& b : binary) {
    const Shape& bs = b.shape();
    if (bs.n != s.n || bs.c != 1 || bs.h != s.h || bs.w != s.w) {
      throw std::invalid_argument("sliced_concat: binary side " + bs.str() + " does not match semantic side " +
                                  s.str());
    }
  }
  std::vector<Var> parts;
  parts.reserve((binary.size() + 1) * s.c);
  for (int c = 0; c < s.c; ++c) {
    for (const auto& b : binary) parts.push_back(b);
    parts.push_back(s.c == 1 ? semantic : slice_channels(semantic, c, 1));
  }
  return concat_channels(parts);
}

FuseLayer::FuseLayer(int num_categories, int slices_per_category) : n_(num_categories), k_(slices_per_category) {
  Rng unused(0);
  conv_ = register_module("conv", std::make_shared<Conv2d>(n_ * k_, n_, 1, ConvGeometry{1, 0, 1, n_}, true, unused));
  // start as the plain average of the K slices
  conv_->weight().mutable_value().fill(real(1) / k_);
  conv_->bias().mutable_value().fill(0);
}

Var FuseLayer::forward(const Var& sliced) const {
  if (sliced.shape().c != n_ * k_) {
    throw std::invalid_argument("fuse layer expects " + std::to_string(n_ * k_) + " channels, got " +
                                std::to_string(sliced.shape().c));
  }
  return conv_->forward(sliced);
}

std::size_t FuseLayer::count(int num_categories, int slices_per_category) {
  return std::size_t(num_categories) * (slices_per_category + 1);
}

AdaptiveWeightLearner::AdaptiveWeightLearner(int channels, Rng& rng) {
  a_ = register_module("conv1", std::make_shared<ConvNormAct>(channels, channels, 3, same_geometry(3), rng));
  b_ = register_module("conv2", std::make_shared<ConvNormAct>(channels, channels, 3, same_geometry(3), rng));
  out_ = register_module("out", std::make_shared<Conv2d>(channels, channels, 1, ConvGeometry{}, true, rng));
}

Var AdaptiveWeightLearner::forward(const Var& sliced) const {
  return out_->forward(b_->forward(a_->forward(sliced)));
}

std::size_t AdaptiveWeightLearner::count(int channels) {
  return 2 * ConvNormAct::count(channels, channels, 3) + std::size_t(channels) * (channels + 1);
}

Var dff_fuse(const Var& sliced, const Var& weights, int num_categories) {
  if (sliced.shape() != weights.shape()) {
    throw std::invalid_argument("dff_fuse: weights " + weights.shape().str() + " vs sliced " + sliced.shape().str());
  }
  if (sliced.shape().c % num_categories != 0) throw std::invalid_argument("dff_fuse: channels not divisible by N_cat");
  return group_sum(mul(sliced, weights), num_categories);
}

SbdHead::SbdHead(HeadConfig cfg, Rng& rng) : cfg_(std::move(cfg)) {
  cfg_.validate();
  const int n = cfg_.num_sides();
  const int out = cfg_.output_channels();
  for (int i = 0; i < n; ++i) {
    const std::string name = "side" + std::to_string(i + 1);
    if (cfg_.variant == HeadVariant::kDDS) {
      std::vector<std::shared_ptr<BasicResBlock>> blocks;
      for (int b = 0; b < 2; ++b)
        blocks.push_back(register_module(name + ".block" + std::to_string(b + 1),
                                         std::make_shared<BasicResBlock>(cfg_.side_channels[i], rng)));
      blocks_.push_back(std::move(blocks));
    }
    sides_.push_back(
        register_module(name, std::make_shared<SideLayer>(cfg_.side_channels[i], i + 1 == n ? out : 1, rng)));
  }
  fuse_ = register_module("fuse", std::make_shared<FuseLayer>(out, n));
  if (cfg_.variant == HeadVariant::kDFF)
    learner_ = register_module("weight_learner", std::make_shared<AdaptiveWeightLearner>(out * n, rng));
}

HeadProjection SbdHead::project(const std::vector<Var>& sides) const {
  if (static_cast<int>(sides.size()) != cfg_.num_sides()) {
    throw std::invalid_argument("SBD head configured for " + std::to_string(cfg_.num_sides()) + " sides, got " +
                                std::to_string(sides.size()));
  }
  HeadProjection p;
  for (int i = 0; i < cfg_.num_sides(); ++i) {
    if (sides[i].shape().c != cfg_.side_channels[i]) {
      throw std::invalid_argument("side " + std::to_string(i + 1) + " has " + std::to_string(sides[i].shape().c) +
                                  " channels, head expects " + std::to_string(cfg_.side_channels[i]));
    }
    Var f = sides[i];
    if (!blocks_.empty())
      for (const auto& b : blocks_[i]) f = b->forward(f);
    Var pr = sides_[i]->project(f);
    if (i + 1 == cfg_.num_sides()) {
      p.semantic = pr;
    } else {
      p.binary.push_back(pr);
    }
  }
  return p;
}

HeadOutputs SbdHead::finish(const HeadProjection& p, int height, int width) const {
  HeadOutputs out;
  std::vector<Var> binary;
  for (std::size_t i = 0; i < p.binary.size(); ++i) binary.push_back(sides_[i]->finish(p.binary[i], height, width));
  out.semantic_side_logits = sides_.back()->finish(p.semantic, height, width);
  const Var sliced = sliced_concat(binary, out.semantic_side_logits);
  if (cfg_.variant == HeadVariant::kDFF) {
    out.fuse_logits = dff_fuse(sliced, learner_->forward(sliced), cfg_.output_channels());
  } else {
    out.fuse_logits = fuse_->forward(sliced);
  }
  if (cfg_.variant == HeadVariant::kDDS) out.binary_side_logits = std::move(binary);
  return out;
}

std::size_t SbdHead::count(const HeadConfig& cfg) {
  cfg.validate();
  const int n = cfg.num_sides();
  const int out = cfg.output_channels();
  std::size_t total = 0;
  for (int i = 0; i < n; ++i) {
    total += SideLayer::count(cfg.side_channels[i], i + 1 == n ? out : 1);
    if (cfg.variant == HeadVariant::kDDS) total += 2 * BasicResBlock::count(cfg.side_channels[i]);
  }
  total += FuseLayer::count(out, n);
  if (cfg.variant == HeadVariant::kDFF) total += AdaptiveWeightLearner::count(out * n);
  return total;
}

FcnAuxHead::FcnAuxHead(int in_channels, int mid_channels, int num_categories, Rng& rng) {
  body_ = register_module("conv", std::make_shared<ConvNormAct>(in_channels, mid_channels, 3, same_geometry(3), rng));
  cls_ = register_module("cls", std::make_shared<Conv2d>(mid_channels, num_categories, 1, ConvGeometry{}, true, rng));
}

Var FcnAuxHead::forward(const Var& feature, int height, int width) const {
  return resize_bilinear(cls_->forward(body_->forward(feature)), height, width);
}

std::size_t FcnAuxHead::count(int in_channels, int mid_channels, int num_categories) {
  return ConvNormAct::count(in_channels, mid_channels, 3) + std::size_t(num_categories) * (mid_channels + 1);
}

SBCB_NAMESPACE_END
