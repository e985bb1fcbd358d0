#include "sbcb/model.hpp"

#include <map>
#include <stdexcept>

SBCB_NAMESPACE_BEGIN

void ModelConfig::validate() const {
  if (num_categories < 1) throw std::invalid_argument("model.num_categories must be >= 1");
  if (seg_head_channels < 1) throw std::invalid_argument("model.seg_head_channels must be >= 1");
  if (backbone != "toy" && backbone != "toy_multibranch") {
    throw std::invalid_argument("unknown backbone '" + backbone + "' (toy|toy_multibranch)");
  }
  fusion.validate();
  if (fusion.enabled() && !sbd_head) throw std::invalid_argument("fusion requires the SBD head");
  if (fusion.mode == FusionMode::kChannelMerge && head_variant == HeadVariant::kDDS) {
    // DDS side blocks sit before the projections the merge consumes; not wired
    throw std::invalid_argument("channel_merge fusion supports casenet, dff and bbcb heads");
  }
}

ModelConfig ModelConfig::baseline() const {
  ModelConfig b = *this;
  b.sbd_head = false;
  b.fcn_aux = false;
  b.fusion = MergeConfig{};
  return b;
}

std::shared_ptr<Backbone> make_backbone(const ModelConfig& cfg) {
  if (cfg.backbone == "toy_multibranch") {
    return std::make_shared<ToyMultiBranchBackbone>(
        ToyMultiBranchConfig{cfg.input_channels, cfg.stage_channels.at(0), cfg.branch_channels, cfg.seed});
  }
  BackboneTrickConfig trick = cfg.stage_channels.size() == 5 ? BackboneTrickConfig::named(cfg.trick)
                                                             : BackboneTrickConfig::original(
                                                                   static_cast<int>(cfg.stage_channels.size()) - 1);
  return toy_backbone(cfg.stage_channels, cfg.input_channels, cfg.seed, trick);
}

SegHead::SegHead(int in_channels, int mid_channels, int num_categories, Rng& rng) {
  context_ = register_module("context",
                             std::make_shared<ConvNormAct>(in_channels, mid_channels, 3, same_geometry(3), rng));
  cls_ = register_module("cls", std::make_shared<Conv2d>(mid_channels, num_categories, 1, ConvGeometry{}, true, rng));
}

SegModel::SegModel(ModelConfig cfg) : cfg_(std::move(cfg)) {
  cfg_.validate();
  backbone_ = register_module("backbone", make_backbone(cfg_));
  const auto specs = backbone_->stage_specs();
  const int n = cfg_.num_categories;

  int seg_in = backbone_->final_channels();
  int projection = 0;
  if (cfg_.fusion.mode == FusionMode::kTwoStream) {
    const int fuse_width = cfg_.head_variant == HeadVariant::kBBCB ? 1 : n;
    projection = cfg_.fusion.projection_channels > 0 ? cfg_.fusion.projection_channels : fuse_width;
    seg_in += projection;
  }
  {
    Rng rng = make_rng(cfg_.seed, "seg_head");
    seg_head_ = register_module("seg_head", std::make_shared<SegHead>(seg_in, cfg_.seg_head_channels, n, rng));
  }
  if (cfg_.sbd_head) {
    taps_ = SideTapSpec::from_sides(specs, cfg_.sides);
    Rng rng = make_rng(cfg_.seed, "sbd_head");
    HeadConfig hc{cfg_.head_variant, n, taps_.side_channels(specs)};
    head_ = register_module("sbd_head", std::make_shared<SbdHead>(hc, rng));
  }
  if (cfg_.fcn_aux) {
    for (std::size_t f = 0; f < specs.size(); ++f)
      if (specs[f].side == cfg_.aux_side) aux_tap_.features.push_back(static_cast<int>(f));
    if (aux_tap_.features.empty()) throw std::invalid_argument("aux_side " + std::to_string(cfg_.aux_side) + " not in backbone");
    int in = 0;
    for (int f : aux_tap_.features) in += specs[f].channels;
    Rng rng = make_rng(cfg_.seed, "aux_head");
    aux_ = register_module("aux_head", std::make_shared<FcnAuxHead>(in, cfg_.aux_channels, n, rng));
  }
  if (cfg_.fusion.mode == FusionMode::kChannelMerge) {
    Rng rng = make_rng(cfg_.seed, "fusion");
    std::vector<int> binary(taps_.binary_sides.size(), 1);
    merge_ = register_module("fusion", std::make_shared<ChannelMerge>(binary, cfg_.seg_head_channels, cfg_.fusion, rng));
  } else if (cfg_.fusion.mode == FusionMode::kTwoStream) {
    Rng rng = make_rng(cfg_.seed, "fusion");
    two_stream_ = register_module(
        "fusion", std::make_shared<TwoStreamMerge>(head_->config().output_channels(), projection, rng));
  }
}

ModelOutputs SegModel::run(const Var& images, bool with_head) const {
  const int H = images.shape().h, W = images.shape().w;
  if (images.shape().c != cfg_.input_channels) {
    throw std::invalid_argument("model expects " + std::to_string(cfg_.input_channels) + " input channels, got " +
                                images.shape().str());
  }
  BackboneOutput b = backbone_->forward(images);
  ModelOutputs out;
  const int fh = b.final.shape().h, fw = b.final.shape().w;

  std::optional<HeadProjection> proj;
  if (with_head && head_) {
    std::vector<Var> sides;
    for (const auto& g : taps_.all_sides()) sides.push_back(gather_group(b.features, g));
    proj = head_->project(sides);
  }

  Var seg_in = b.final;
  if (two_stream_) {
    // the shape stream needs the finished fuse output before the context module
    out.head = head_->finish(*proj, H, W);
    seg_in = concat_channels({b.final, two_stream_->forward(out.head->fuse_logits, fh, fw)});
  }
  Var h = seg_head_->context(seg_in);
  if (merge_) {
    auto merged = merge_->forward(proj->binary, h);
    proj->binary = std::move(merged.sides);
    h = merged.head;
  }
  out.seg_logits = resize_bilinear(seg_head_->classify(h), H, W);
  if (proj && !out.head) out.head = head_->finish(*proj, H, W);
  if (with_head && aux_) out.aux_logits = aux_->forward(gather_group(b.features, aux_tap_), H, W);
  return out;
}

ModelOutputs SegModel::forward(const Var& images) const { return run(images, true); }

Var SegModel::segment(const Var& images) const { return run(images, cfg_.fusion.enabled()).seg_logits; }

std::size_t SegModel::baseline_parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : named_parameters())
    if (p.name.rfind("backbone.", 0) == 0 || p.name.rfind("seg_head.", 0) == 0) n += p.var.value().numel();
  return n;
}

std::size_t copy_matching_state(const Module& src, Module& dst) {
  std::map<std::string, const Tensor*> from;
  for (const auto& p : src.named_parameters()) from[p.name] = &p.var.value();
  for (const auto& b : src.named_buffers()) from[b.name] = b.tensor.get();
  std::size_t copied = 0;
  auto copy = [&](const std::string& name, Tensor& t) {
    auto it = from.find(name);
    if (it == from.end()) return;
    if (it->second->shape() != t.shape()) {
      throw std::invalid_argument("state '" + name + "' has shape " + it->second->shape().str() + ", expected " +
                                  t.shape().str());
    }
    t = *it->second;
    ++copied;
  };
  for (auto& p : dst.named_parameters()) copy(p.name, p.var.mutable_value());
  for (auto& b : dst.named_buffers()) copy(b.name, *b.tensor);
  return copied;
}

SBCB_NAMESPACE_END
