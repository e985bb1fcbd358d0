#include "sbcb/backbone.hpp"

#include <algorithm>
#include <map>
#include <set>
#include <stdexcept>

SBCB_NAMESPACE_BEGIN

namespace {

int min_downsample(const std::vector<StageSpec>& stages, const TapGroup& g) {
  int best = 1 << 30;
  for (int f : g.features) best = std::min(best, stages[f].downsample);
  return best;
}

int max_side(const std::vector<StageSpec>& stages, const TapGroup& g) {
  int best = 0;
  for (int f : g.features) best = std::max(best, stages[f].side);
  return best;
}

void check_group(const std::vector<StageSpec>& stages, const TapGroup& g, const char* what) {
  if (g.features.empty()) throw std::invalid_argument(std::string("empty tap selection for ") + what);
  for (int f : g.features) {
    if (f < 0 || f >= static_cast<int>(stages.size())) {
      throw std::invalid_argument(std::string("tap references unknown stage ") + std::to_string(f) + " (" + what +
                                  ")");
    }
  }
}

}  // namespace

SideTapSpec SideTapSpec::from_sides(const std::vector<StageSpec>& stages, const std::vector<int>& sides) {
  if (sides.size() < 2) throw std::invalid_argument("at least two sides are required (binary + semantic)");
  SideTapSpec spec;
  for (std::size_t i = 0; i < sides.size(); ++i) {
    TapGroup g;
    for (std::size_t f = 0; f < stages.size(); ++f)
      if (stages[f].side == sides[i]) g.features.push_back(static_cast<int>(f));
    if (g.features.empty()) throw std::invalid_argument("backbone has no side " + std::to_string(sides[i]));
    if (i + 1 == sides.size()) {
      spec.semantic_side = g;
    } else {
      spec.binary_sides.push_back(g);
    }
  }
  spec.validate(stages);
  return spec;
}

void SideTapSpec::validate(const std::vector<StageSpec>& stages) const {
  if (binary_sides.empty()) throw std::invalid_argument("SideTapSpec needs at least one binary side");
  for (const auto& g : binary_sides) check_group(stages, g, "binary side");
  check_group(stages, semantic_side, "semantic side");
  const int semantic_depth = max_side(stages, semantic_side);
  const int first_res = min_downsample(stages, binary_sides.front());
  for (const auto& g : all_sides()) {
    if (max_side(stages, g) > semantic_depth) {
      throw std::invalid_argument("semantic side must be the deepest selected stage");
    }
    if (min_downsample(stages, g) < first_res) {
      throw std::invalid_argument("first binary side must have the largest resolution among selections");
    }
  }
}

std::vector<TapGroup> SideTapSpec::all_sides() const {
  std::vector<TapGroup> out = binary_sides;
  out.push_back(semantic_side);
  return out;
}

std::vector<int> SideTapSpec::side_channels(const std::vector<StageSpec>& stages) const {
  std::vector<int> out;
  for (const auto& g : all_sides()) {
    int c = 0;
    for (int f : g.features) c += stages.at(f).channels;
    out.push_back(c);
  }
  return out;
}

SideTapSpec two_path_taps(const std::vector<StageSpec>& stages, const std::vector<std::string>& detail_stages,
                          const std::string& semantic_output) {
  auto find = [&](const std::string& name) {
    for (std::size_t i = 0; i < stages.size(); ++i)
      if (stages[i].name == name) return static_cast<int>(i);
    throw std::invalid_argument("backbone has no stage named '" + name + "'");
  };
  if (detail_stages.empty()) throw std::invalid_argument("two_path_taps needs at least one detail stage");
  SideTapSpec spec;
  for (const auto& name : detail_stages) spec.binary_sides.push_back(TapGroup{{find(name)}});
  spec.semantic_side = TapGroup{{find(semantic_output)}};
  spec.validate(stages);
  return spec;
}

BackboneTrickConfig BackboneTrickConfig::named(const std::string& row) {
  if (row == "original") return BackboneTrickConfig{2, {1, 2, 2, 2}, {1, 1, 1, 1}};
  if (row == "segmentation") return BackboneTrickConfig{2, {1, 2, 1, 1}, {1, 1, 2, 4}};
  if (row == "edge") return BackboneTrickConfig{1, {1, 2, 2, 1}, {2, 2, 2, 4}};
  throw std::invalid_argument("unknown backbone trick row '" + row + "' (original|segmentation|edge)");
}

BackboneTrickConfig BackboneTrickConfig::original(int stages) {
  BackboneTrickConfig t;
  t.strides.assign(stages, 2);
  if (stages > 0) t.strides[0] = 1;
  t.dilations.assign(stages, 1);
  return t;
}

ToyBackbone::ToyBackbone(ToyBackboneConfig cfg) : cfg_(std::move(cfg)) {
  const auto& ch = cfg_.stage_channels;
  if (ch.size() < 2) throw std::invalid_argument("toy backbone needs a stem and at least one stage");
  const std::size_t stages = ch.size() - 1;
  if (cfg_.trick.strides.size() != stages || cfg_.trick.dilations.size() != stages) {
    if (cfg_.trick == BackboneTrickConfig{} && stages != 4) {
      cfg_.trick = BackboneTrickConfig::original(static_cast<int>(stages));
    } else {
      throw std::invalid_argument("backbone trick config has " + std::to_string(cfg_.trick.strides.size()) +
                                  " strides / " + std::to_string(cfg_.trick.dilations.size()) +
                                  " dilations for " + std::to_string(stages) + " stages");
    }
  }
  Rng rng = make_rng(cfg_.seed, "backbone");
  stem_ = register_module("stem", std::make_shared<ConvNormAct>(cfg_.input_channels, ch[0], 3,
                                                                 same_geometry(3, cfg_.trick.stem_stride), rng));
  for (std::size_t i = 0; i < stages; ++i) {
    const ConvGeometry g = same_geometry(3, cfg_.trick.strides[i], cfg_.trick.dilations[i]);
    stages_.push_back(register_module("stage" + std::to_string(i + 1),
                                      std::make_shared<ConvNormAct>(ch[i], ch[i + 1], 3, g, rng)));
  }
}

std::vector<StageSpec> ToyBackbone::stage_specs() const {
  std::vector<StageSpec> out;
  int ds = cfg_.trick.stem_stride;
  out.push_back(StageSpec{1, "stem", cfg_.stage_channels[0], ds});
  for (std::size_t i = 0; i < stages_.size(); ++i) {
    ds *= cfg_.trick.strides[i] * (i == 0 ? 2 : 1);
    out.push_back(StageSpec{static_cast<int>(i) + 2, "stage" + std::to_string(i + 1), cfg_.stage_channels[i + 1], ds});
  }
  return out;
}

int ToyBackbone::final_downsample() const { return stage_specs().back().downsample; }

BackboneOutput ToyBackbone::forward(const Var& x) {
  BackboneOutput out;
  Var h = stem_->forward(x);
  out.features.push_back(h);
  for (std::size_t i = 0; i < stages_.size(); ++i) {
    if (i == 0) h = max_pool2d(h, 2);
    h = stages_[i]->forward(h);
    out.features.push_back(h);
  }
  out.final = h;
  return out;
}

std::size_t ToyBackbone::analytic_parameter_count(const std::vector<int>& ch, int input_channels) {
  std::size_t total = 9u * input_channels * ch[0] + 2u * ch[0];
  for (std::size_t i = 0; i + 1 < ch.size(); ++i) total += 9u * ch[i] * ch[i + 1] + 2u * ch[i + 1];
  return total;
}

std::shared_ptr<ToyBackbone> toy_backbone(const std::vector<int>& stage_channels, int input_channels,
                                          std::uint64_t seed, const BackboneTrickConfig& trick) {
  return std::make_shared<ToyBackbone>(ToyBackboneConfig{input_channels, stage_channels, trick, seed});
}

std::shared_ptr<ToyBackbone> apply_backbone_trick(const ToyBackbone& backbone, const BackboneTrickConfig& trick) {
  ToyBackboneConfig cfg = backbone.config();
  if (trick.strides.size() != cfg.stage_channels.size() - 1 || trick.dilations.size() != trick.strides.size()) {
    throw std::invalid_argument("backbone trick config length does not match the stage count");
  }
  cfg.trick = trick;
  auto out = std::make_shared<ToyBackbone>(cfg);
  const auto src_params = backbone.named_parameters();
  const auto dst_params = out->named_parameters();
  for (std::size_t i = 0; i < src_params.size(); ++i) {
    Var dst = dst_params[i].var;
    dst.mutable_value() = src_params[i].var.value();
  }
  const auto src_buf = backbone.named_buffers();
  const auto dst_buf = out->named_buffers();
  for (std::size_t i = 0; i < src_buf.size(); ++i) *dst_buf[i].tensor = *src_buf[i].tensor;
  out->train(backbone.is_training());
  return out;
}

ToyMultiBranchBackbone::ToyMultiBranchBackbone(ToyMultiBranchConfig cfg) : cfg_(cfg) {
  Rng rng = make_rng(cfg_.seed, "backbone");
  stem_ = register_module("stem", std::make_shared<ConvNormAct>(cfg_.input_channels, cfg_.stem_channels, 3,
                                                                 same_geometry(3, 2), rng));
  stem2_ = register_module("stem2", std::make_shared<ConvNormAct>(cfg_.stem_channels, cfg_.base_channels, 3,
                                                                   same_geometry(3, 2), rng));
  for (int stage = 0; stage < 4; ++stage) {
    std::vector<std::shared_ptr<ConvNormAct>> blocks;
    if (stage > 0) {
      const int prev = cfg_.base_channels << (stage - 1);
      transitions_.push_back(register_module(
          "transition" + std::to_string(stage + 1),
          std::make_shared<ConvNormAct>(prev, cfg_.base_channels << stage, 3, same_geometry(3, 2), rng)));
    }
    for (int b = 0; b <= stage; ++b) {
      const int c = cfg_.base_channels << b;
      blocks.push_back(register_module("stage" + std::to_string(stage + 1) + ".branch" + std::to_string(b),
                                       std::make_shared<ConvNormAct>(c, c, 3, same_geometry(3), rng)));
    }
    branches_.push_back(std::move(blocks));
  }
}

std::vector<StageSpec> ToyMultiBranchBackbone::stage_specs() const {
  std::vector<StageSpec> out{StageSpec{1, "stem", cfg_.stem_channels, 2}};
  for (int stage = 0; stage < 4; ++stage)
    for (int b = 0; b <= stage; ++b)
      out.push_back(StageSpec{stage + 2, "stage" + std::to_string(stage + 1) + ".branch" + std::to_string(b),
                              cfg_.base_channels << b, 4 << b});
  return out;
}

int ToyMultiBranchBackbone::final_channels() const {
  int c = 0;
  for (int b = 0; b < 4; ++b) c += cfg_.base_channels << b;
  return c;
}

BackboneOutput ToyMultiBranchBackbone::forward(const Var& x) {
  BackboneOutput out;
  Var s = stem_->forward(x);
  out.features.push_back(s);
  std::vector<Var> current{stem2_->forward(s)};
  for (int stage = 0; stage < 4; ++stage) {
    if (stage > 0) current.push_back(transitions_[stage - 1]->forward(current.back()));
    std::vector<Var> next;
    for (int b = 0; b <= stage; ++b) next.push_back(branches_[stage][b]->forward(current[b]));
    current = std::move(next);
    for (const auto& f : current) out.features.push_back(f);
  }
  std::vector<Var> resized;
  for (const auto& f : current) resized.push_back(resize_bilinear(f, current[0].shape().h, current[0].shape().w));
  out.final = concat_channels(resized);
  return out;
}

Var gather_group(const std::vector<Var>& features, const TapGroup& group) {
  int h = 0, w = 0;
  for (int f : group.features) {
    const Shape& s = features.at(f).shape();
    if (static_cast<long long>(s.h) * s.w > static_cast<long long>(h) * w) {
      h = s.h;
      w = s.w;
    }
  }
  std::vector<Var> parts;
  for (int f : group.features) parts.push_back(resize_bilinear(features[f], h, w));
  return concat_channels(parts);
}

TappedBackbone::TappedBackbone(std::shared_ptr<Backbone> backbone, SideTapSpec taps)
    : backbone_(std::move(backbone)), taps_(std::move(taps)) {
  if (!backbone_) throw std::invalid_argument("register_taps: null backbone");
  taps_.validate(backbone_->stage_specs());
}

TapOutput TappedBackbone::forward(const Var& x) const {
  BackboneOutput b = backbone_->forward(x);
  TapOutput out;
  for (const auto& g : taps_.all_sides()) out.sides.push_back(gather_group(b.features, g));
  out.final = b.final;
  out.features = std::move(b.features);
  return out;
}

std::vector<int> TappedBackbone::side_channels() const { return taps_.side_channels(backbone_->stage_specs()); }

TappedBackbone register_taps(std::shared_ptr<Backbone> backbone, const SideTapSpec& taps) {
  return TappedBackbone(std::move(backbone), taps);
}

SBCB_NAMESPACE_END
