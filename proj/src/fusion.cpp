#include "sbcb/fusion.hpp"

#include <numeric>
#include <stdexcept>

SBCB_NAMESPACE_BEGIN

std::string to_string(FusionMode m) {
  switch (m) {
    case FusionMode::kNone: return "none";
    case FusionMode::kChannelMerge: return "channel_merge";
    case FusionMode::kTwoStream: return "two_stream";
  }
  return "?";
}

FusionMode fusion_mode_from_string(const std::string& s) {
  if (s == "none") return FusionMode::kNone;
  if (s == "channel_merge") return FusionMode::kChannelMerge;
  if (s == "two_stream") return FusionMode::kTwoStream;
  throw std::invalid_argument("unknown fusion mode '" + s + "' (none|channel_merge|two_stream)");
}

void MergeConfig::validate() const {
  if (mix_layers < 1) throw std::invalid_argument("fusion.mix_layers must be >= 1");
  if (mix_channels < 0 || projection_channels < 0) throw std::invalid_argument("fusion widths must be >= 0");
}

ChannelMerge::ChannelMerge(std::vector<int> side_channels, int head_channels, const MergeConfig& cfg, Rng& rng)
    : side_channels_(std::move(side_channels)), head_channels_(head_channels) {
  cfg.validate();
  total_ = std::accumulate(side_channels_.begin(), side_channels_.end(), head_channels_);
  const int hidden = cfg.mix_channels > 0 ? cfg.mix_channels : total_;
  int in = total_;
  for (int l = 0; l < cfg.mix_layers; ++l) {
    const bool last = l + 1 == cfg.mix_layers;
    const int out = last ? total_ : hidden;
    auto conv = register_module("mix" + std::to_string(l + 1),
                                std::make_shared<Conv2d>(in, out, 1, ConvGeometry{}, true, rng));
    if (last) {
      conv->weight().mutable_value().fill(0);
      conv->bias().mutable_value().fill(0);
    }
    mix_.push_back(conv);
    in = out;
  }
}

ChannelMerge::Result ChannelMerge::forward(const std::vector<Var>& sides, const Var& head) const {
  if (sides.size() != side_channels_.size()) {
    throw std::invalid_argument("channel merge expects " + std::to_string(side_channels_.size()) + " sides, got " +
                                std::to_string(sides.size()));
  }
  const Shape& hs = head.shape();
  if (hs.c != head_channels_) throw std::invalid_argument("channel merge: head feature has wrong channel count");
  std::vector<Var> parts;
  for (std::size_t i = 0; i < sides.size(); ++i) {
    const Shape& s = sides[i].shape();
    if (s.n != hs.n || s.c != side_channels_[i]) {
      throw std::invalid_argument("channel merge: side " + std::to_string(i + 1) + " is " + s.str() +
                                  ", incompatible with head feature " + hs.str());
    }
    parts.push_back(resize_bilinear(sides[i], hs.h, hs.w));
  }
  parts.push_back(head);
  Var h = concat_channels(parts);
  for (std::size_t l = 0; l < mix_.size(); ++l) {
    h = mix_[l]->forward(h);
    if (l + 1 < mix_.size()) h = relu(h);
  }
  Result r;
  int offset = 0;
  for (std::size_t i = 0; i < sides.size(); ++i) {
    const Shape& s = sides[i].shape();
    Var delta = resize_bilinear(slice_channels(h, offset, side_channels_[i]), s.h, s.w);
    r.sides.push_back(add(sides[i], delta));
    offset += side_channels_[i];
  }
  r.head = add(head, slice_channels(h, offset, head_channels_));
  return r;
}

TwoStreamMerge::TwoStreamMerge(int fuse_channels, int projection_channels, Rng& rng) {
  proj_ = register_module("proj", std::make_shared<Conv2d>(fuse_channels, projection_channels, 1, ConvGeometry{},
                                                            true, rng));
}

Var TwoStreamMerge::forward(const Var& fuse_logits, int height, int width) const {
  if (!fuse_logits.defined()) throw std::invalid_argument("two-stream merge needs the fuse output of the SBD head");
  // a 1x1 conv commutes with bilinear resizing, so project at the smaller size
  return proj_->forward(resize_bilinear(fuse_logits, height, width));
}

SBCB_NAMESPACE_END
