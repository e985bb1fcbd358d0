#include "sbcb/nn.hpp"

#include <cmath>

SBCB_NAMESPACE_BEGIN

void Module::train(bool on) {
  training_ = on;
  for (auto& [name, child] : children_) child->train(on);
}

std::vector<NamedParameter> Module::named_parameters(const std::string& prefix) const {
  std::vector<NamedParameter> out;
  for (const auto& [name, var] : params_) out.push_back({prefix + name, var});
  for (const auto& [name, child] : children_) {
    auto sub = child->named_parameters(prefix + name + ".");
    out.insert(out.end(), sub.begin(), sub.end());
  }
  return out;
}

std::vector<NamedBuffer> Module::named_buffers(const std::string& prefix) const {
  std::vector<NamedBuffer> out;
  for (const auto& [name, t] : buffers_) out.push_back({prefix + name, t});
  for (const auto& [name, child] : children_) {
    auto sub = child->named_buffers(prefix + name + ".");
    out.insert(out.end(), sub.begin(), sub.end());
  }
  return out;
}

std::vector<Var> Module::parameters() const {
  std::vector<Var> out;
  for (auto& p : named_parameters()) out.push_back(p.var);
  return out;
}

std::size_t Module::parameter_count() const {
  std::size_t total = 0;
  for (const auto& p : named_parameters()) total += p.var.value().numel();
  return total;
}

void Module::zero_grad() {
  for (auto& p : named_parameters()) p.var.zero_grad();
}

Var Module::register_parameter(std::string name, Tensor init) {
  Var v(std::move(init), true);
  params_.emplace_back(std::move(name), v);
  return v;
}

std::shared_ptr<Tensor> Module::register_buffer(std::string name, Tensor init) {
  auto t = std::make_shared<Tensor>(std::move(init));
  buffers_.emplace_back(std::move(name), t);
  return t;
}

Tensor kaiming_normal(Shape shape, int fan_in, Rng& rng) {
  std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / std::max(fan_in, 1)));
  Tensor t(shape);
  for (auto& v : t.values()) v = static_cast<real>(dist(rng));
  return t;
}

Conv2d::Conv2d(int in_channels, int out_channels, int kernel, ConvGeometry geometry, bool bias, Rng& rng)
    : in_(in_channels), out_(out_channels), kernel_(kernel), geometry_(geometry) {
  if (in_channels < 1 || out_channels < 1 || kernel < 1 || in_channels % geometry.groups != 0 ||
      out_channels % geometry.groups != 0) {
    throw std::invalid_argument("Conv2d: invalid channels/groups");
  }
  const int cin_g = in_channels / geometry.groups;
  weight_ = register_parameter("weight", kaiming_normal(Shape{out_channels, cin_g, kernel, kernel},
                                                        cin_g * kernel * kernel, rng));
  if (bias) bias_ = register_parameter("bias", Tensor(Shape{1, out_channels, 1, 1}));
}

Var Conv2d::forward(const Var& x) const {
  if (x.shape().c != in_) {
    throw std::invalid_argument("Conv2d: expected " + std::to_string(in_) + " input channels, got " +
                                std::to_string(x.shape().c));
  }
  return conv2d(x, weight_, bias_, geometry_);
}

BatchNorm2d::BatchNorm2d(int channels, real momentum, real eps) : momentum_(momentum), eps_(eps) {
  gamma_ = register_parameter("weight", Tensor(Shape{1, channels, 1, 1}, real(1)));
  beta_ = register_parameter("bias", Tensor(Shape{1, channels, 1, 1}));
  running_mean_ = register_buffer("running_mean", Tensor(Shape{1, channels, 1, 1}));
  running_var_ = register_buffer("running_var", Tensor(Shape{1, channels, 1, 1}, real(1)));
}

Var BatchNorm2d::forward(const Var& x) const {
  return batch_norm(x, gamma_, beta_, *running_mean_, *running_var_, is_training(), momentum_, eps_);
}

ConvNormAct::ConvNormAct(int in_channels, int out_channels, int kernel, ConvGeometry geometry, Rng& rng) {
  conv_ = register_module("conv", std::make_shared<Conv2d>(in_channels, out_channels, kernel, geometry, false, rng));
  norm_ = register_module("bn", std::make_shared<BatchNorm2d>(out_channels));
}

Var ConvNormAct::forward(const Var& x) const { return relu(forward_linear(x)); }

Var ConvNormAct::forward_linear(const Var& x) const { return norm_->forward(conv_->forward(x)); }

std::size_t ConvNormAct::count(int in_channels, int out_channels, int kernel, int groups) {
  return static_cast<std::size_t>(out_channels) * (in_channels / groups) * kernel * kernel + 2u * out_channels;
}

SBCB_NAMESPACE_END
