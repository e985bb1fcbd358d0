#pragma once

#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "sbcb/autograd.hpp"
#include "sbcb/random.hpp"

SBCB_NAMESPACE_BEGIN

struct NamedParameter {
  std::string name;
  Var var;
};

struct NamedBuffer {
  std::string name;
  std::shared_ptr<Tensor> tensor;
};

/// Owner of parameters, buffers and child modules, addressed by dotted names
/// ("backbone.stage2.conv.weight"). Registration order fixes iteration
/// order, which keeps optimiser updates and checkpoints deterministic.
class Module {
 public:
  virtual ~Module() = default;
  Module() = default;
  Module(const Module&) = delete;
  Module& operator=(const Module&) = delete;

  void train(bool on = true);
  void eval() { train(false); }
  bool is_training() const { return training_; }

  std::vector<NamedParameter> named_parameters(const std::string& prefix = "") const;
  std::vector<NamedBuffer> named_buffers(const std::string& prefix = "") const;
  std::vector<Var> parameters() const;
  std::size_t parameter_count() const;
  void zero_grad();

 protected:
  Var register_parameter(std::string name, Tensor init);
  std::shared_ptr<Tensor> register_buffer(std::string name, Tensor init);
  template <typename M>
  std::shared_ptr<M> register_module(std::string name, std::shared_ptr<M> module) {
    children_.emplace_back(std::move(name), module);
    return module;
  }

 private:
  bool training_ = true;
  std::vector<std::pair<std::string, Var>> params_;
  std::vector<std::pair<std::string, std::shared_ptr<Tensor>>> buffers_;
  std::vector<std::pair<std::string, std::shared_ptr<Module>>> children_;
};

/// He-normal initialisation over the fan-in.
Tensor kaiming_normal(Shape shape, int fan_in, Rng& rng);

class Conv2d : public Module {
 public:
  Conv2d(int in_channels, int out_channels, int kernel, ConvGeometry geometry, bool bias, Rng& rng);
  Var forward(const Var& x) const;

  int in_channels() const { return in_; }
  int out_channels() const { return out_; }
  int kernel() const { return kernel_; }
  const ConvGeometry& geometry() const { return geometry_; }
  void set_geometry(const ConvGeometry& g) { geometry_ = g; }
  Var& weight() { return weight_; }
  Var& bias() { return bias_; }

 private:
  int in_, out_, kernel_;
  ConvGeometry geometry_;
  Var weight_;
  Var bias_;
};

class BatchNorm2d : public Module {
 public:
  explicit BatchNorm2d(int channels, real momentum = real(0.1), real eps = real(1e-5));
  Var forward(const Var& x) const;
  Var& gamma() { return gamma_; }
  Var& beta() { return beta_; }

 private:
  real momentum_, eps_;
  Var gamma_, beta_;
  std::shared_ptr<Tensor> running_mean_, running_var_;
};

/// conv (no bias) -> batch norm -> ReLU.
class ConvNormAct : public Module {
 public:
  ConvNormAct(int in_channels, int out_channels, int kernel, ConvGeometry geometry, Rng& rng);
  Var forward(const Var& x) const;
  /// conv -> norm without the activation.
  Var forward_linear(const Var& x) const;
  Conv2d& conv() { return *conv_; }
  const Conv2d& conv() const { return *conv_; }
  BatchNorm2d& norm() { return *norm_; }

  /// Closed-form parameter count: conv weights + BN affine.
  static std::size_t count(int in_channels, int out_channels, int kernel, int groups = 1);

 private:
  std::shared_ptr<Conv2d> conv_;
  std::shared_ptr<BatchNorm2d> norm_;
};

/// `same` padding for odd kernels under dilation.
inline ConvGeometry same_geometry(int kernel, int stride = 1, int dilation = 1, int groups = 1) {
  return ConvGeometry{stride, dilation * (kernel - 1) / 2, dilation, groups};
}

SBCB_NAMESPACE_END
