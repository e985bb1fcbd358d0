#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "sbcb/kernels.hpp"
#include "sbcb/tensor.hpp"

SBCB_NAMESPACE_BEGIN

/// One value in the reverse-mode graph. Leaves (parameters, inputs) have no
/// backward function; interior nodes keep their inputs alive until the
/// output goes out of scope.
struct Node {
  Tensor value;
  Tensor grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backward_fn;

  /// Gradient buffer, zero-filled on first use.
  Tensor& grad_buffer();
};

class Var {
 public:
  Var() = default;
  explicit Var(Tensor value, bool requires_grad = false);
  explicit Var(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  bool defined() const { return static_cast<bool>(node_); }
  const Tensor& value() const { return node_->value; }
  Tensor& mutable_value() { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  bool requires_grad() const { return node_ && node_->requires_grad; }
  /// Gradient accumulated by `backward`; empty if none reached this node.
  const Tensor& grad() const { return node_->grad; }
  Tensor& grad() { return node_->grad; }
  void zero_grad();
  const std::shared_ptr<Node>& node() const { return node_; }

 private:
  std::shared_ptr<Node> node_;
};

/// Seeds d(root)/d(root) = 1 and propagates to every reachable node that
/// requires a gradient. The root must hold a single element.
void backward(const Var& root);

bool grad_enabled();

/// Disables graph recording for the enclosing scope (evaluation, export).
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

/// Builds an interior node. When no input requires a gradient (or recording
/// is disabled) the backward function and inputs are dropped.
Var make_result(Tensor value, std::vector<Var> inputs, std::function<void(Node&)> backward_fn);

// Differentiable operations --------------------------------------------------

Var conv2d(const Var& x, const Var& weight, const Var& bias, const ConvGeometry& g);
Var batch_norm(const Var& x, const Var& gamma, const Var& beta, Tensor& running_mean, Tensor& running_var,
               bool training, real momentum, real eps);
Var relu(const Var& x);
Var max_pool2d(const Var& x, int kernel);
Var resize_bilinear(const Var& x, int height, int width);
Var concat_channels(const std::vector<Var>& parts);
Var slice_channels(const Var& x, int begin, int count);
Var add(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& x, real s);
Var sigmoid(const Var& x);
/// (N, G*K, H, W) -> (N, G, H, W): sums each run of K consecutive channels.
Var group_sum(const Var& x, int groups);
/// Sum of single-element vars with fixed coefficients.
Var weighted_sum(const std::vector<Var>& scalars, const std::vector<real>& weights);

/// Mirror along the width axis (not differentiable; used by test-time augmentation).
Tensor flip_horizontal(const Tensor& t);

SBCB_NAMESPACE_END
