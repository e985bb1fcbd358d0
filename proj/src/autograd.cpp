#include "sbcb/autograd.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <unordered_set>

SBCB_NAMESPACE_BEGIN

namespace {
thread_local bool g_grad_enabled = true;
}

Tensor& Node::grad_buffer() {
  if (grad.empty() && value.numel() > 0) grad = Tensor(value.shape());
  return grad;
}

Var::Var(Tensor value, bool requires_grad) : node_(std::make_shared<Node>()) {
  node_->value = std::move(value);
  node_->requires_grad = requires_grad;
}

void Var::zero_grad() {
  if (node_ && !node_->grad.empty()) node_->grad.fill(0);
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

Var make_result(Tensor value, std::vector<Var> inputs, std::function<void(Node&)> backward_fn) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  bool needs = false;
  if (g_grad_enabled) {
    for (const auto& in : inputs) needs = needs || in.requires_grad();
  }
  if (needs) {
    node->requires_grad = true;
    node->inputs.reserve(inputs.size());
    for (auto& in : inputs) node->inputs.push_back(in.node());
    node->backward_fn = std::move(backward_fn);
  }
  return Var(std::move(node));
}

void backward(const Var& root) {
  if (!root.defined() || root.value().numel() != 1) {
    throw std::invalid_argument("backward: root must be a single-element tensor");
  }
  if (!root.requires_grad()) return;
  // Iterative post-order DFS; inputs are visited in declaration order so the
  // accumulation order is fixed.
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, std::size_t>> stack;
  stack.emplace_back(root.node().get(), 0);
  visited.insert(root.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      Node* child = node->inputs[next++].get();
      if (child && child->requires_grad && visited.insert(child).second) stack.emplace_back(child, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  root.node()->grad_buffer().fill(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* node = *it;
    if (node->backward_fn && !node->grad.empty()) node->backward_fn(*node);
  }
}

namespace {

bool wants(const Node& self, std::size_t i) {
  return i < self.inputs.size() && self.inputs[i] && self.inputs[i]->requires_grad;
}

}  // namespace

Var conv2d(const Var& x, const Var& weight, const Var& bias, const ConvGeometry& g) {
  Tensor out;
  kernels::conv2d_forward(x.value(), weight.value(), bias.defined() ? &bias.value() : nullptr, g, out);
  std::vector<Var> inputs{x, weight};
  if (bias.defined()) inputs.push_back(bias);
  return make_result(std::move(out), std::move(inputs), [g](Node& self) {
    const Node& in = *self.inputs[0];
    const Node& wt = *self.inputs[1];
    if (wants(self, 0)) {
      Tensor gi(in.value.shape());
      kernels::conv2d_backward_input(self.grad, wt.value, g, gi);
      self.inputs[0]->grad_buffer().add_(gi);
    }
    const bool need_w = wants(self, 1);
    const bool need_b = wants(self, 2);
    if (need_w || need_b) {
      Tensor scratch_w;
      Tensor* gw = need_w ? &self.inputs[1]->grad_buffer() : &(scratch_w = Tensor(wt.value.shape()));
      kernels::conv2d_backward_params(in.value, self.grad, g, *gw, need_b ? &self.inputs[2]->grad_buffer() : nullptr);
    }
  });
}

Var batch_norm(const Var& x, const Var& gamma, const Var& beta, Tensor& running_mean, Tensor& running_var,
               bool training, real momentum, real eps) {
  const Tensor& xv = x.value();
  const int N = xv.n(), C = xv.c();
  const std::size_t HW = xv.shape().plane();
  const double M = static_cast<double>(N) * HW;
  Tensor out(xv.shape());
  Tensor mean(Shape{1, C, 1, 1}), invstd(Shape{1, C, 1, 1});
  Tensor xhat(training ? xv.shape() : Shape{0, 0, 0, 0});
#pragma omp parallel for schedule(static)
  for (int c = 0; c < C; ++c) {
    double mu, var;
    if (training) {
      double s = 0;
      for (int n = 0; n < N; ++n) {
        const real* p = xv.plane(n, c);
        for (std::size_t i = 0; i < HW; ++i) s += p[i];
      }
      mu = s / M;
      double ss = 0;
      for (int n = 0; n < N; ++n) {
        const real* p = xv.plane(n, c);
        for (std::size_t i = 0; i < HW; ++i) ss += (p[i] - mu) * (p[i] - mu);
      }
      var = ss / M;
      const double unbiased = M > 1 ? ss / (M - 1) : var;
      running_mean[c] = static_cast<real>((1 - momentum) * running_mean[c] + momentum * mu);
      running_var[c] = static_cast<real>((1 - momentum) * running_var[c] + momentum * unbiased);
    } else {
      mu = running_mean[c];
      var = running_var[c];
    }
    const double is = 1.0 / std::sqrt(var + eps);
    mean[c] = static_cast<real>(mu);
    invstd[c] = static_cast<real>(is);
    const real gm = gamma.value()[c], bt = beta.value()[c];
    for (int n = 0; n < N; ++n) {
      const real* p = xv.plane(n, c);
      real* o = out.plane(n, c);
      real* xh = training ? xhat.plane(n, c) : nullptr;
      for (std::size_t i = 0; i < HW; ++i) {
        const real h = static_cast<real>((p[i] - mu) * is);
        if (xh) xh[i] = h;
        o[i] = gm * h + bt;
      }
    }
  }
  return make_result(std::move(out), {x, gamma, beta},
                     [training, mean, invstd, xhat = std::move(xhat), N, C, HW, M](Node& self) {
    const Tensor& gy = self.grad;
    const Node& in = *self.inputs[0];
    const Tensor& gm = self.inputs[1]->value;
    Tensor* gx = wants(self, 0) ? &self.inputs[0]->grad_buffer() : nullptr;
    Tensor* gg = wants(self, 1) ? &self.inputs[1]->grad_buffer() : nullptr;
    Tensor* gb = wants(self, 2) ? &self.inputs[2]->grad_buffer() : nullptr;
#pragma omp parallel for schedule(static)
    for (int c = 0; c < C; ++c) {
      double sum_dy = 0, sum_dy_xhat = 0;
      for (int n = 0; n < N; ++n) {
        const real* dy = gy.plane(n, c);
        const real* xv = in.value.plane(n, c);
        for (std::size_t i = 0; i < HW; ++i) {
          const double h = training ? xhat.plane(n, c)[i] : (xv[i] - mean[c]) * invstd[c];
          sum_dy += dy[i];
          sum_dy_xhat += dy[i] * h;
        }
      }
      if (gg) (*gg)[c] += static_cast<real>(sum_dy_xhat);
      if (gb) (*gb)[c] += static_cast<real>(sum_dy);
      if (!gx) continue;
      const double g = gm[c], is = invstd[c];
      for (int n = 0; n < N; ++n) {
        const real* dy = gy.plane(n, c);
        real* dx = gx->plane(n, c);
        if (training) {
          const real* xh = xhat.plane(n, c);
          for (std::size_t i = 0; i < HW; ++i) {
            dx[i] += static_cast<real>(g * is / M * (M * dy[i] - sum_dy - xh[i] * sum_dy_xhat));
          }
        } else {
          for (std::size_t i = 0; i < HW; ++i) dx[i] += static_cast<real>(g * is * dy[i]);
        }
      }
    }
  });
}

Var relu(const Var& x) {
  Tensor out(x.shape());
  const real* src = x.value().data();
  real* dst = out.data();
  const std::size_t count = out.numel();
  // written so NaN passes through, like torch.relu
  for (std::size_t i = 0; i < count; ++i) dst[i] = src[i] <= 0 ? real(0) : src[i];
  return make_result(std::move(out), {x}, [](Node& self) {
    const real* v = self.value.data();
    const real* g = self.grad.data();
    real* gi = self.inputs[0]->grad_buffer().data();
    const std::size_t count = self.value.numel();
    for (std::size_t i = 0; i < count; ++i)
      if (v[i] > 0) gi[i] += g[i];
  });
}

Var max_pool2d(const Var& x, int kernel) {
  const Shape s = x.shape();
  const int oh = s.h / kernel, ow = s.w / kernel;
  if (oh < 1 || ow < 1) throw std::invalid_argument("max_pool2d: input " + s.str() + " too small");
  Tensor out(Shape{s.n, s.c, oh, ow});
  std::vector<std::uint32_t> argmax(out.numel());
  const int planes = s.n * s.c;
  for (int pl = 0; pl < planes; ++pl) {
    const real* src = x.value().data() + static_cast<std::size_t>(pl) * s.h * s.w;
    for (int y = 0; y < oh; ++y)
      for (int xx = 0; xx < ow; ++xx) {
        std::uint32_t best = static_cast<std::uint32_t>(y * kernel * s.w + xx * kernel);
        for (int ky = 0; ky < kernel; ++ky)
          for (int kx = 0; kx < kernel; ++kx) {
            const std::uint32_t idx = static_cast<std::uint32_t>((y * kernel + ky) * s.w + xx * kernel + kx);
            if (src[idx] > src[best]) best = idx;
          }
        const std::size_t o = (static_cast<std::size_t>(pl) * oh + y) * ow + xx;
        out[o] = src[best];
        argmax[o] = best;
      }
  }
  return make_result(std::move(out), {x}, [argmax = std::move(argmax), s, oh, ow](Node& self) {
    Tensor& gi = self.inputs[0]->grad_buffer();
    const int planes = s.n * s.c;
    for (int pl = 0; pl < planes; ++pl) {
      real* dst = gi.data() + static_cast<std::size_t>(pl) * s.h * s.w;
      for (int i = 0; i < oh * ow; ++i) {
        const std::size_t o = static_cast<std::size_t>(pl) * oh * ow + i;
        dst[argmax[o]] += self.grad[o];
      }
    }
  });
}

Var resize_bilinear(const Var& x, int height, int width) {
  if (x.shape().h == height && x.shape().w == width) return x;
  Tensor out(Shape{x.shape().n, x.shape().c, height, width});
  kernels::resize_bilinear_forward(x.value(), out);
  return make_result(std::move(out), {x}, [](Node& self) {
    Tensor gi(self.inputs[0]->value.shape());
    kernels::resize_bilinear_backward(self.grad, gi);
    self.inputs[0]->grad_buffer().add_(gi);
  });
}

Var concat_channels(const std::vector<Var>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_channels: no inputs");
  if (parts.size() == 1) return parts.front();
  Shape s = parts.front().shape();
  int total = 0;
  for (const auto& p : parts) {
    const Shape& ps = p.shape();
    if (ps.n != s.n || ps.h != s.h || ps.w != s.w) {
      throw std::invalid_argument("concat_channels: extent mismatch " + ps.str() + " vs " + s.str());
    }
    total += ps.c;
  }
  s.c = total;
  Tensor out(s);
  std::vector<int> offsets;
  int off = 0;
  for (const auto& p : parts) {
    offsets.push_back(off);
    for (int n = 0; n < s.n; ++n)
      std::copy(p.value().plane(n, 0), p.value().plane(n, 0) + p.shape().c * s.plane(), out.plane(n, off));
    off += p.shape().c;
  }
  return make_result(std::move(out), parts, [offsets](Node& self) {
    const Shape s = self.value.shape();
    for (std::size_t i = 0; i < self.inputs.size(); ++i) {
      if (!wants(self, i)) continue;
      Tensor& gi = self.inputs[i]->grad_buffer();
      const int ci = gi.c();
      for (int n = 0; n < s.n; ++n) {
        const real* src = self.grad.plane(n, offsets[i]);
        real* dst = gi.plane(n, 0);
        const std::size_t count = static_cast<std::size_t>(ci) * s.plane();
        for (std::size_t k = 0; k < count; ++k) dst[k] += src[k];
      }
    }
  });
}

Var slice_channels(const Var& x, int begin, int count) {
  const Shape s = x.shape();
  if (begin < 0 || count < 1 || begin + count > s.c) {
    throw std::invalid_argument("slice_channels: range out of bounds for " + s.str());
  }
  if (begin == 0 && count == s.c) return x;
  Tensor out(Shape{s.n, count, s.h, s.w});
  for (int n = 0; n < s.n; ++n)
    std::copy(x.value().plane(n, begin), x.value().plane(n, begin) + count * s.plane(), out.plane(n, 0));
  return make_result(std::move(out), {x}, [begin, count](Node& self) {
    Tensor& gi = self.inputs[0]->grad_buffer();
    const std::size_t len = static_cast<std::size_t>(count) * gi.shape().plane();
    for (int n = 0; n < gi.n(); ++n) {
      const real* src = self.grad.plane(n, 0);
      real* dst = gi.plane(n, begin);
      for (std::size_t k = 0; k < len; ++k) dst[k] += src[k];
    }
  });
}

Var add(const Var& a, const Var& b) {
  check_same_shape(a.value(), b.value(), "add");
  Tensor out = a.value();
  out.add_(b.value());
  return make_result(std::move(out), {a, b}, [](Node& self) {
    for (std::size_t i = 0; i < 2; ++i)
      if (wants(self, i)) self.inputs[i]->grad_buffer().add_(self.grad);
  });
}

Var mul(const Var& a, const Var& b) {
  check_same_shape(a.value(), b.value(), "mul");
  Tensor out(a.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = a.value()[i] * b.value()[i];
  return make_result(std::move(out), {a, b}, [](Node& self) {
    const Tensor& av = self.inputs[0]->value;
    const Tensor& bv = self.inputs[1]->value;
    if (wants(self, 0)) {
      Tensor& g = self.inputs[0]->grad_buffer();
      for (std::size_t i = 0; i < g.numel(); ++i) g[i] += self.grad[i] * bv[i];
    }
    if (wants(self, 1)) {
      Tensor& g = self.inputs[1]->grad_buffer();
      for (std::size_t i = 0; i < g.numel(); ++i) g[i] += self.grad[i] * av[i];
    }
  });
}

Var scale(const Var& x, real s) {
  Tensor out = x.value();
  out.scale_(s);
  return make_result(std::move(out), {x}, [s](Node& self) {
    Tensor& g = self.inputs[0]->grad_buffer();
    for (std::size_t i = 0; i < g.numel(); ++i) g[i] += s * self.grad[i];
  });
}

Var sigmoid(const Var& x) {
  Tensor out(x.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) {
    const real v = x.value()[i];
    out[i] = v >= 0 ? real(1) / (real(1) + std::exp(-v)) : std::exp(v) / (real(1) + std::exp(v));
  }
  return make_result(std::move(out), {x}, [](Node& self) {
    Tensor& g = self.inputs[0]->grad_buffer();
    for (std::size_t i = 0; i < g.numel(); ++i) {
      const real y = self.value[i];
      g[i] += self.grad[i] * y * (real(1) - y);
    }
  });
}

Var group_sum(const Var& x, int groups) {
  const Shape s = x.shape();
  if (groups < 1 || s.c % groups != 0) {
    throw std::invalid_argument("group_sum: " + std::to_string(s.c) + " channels not divisible by " +
                                std::to_string(groups));
  }
  const int k = s.c / groups;
  Tensor out(Shape{s.n, groups, s.h, s.w});
  for (int n = 0; n < s.n; ++n)
    for (int gi = 0; gi < groups; ++gi) {
      real* dst = out.plane(n, gi);
      for (int j = 0; j < k; ++j) {
        const real* src = x.value().plane(n, gi * k + j);
        for (std::size_t p = 0; p < s.plane(); ++p) dst[p] += src[p];
      }
    }
  return make_result(std::move(out), {x}, [groups, k](Node& self) {
    Tensor& g = self.inputs[0]->grad_buffer();
    const std::size_t plane = g.shape().plane();
    for (int n = 0; n < g.n(); ++n)
      for (int gi = 0; gi < groups; ++gi) {
        const real* src = self.grad.plane(n, gi);
        for (int j = 0; j < k; ++j) {
          real* dst = g.plane(n, gi * k + j);
          for (std::size_t p = 0; p < plane; ++p) dst[p] += src[p];
        }
      }
  });
}

Var weighted_sum(const std::vector<Var>& scalars, const std::vector<real>& weights) {
  if (scalars.size() != weights.size()) throw std::invalid_argument("weighted_sum: size mismatch");
  real total = 0;
  for (std::size_t i = 0; i < scalars.size(); ++i) {
    if (scalars[i].value().numel() != 1) throw std::invalid_argument("weighted_sum: non-scalar term");
    total += weights[i] * scalars[i].value()[0];
  }
  return make_result(Tensor::scalar(total), scalars, [weights](Node& self) {
    for (std::size_t i = 0; i < self.inputs.size(); ++i)
      if (wants(self, i)) self.inputs[i]->grad_buffer()[0] += weights[i] * self.grad[0];
  });
}

Tensor flip_horizontal(const Tensor& t) {
  Tensor out(t.shape());
  for (int n = 0; n < t.n(); ++n)
    for (int c = 0; c < t.c(); ++c)
      for (int y = 0; y < t.h(); ++y)
        for (int x = 0; x < t.w(); ++x) out.at(n, c, y, x) = t.at(n, c, y, t.w() - 1 - x);
  return out;
}

SBCB_NAMESPACE_END
