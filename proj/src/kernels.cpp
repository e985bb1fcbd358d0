#include "sbcb/kernels.hpp"

#include <algorithm>
#include <vector>

SBCB_NAMESPACE_BEGIN

int conv_output_size(int input, int kernel, const ConvGeometry& g) {
  const int span = g.dilation * (kernel - 1) + 1;
  return (input + 2 * g.padding - span) / g.stride + 1;
}

namespace {

struct ConvDims {
  int n, cin, h, w;
  int cout, kh, kw;
  int ho, wo;
  int cin_g, cout_g;
  int k;      // rows of the im2col matrix per group
  int p;      // output pixels
  bool direct;  // 1x1, stride 1, no padding: the input plane block is already the column matrix
};

ConvDims conv_dims(const Shape& in, const Shape& wt, const ConvGeometry& g) {
  ConvDims d{};
  d.n = in.n;
  d.cin = in.c;
  d.h = in.h;
  d.w = in.w;
  d.cout = wt.n;
  d.kh = wt.h;
  d.kw = wt.w;
  if (g.groups < 1 || in.c % g.groups != 0 || wt.n % g.groups != 0 || wt.c * g.groups != in.c) {
    throw std::invalid_argument("conv2d: channel/group mismatch, input " + in.str() + " weight " + wt.str());
  }
  d.ho = conv_output_size(in.h, wt.h, g);
  d.wo = conv_output_size(in.w, wt.w, g);
  if (d.ho < 1 || d.wo < 1) throw std::invalid_argument("conv2d: empty output for input " + in.str());
  d.cin_g = in.c / g.groups;
  d.cout_g = wt.n / g.groups;
  d.k = d.cin_g * d.kh * d.kw;
  d.p = d.ho * d.wo;
  d.direct = d.kh == 1 && d.kw == 1 && g.stride == 1 && g.padding == 0;
  return d;
}

void im2col(const real* in, const ConvDims& d, const ConvGeometry& g, real* col) {
  for (int ci = 0; ci < d.cin_g; ++ci) {
    const real* plane = in + static_cast<std::size_t>(ci) * d.h * d.w;
    for (int ky = 0; ky < d.kh; ++ky) {
      for (int kx = 0; kx < d.kw; ++kx) {
        real* row = col + (static_cast<std::size_t>(ci * d.kh + ky) * d.kw + kx) * d.p;
        for (int oy = 0; oy < d.ho; ++oy) {
          const int iy = oy * g.stride - g.padding + ky * g.dilation;
          real* dst = row + static_cast<std::size_t>(oy) * d.wo;
          if (iy < 0 || iy >= d.h) {
            std::fill(dst, dst + d.wo, real(0));
            continue;
          }
          const real* src = plane + static_cast<std::size_t>(iy) * d.w;
          for (int ox = 0; ox < d.wo; ++ox) {
            const int ix = ox * g.stride - g.padding + kx * g.dilation;
            dst[ox] = (ix >= 0 && ix < d.w) ? src[ix] : real(0);
          }
        }
      }
    }
  }
}

void col2im_add(const real* col, const ConvDims& d, const ConvGeometry& g, real* in) {
  for (int ci = 0; ci < d.cin_g; ++ci) {
    real* plane = in + static_cast<std::size_t>(ci) * d.h * d.w;
    for (int ky = 0; ky < d.kh; ++ky) {
      for (int kx = 0; kx < d.kw; ++kx) {
        const real* row = col + (static_cast<std::size_t>(ci * d.kh + ky) * d.kw + kx) * d.p;
        for (int oy = 0; oy < d.ho; ++oy) {
          const int iy = oy * g.stride - g.padding + ky * g.dilation;
          if (iy < 0 || iy >= d.h) continue;
          const real* src = row + static_cast<std::size_t>(oy) * d.wo;
          real* dst = plane + static_cast<std::size_t>(iy) * d.w;
          for (int ox = 0; ox < d.wo; ++ox) {
            const int ix = ox * g.stride - g.padding + kx * g.dilation;
            if (ix >= 0 && ix < d.w) dst[ix] += src[ox];
          }
        }
      }
    }
  }
}

struct AxisTable {
  std::vector<int> i0, i1;
  std::vector<real> l0, l1;
};

AxisTable bilinear_axis(int in, int out) {
  AxisTable t;
  t.i0.resize(out);
  t.i1.resize(out);
  t.l0.resize(out);
  t.l1.resize(out);
  const double scale = static_cast<double>(in) / out;
  for (int o = 0; o < out; ++o) {
    double src = scale * (o + 0.5) - 0.5;
    if (src < 0) src = 0;
    int i0 = static_cast<int>(src);
    if (i0 > in - 1) i0 = in - 1;
    const int i1 = i0 < in - 1 ? i0 + 1 : i0;
    const real l1 = static_cast<real>(src - i0);
    t.i0[o] = i0;
    t.i1[o] = i1;
    t.l1[o] = l1;
    t.l0[o] = real(1) - l1;
  }
  return t;
}

void check_resize(const Tensor& a, const Tensor& b) {
  if (a.n() != b.n() || a.c() != b.c()) {
    throw std::invalid_argument("resize_bilinear: batch/channel mismatch " + a.shape().str() + " vs " +
                                b.shape().str());
  }
}

}  // namespace

namespace kernels {

void conv2d_forward(const Tensor& input, const Tensor& weight, const Tensor* bias, const ConvGeometry& g,
                    Tensor& out) {
  const ConvDims d = conv_dims(input.shape(), weight.shape(), g);
  out = Tensor(Shape{d.n, d.cout, d.ho, d.wo});
  const int items = d.n * g.groups;
#pragma omp parallel
  {
    std::vector<real> col(d.direct ? 0 : static_cast<std::size_t>(d.k) * d.p);
#pragma omp for schedule(static)
    for (int item = 0; item < items; ++item) {
      const int n = item / g.groups;
      const int grp = item % g.groups;
      const real* in = input.plane(n, grp * d.cin_g);
      const real* cm = in;
      if (!d.direct) {
        im2col(in, d, g, col.data());
        cm = col.data();
      }
      for (int co = 0; co < d.cout_g; ++co) {
        const int oc = grp * d.cout_g + co;
        real* orow = out.plane(n, oc);
        const real b = bias ? (*bias)[oc] : real(0);
        std::fill(orow, orow + d.p, b);
        const real* wrow = weight.data() + static_cast<std::size_t>(oc) * d.k;
        for (int k = 0; k < d.k; ++k) {
          const real wv = wrow[k];
          const real* crow = cm + static_cast<std::size_t>(k) * d.p;
#pragma omp simd
          for (int p = 0; p < d.p; ++p) orow[p] += wv * crow[p];
        }
      }
    }
  }
}

void conv2d_backward_input(const Tensor& grad_out, const Tensor& weight, const ConvGeometry& g,
                           Tensor& grad_input) {
  const ConvDims d = conv_dims(grad_input.shape(), weight.shape(), g);
  if (grad_out.n() != d.n || grad_out.c() != d.cout || grad_out.h() != d.ho || grad_out.w() != d.wo) {
    throw std::invalid_argument("conv2d_backward_input: grad shape " + grad_out.shape().str());
  }
  grad_input.fill(0);
  const int items = d.n * g.groups;
#pragma omp parallel
  {
    std::vector<real> gcol(static_cast<std::size_t>(d.k) * d.p);
#pragma omp for schedule(static)
    for (int item = 0; item < items; ++item) {
      const int n = item / g.groups;
      const int grp = item % g.groups;
      real* gc = d.direct ? grad_input.plane(n, grp * d.cin_g) : gcol.data();
      std::fill(gc, gc + static_cast<std::size_t>(d.k) * d.p, real(0));
      for (int co = 0; co < d.cout_g; ++co) {
        const int oc = grp * d.cout_g + co;
        const real* grow = grad_out.plane(n, oc);
        const real* wrow = weight.data() + static_cast<std::size_t>(oc) * d.k;
        for (int k = 0; k < d.k; ++k) {
          const real wv = wrow[k];
          real* crow = gc + static_cast<std::size_t>(k) * d.p;
#pragma omp simd
          for (int p = 0; p < d.p; ++p) crow[p] += wv * grow[p];
        }
      }
      if (!d.direct) col2im_add(gc, d, g, grad_input.plane(n, grp * d.cin_g));
    }
  }
}

void conv2d_backward_params(const Tensor& input, const Tensor& grad_out, const ConvGeometry& g,
                            Tensor& grad_weight, Tensor* grad_bias) {
  const ConvDims d = conv_dims(input.shape(), grad_weight.shape(), g);
  std::vector<real> col(d.direct ? 0 : static_cast<std::size_t>(d.k) * d.p);
  for (int n = 0; n < d.n; ++n) {
    for (int grp = 0; grp < g.groups; ++grp) {
      const real* in = input.plane(n, grp * d.cin_g);
      const real* cm = in;
      if (!d.direct) {
        im2col(in, d, g, col.data());
        cm = col.data();
      }
      // Rows of grad_weight are disjoint across iterations, so the result
      // is identical for any thread count.
#pragma omp parallel for schedule(static)
      for (int co = 0; co < d.cout_g; ++co) {
        const int oc = grp * d.cout_g + co;
        const real* grow = grad_out.plane(n, oc);
        real* gw = grad_weight.data() + static_cast<std::size_t>(oc) * d.k;
        for (int k = 0; k < d.k; ++k) {
          const real* crow = cm + static_cast<std::size_t>(k) * d.p;
          real acc = 0;
#pragma omp simd reduction(+ : acc)
          for (int p = 0; p < d.p; ++p) acc += grow[p] * crow[p];
          gw[k] += acc;
        }
        if (grad_bias) {
          real acc = 0;
#pragma omp simd reduction(+ : acc)
          for (int p = 0; p < d.p; ++p) acc += grow[p];
          (*grad_bias)[oc] += acc;
        }
      }
    }
  }
}

void resize_bilinear_forward(const Tensor& input, Tensor& out) {
  check_resize(input, out);
  const int ih = input.h(), iw = input.w(), oh = out.h(), ow = out.w();
  const AxisTable ty = bilinear_axis(ih, oh);
  const AxisTable tx = bilinear_axis(iw, ow);
  const int planes = input.n() * input.c();
#pragma omp parallel for schedule(static)
  for (int pl = 0; pl < planes; ++pl) {
    const real* src = input.data() + static_cast<std::size_t>(pl) * ih * iw;
    real* dst = out.data() + static_cast<std::size_t>(pl) * oh * ow;
    for (int y = 0; y < oh; ++y) {
      const real* r0 = src + static_cast<std::size_t>(ty.i0[y]) * iw;
      const real* r1 = src + static_cast<std::size_t>(ty.i1[y]) * iw;
      const real a0 = ty.l0[y], a1 = ty.l1[y];
      real* drow = dst + static_cast<std::size_t>(y) * ow;
      for (int x = 0; x < ow; ++x) {
        const int x0 = tx.i0[x], x1 = tx.i1[x];
        drow[x] = a0 * (tx.l0[x] * r0[x0] + tx.l1[x] * r0[x1]) + a1 * (tx.l0[x] * r1[x0] + tx.l1[x] * r1[x1]);
      }
    }
  }
}

void resize_bilinear_backward(const Tensor& grad_out, Tensor& grad_input) {
  check_resize(grad_out, grad_input);
  const int ih = grad_input.h(), iw = grad_input.w(), oh = grad_out.h(), ow = grad_out.w();
  const AxisTable ty = bilinear_axis(ih, oh);
  const AxisTable tx = bilinear_axis(iw, ow);
  grad_input.fill(0);
  const int planes = grad_out.n() * grad_out.c();
#pragma omp parallel for schedule(static)
  for (int pl = 0; pl < planes; ++pl) {
    const real* src = grad_out.data() + static_cast<std::size_t>(pl) * oh * ow;
    real* dst = grad_input.data() + static_cast<std::size_t>(pl) * ih * iw;
    for (int y = 0; y < oh; ++y) {
      real* r0 = dst + static_cast<std::size_t>(ty.i0[y]) * iw;
      real* r1 = dst + static_cast<std::size_t>(ty.i1[y]) * iw;
      const real a0 = ty.l0[y], a1 = ty.l1[y];
      const real* srow = src + static_cast<std::size_t>(y) * ow;
      for (int x = 0; x < ow; ++x) {
        const int x0 = tx.i0[x], x1 = tx.i1[x];
        const real gv = srow[x];
        r0[x0] += a0 * tx.l0[x] * gv;
        r0[x1] += a0 * tx.l1[x] * gv;
        r1[x0] += a1 * tx.l0[x] * gv;
        r1[x1] += a1 * tx.l1[x] * gv;
      }
    }
  }
}

namespace reference {

void conv2d_forward(const Tensor& input, const Tensor& weight, const Tensor* bias, const ConvGeometry& g,
                    Tensor& out) {
  const ConvDims d = conv_dims(input.shape(), weight.shape(), g);
  out = Tensor(Shape{d.n, d.cout, d.ho, d.wo});
  for (int n = 0; n < d.n; ++n)
    for (int oc = 0; oc < d.cout; ++oc) {
      const int grp = oc / d.cout_g;
      for (int oy = 0; oy < d.ho; ++oy)
        for (int ox = 0; ox < d.wo; ++ox) {
          double acc = bias ? (*bias)[oc] : 0.0;
          for (int ci = 0; ci < d.cin_g; ++ci)
            for (int ky = 0; ky < d.kh; ++ky)
              for (int kx = 0; kx < d.kw; ++kx) {
                const int iy = oy * g.stride - g.padding + ky * g.dilation;
                const int ix = ox * g.stride - g.padding + kx * g.dilation;
                if (iy < 0 || iy >= d.h || ix < 0 || ix >= d.w) continue;
                acc += static_cast<double>(weight.at(oc, ci, ky, kx)) * input.at(n, grp * d.cin_g + ci, iy, ix);
              }
          out.at(n, oc, oy, ox) = static_cast<real>(acc);
        }
    }
}

void conv2d_backward_input(const Tensor& grad_out, const Tensor& weight, const ConvGeometry& g,
                           Tensor& grad_input) {
  const ConvDims d = conv_dims(grad_input.shape(), weight.shape(), g);
  std::vector<double> acc(grad_input.numel(), 0.0);
  for (int n = 0; n < d.n; ++n)
    for (int oc = 0; oc < d.cout; ++oc) {
      const int grp = oc / d.cout_g;
      for (int oy = 0; oy < d.ho; ++oy)
        for (int ox = 0; ox < d.wo; ++ox) {
          const double gv = grad_out.at(n, oc, oy, ox);
          for (int ci = 0; ci < d.cin_g; ++ci)
            for (int ky = 0; ky < d.kh; ++ky)
              for (int kx = 0; kx < d.kw; ++kx) {
                const int iy = oy * g.stride - g.padding + ky * g.dilation;
                const int ix = ox * g.stride - g.padding + kx * g.dilation;
                if (iy < 0 || iy >= d.h || ix < 0 || ix >= d.w) continue;
                const std::size_t idx =
                    ((static_cast<std::size_t>(n) * d.cin + grp * d.cin_g + ci) * d.h + iy) * d.w + ix;
                acc[idx] += gv * weight.at(oc, ci, ky, kx);
              }
        }
    }
  for (std::size_t i = 0; i < acc.size(); ++i) grad_input[i] = static_cast<real>(acc[i]);
}

void conv2d_backward_params(const Tensor& input, const Tensor& grad_out, const ConvGeometry& g,
                            Tensor& grad_weight, Tensor* grad_bias) {
  const ConvDims d = conv_dims(input.shape(), grad_weight.shape(), g);
  for (int oc = 0; oc < d.cout; ++oc) {
    const int grp = oc / d.cout_g;
    for (int ci = 0; ci < d.cin_g; ++ci)
      for (int ky = 0; ky < d.kh; ++ky)
        for (int kx = 0; kx < d.kw; ++kx) {
          double acc = 0;
          for (int n = 0; n < d.n; ++n)
            for (int oy = 0; oy < d.ho; ++oy)
              for (int ox = 0; ox < d.wo; ++ox) {
                const int iy = oy * g.stride - g.padding + ky * g.dilation;
                const int ix = ox * g.stride - g.padding + kx * g.dilation;
                if (iy < 0 || iy >= d.h || ix < 0 || ix >= d.w) continue;
                acc += static_cast<double>(grad_out.at(n, oc, oy, ox)) * input.at(n, grp * d.cin_g + ci, iy, ix);
              }
          grad_weight.at(oc, ci, ky, kx) += static_cast<real>(acc);
        }
    if (grad_bias) {
      double acc = 0;
      for (int n = 0; n < d.n; ++n)
        for (int oy = 0; oy < d.ho; ++oy)
          for (int ox = 0; ox < d.wo; ++ox) acc += grad_out.at(n, oc, oy, ox);
      (*grad_bias)[oc] += static_cast<real>(acc);
    }
  }
}

namespace {
void source_coord(int o, int in, int out, int& i0, int& i1, double& l1) {
  double src = static_cast<double>(in) / out * (o + 0.5) - 0.5;
  if (src < 0) src = 0;
  i0 = std::min(static_cast<int>(src), in - 1);
  i1 = std::min(i0 + 1, in - 1);
  l1 = src - i0;
}
}  // namespace

void resize_bilinear_forward(const Tensor& input, Tensor& out) {
  check_resize(input, out);
  for (int n = 0; n < input.n(); ++n)
    for (int c = 0; c < input.c(); ++c)
      for (int y = 0; y < out.h(); ++y)
        for (int x = 0; x < out.w(); ++x) {
          int y0, y1, x0, x1;
          double ly, lx;
          source_coord(y, input.h(), out.h(), y0, y1, ly);
          source_coord(x, input.w(), out.w(), x0, x1, lx);
          const double v = (1 - ly) * ((1 - lx) * input.at(n, c, y0, x0) + lx * input.at(n, c, y0, x1)) +
                           ly * ((1 - lx) * input.at(n, c, y1, x0) + lx * input.at(n, c, y1, x1));
          out.at(n, c, y, x) = static_cast<real>(v);
        }
}

void resize_bilinear_backward(const Tensor& grad_out, Tensor& grad_input) {
  check_resize(grad_out, grad_input);
  grad_input.fill(0);
  for (int n = 0; n < grad_out.n(); ++n)
    for (int c = 0; c < grad_out.c(); ++c)
      for (int y = 0; y < grad_out.h(); ++y)
        for (int x = 0; x < grad_out.w(); ++x) {
          int y0, y1, x0, x1;
          double ly, lx;
          source_coord(y, grad_input.h(), grad_out.h(), y0, y1, ly);
          source_coord(x, grad_input.w(), grad_out.w(), x0, x1, lx);
          const double gv = grad_out.at(n, c, y, x);
          grad_input.at(n, c, y0, x0) += static_cast<real>((1 - ly) * (1 - lx) * gv);
          grad_input.at(n, c, y0, x1) += static_cast<real>((1 - ly) * lx * gv);
          grad_input.at(n, c, y1, x0) += static_cast<real>(ly * (1 - lx) * gv);
          grad_input.at(n, c, y1, x1) += static_cast<real>(ly * lx * gv);
        }
}

}  // namespace reference
}  // namespace kernels

SBCB_NAMESPACE_END
