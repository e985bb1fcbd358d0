#pragma once

#include "sbcb/tensor.hpp"

SBCB_NAMESPACE_BEGIN

struct ConvGeometry {
  int stride = 1;
  int padding = 0;
  int dilation = 1;
  int groups = 1;
};

/// Output extent of a convolution along one axis.
int conv_output_size(int input, int kernel, const ConvGeometry& g);

/// Dense compute kernels. The functions in `kernels` are the production
/// versions (im2col + GEMM, OpenMP over independent output rows, so results do
/// not depend on the thread count). `kernels::reference` holds direct serial
/// loops kept as a testing oracle and benchmark baseline.
namespace kernels {

// weight: (Cout, Cin/groups, kh, kw); bias: (1, Cout, 1, 1) or null.
// out is resized by the callee.
void conv2d_forward(const Tensor& input, const Tensor& weight, const Tensor* bias,
                    const ConvGeometry& g, Tensor& out);
// grad_input must be pre-shaped like the forward input; it is overwritten.
void conv2d_backward_input(const Tensor& grad_out, const Tensor& weight, const ConvGeometry& g,
                           Tensor& grad_input);
// Accumulates into grad_weight / grad_bias.
void conv2d_backward_params(const Tensor& input, const Tensor& grad_out, const ConvGeometry& g,
                            Tensor& grad_weight, Tensor* grad_bias);

// Bilinear resampling with half-pixel centres (align_corners = false).
// out must be pre-shaped with the target (h, w).
void resize_bilinear_forward(const Tensor& input, Tensor& out);
// grad_input must be pre-shaped; it is overwritten.
void resize_bilinear_backward(const Tensor& grad_out, Tensor& grad_input);

namespace reference {
void conv2d_forward(const Tensor& input, const Tensor& weight, const Tensor* bias,
                    const ConvGeometry& g, Tensor& out);
void conv2d_backward_input(const Tensor& grad_out, const Tensor& weight, const ConvGeometry& g,
                           Tensor& grad_input);
void conv2d_backward_params(const Tensor& input, const Tensor& grad_out, const ConvGeometry& g,
                            Tensor& grad_weight, Tensor* grad_bias);
void resize_bilinear_forward(const Tensor& input, Tensor& out);
void resize_bilinear_backward(const Tensor& grad_out, Tensor& grad_input);
}  // namespace reference

}  // namespace kernels

SBCB_NAMESPACE_END
