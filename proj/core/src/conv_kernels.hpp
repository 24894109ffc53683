#pragma once

#include "cartooner/autograd.hpp"
#include "cartooner/tensor.hpp"

// GEMM-backed kernels shared by the autograd ops. Gradients accumulate (+=).
namespace cartooner::nn::detail {

Shape conv_output_shape(const Shape& x, const Shape& weight, const ConvSpec& spec);

Tensor conv2d_forward(const Tensor& x, const Tensor& weight, const Tensor* bias,
                      const ConvSpec& spec);

void conv2d_backward(const Tensor& x, const Tensor& weight, const Tensor& grad_y,
                     const ConvSpec& spec, Tensor* grad_x, Tensor* grad_w, Tensor* grad_b);

void gram_forward(const Tensor& features, Tensor& out);
void gram_backward(const Tensor& features, const Tensor& grad_out, Tensor& grad_features);

}  // namespace cartooner::nn::detail
