#pragma once

#include <cstddef>

#include "bem/tensor.hpp"

// Non-differentiable kernels over plain tensors. The differentiable wrappers
// in autodiff.hpp call these for both the forward and the backward pass.
namespace bem {

struct Conv2dGeometry {
    std::size_t in_channels, in_h, in_w;
    std::size_t out_channels, kernel_h, kernel_w;
    std::size_t stride, padding;
    std::size_t out_h, out_w;
};

// Validates shapes and returns the derived output geometry.
Conv2dGeometry conv2d_geometry(const Shape& input, const Shape& kernel, std::size_t stride, std::size_t padding);

// input [C_in,H,W], kernel [C_out,C_in,kh,kw] -> [C_out,H',W'] with
// H' = (H + 2*padding - kh) / stride + 1. Zero padding, no bias.
Tensor conv2d(const Tensor& input, const Tensor& kernel, std::size_t stride, std::size_t padding);
Tensor conv2d_grad_input(const Tensor& grad_out, const Tensor& kernel, const Shape& input_shape, std::size_t stride,
                         std::size_t padding);
Tensor conv2d_grad_kernel(const Tensor& grad_out, const Tensor& input, const Shape& kernel_shape, std::size_t stride,
                          std::size_t padding);

// Half-pixel-center bilinear resampling: the source coordinate of output
// index d is (d + 0.5) * in/out - 0.5, clamped to [0, in-1]. Corners are not
// aligned.
Tensor bilinear_resize(const Tensor& input, std::size_t out_h, std::size_t out_w);
Tensor bilinear_resize_grad(const Tensor& grad_out, std::size_t in_h, std::size_t in_w);

// [C1,H,W] ++ [C2,H,W] -> [C1+C2,H,W]
Tensor concat_channels(const Tensor& a, const Tensor& b);

// x[C,H,W] + bias[C] broadcast over H,W.
Tensor add_channel_bias(const Tensor& x, const Tensor& bias);

double sum(const Tensor& t);
double mean(const Tensor& t);

}  // namespace bem
