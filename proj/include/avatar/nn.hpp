#pragma once

// Minimal single-sample layers used by the encoders. Feature maps are
// channel-first: {C, H, W} for 2-D, {C, T} for 1-D.

#include <random>

#include "avatar/tensor.hpp"

namespace avatar::nn {

/// y = W x + b with W {out, in}.
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias);
/// Returns dL/dx; accumulates dL/dW and dL/db when the pointers are non-null.
Tensor linear_backward(const Tensor& x, const Tensor& weight, const Tensor& grad_y, Tensor* grad_weight,
                       Tensor* grad_bias);

/// 3x3 convolution, stride 2, zero padding 1. weight {out, in, 3, 3}.
Tensor conv2d_s2(const Tensor& x, const Tensor& weight, const Tensor& bias);
Tensor conv2d_s2_backward(const Tensor& x, const Tensor& weight, const Tensor& grad_y, Tensor* grad_weight,
                          Tensor* grad_bias);

/// Width-3 temporal convolution, stride 1, zero padding 1. weight {out, in, 3}.
Tensor conv1d(const Tensor& x, const Tensor& weight, const Tensor& bias);
Tensor conv1d_backward(const Tensor& x, const Tensor& weight, const Tensor& grad_y, Tensor* grad_weight,
                       Tensor* grad_bias);

Tensor silu(const Tensor& x);
/// dL/dx given the pre-activation x and dL/dy.
Tensor silu_backward(const Tensor& x, const Tensor& grad_y);

/// Mean over every axis but the first: {C, ...} -> {C}.
Tensor global_average(const Tensor& x);
Tensor global_average_backward(const Tensor& x, const Tensor& grad_y);

/// {C, H, W} -> {C * grid * grid}: mean over a grid x grid partition of the
/// plane (bins may overlap when H or W is not a multiple of grid).
Tensor adaptive_average(const Tensor& x, std::size_t grid);
Tensor adaptive_average_backward(const Tensor& x, std::size_t grid, const Tensor& grad_y);

void init_normal(Tensor& t, std::mt19937_64& rng, double stddev);

}  // namespace avatar::nn
