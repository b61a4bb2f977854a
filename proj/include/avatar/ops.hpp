#pragma once

#include <span>
#include <vector>

#include "avatar/tensor.hpp"

namespace avatar::ops {

/// 2D cross-correlation. input N×C×H×W, kernel O×C×k×k (square).
Tensor conv2d(const Tensor& input, const Tensor& kernel, int stride = 1, int pad = 0);
/// Adds a per-channel bias (length C) to an N×C×H×W tensor.
Tensor add_bias(const Tensor& input, const Tensor& bias);

Tensor upsample2x(const Tensor& input);
Tensor avgpool2x(const Tensor& input);
Tensor concat_channels(const std::vector<Tensor>& inputs);

Tensor leaky_relu(const Tensor& x, float slope = 0.2f);
Tensor sigmoid(const Tensor& x);
Tensor tanh(const Tensor& x);
/// Per-sample, per-channel normalization to zero mean / unit variance.
Tensor instance_norm(const Tensor& x, float eps = 1e-5f);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, float s);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
Tensor mse(const Tensor& a, const Tensor& b);
Tensor l1(const Tensor& a, const Tensor& b);

/// Scalar sum(x * g) for a constant g. Backpropagating it injects g as the
/// upstream gradient of x, which is how externally computed gradients (the
/// rasterizer chain) enter the tape.
Tensor dot_const(const Tensor& x, std::span<const float> g);

}  // namespace avatar::ops
