#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "avatar/tensor.hpp"

namespace avatar {

struct AdamConfig {
  float lr = 1e-3f;
  float beta1 = 0.9f;
  float beta2 = 0.999f;
  float eps = 1e-8f;
};

struct AdamState {
  std::int64_t step = 0;
  std::vector<std::vector<float>> m;
  std::vector<std::vector<float>> v;
};

/// One Adam update of every tensor in `params` from its accumulated gradient.
/// Throws NumericalError (leaving params and state untouched) if any gradient
/// is non-finite.
void adam_step(std::span<Tensor> params, AdamState& state, const AdamConfig& cfg);

/// Adam over a plain double vector with an explicit gradient (used for pose
/// and shape parameters that live outside the tape).
void adam_step(std::span<double> params, std::span<const double> grads, AdamState& state,
               const AdamConfig& cfg);

void zero_grad(std::span<Tensor> params);

/// Rescales all gradients so their joint L2 norm is at most max_norm.
/// Returns the norm before clipping.
double clip_grad_norm(std::span<Tensor> params, double max_norm);

}  // namespace avatar
