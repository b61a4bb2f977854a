#pragma once

// Central finite-difference checks for the tensor engine and the splat
// renderer. Also backs the `grad-check` CLI subcommand.

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "avatar/splat.hpp"
#include "avatar/tensor.hpp"

namespace avatar {

struct GradCheckResult {
  std::string name;
  double max_rel_error = 0.0;
  double threshold = 0.0;
  bool passed() const { return max_rel_error < threshold; }
};

using TensorFn = std::function<Tensor(const std::vector<Tensor>&)>;

/// Compares analytic gradients of L = sum(r * f(inputs)) (r a fixed random
/// weight tensor, L accumulated in double) with central differences of step
/// eps. Returns the largest norm-wise relative error over the inputs:
/// |g_analytic - g_fd| / max(|g_analytic|, |g_fd|).
double tensor_grad_error(const TensorFn& f, const std::vector<Tensor>& inputs, double eps = 1e-3,
                         std::uint64_t seed = 7);

/// One check per differentiable tensor op, plus a two-layer conv net.
std::vector<GradCheckResult> tensor_gradcheck_suite(std::uint64_t seed = 1);

struct SplatScene {
  std::vector<Gaussian3D> gaussians;
  Camera camera;
};

/// n random Gaussians in front of a camera at the origin looking down +z,
/// sized so that they overlap on a size x size image.
SplatScene random_splat_scene(std::uint64_t seed, int n, int size);

/// Norm-wise relative error of rasterize_backward against central
/// differences of L = sum(r_rgb * C) + sum(r_a * A), over every attribute of
/// every Gaussian.
double splat_grad_error(const SplatScene& scene, std::uint64_t seed, double eps = 1e-6);

/// rasterize_backward vs finite differences on random scenes.
std::vector<GradCheckResult> splat_gradcheck_suite(int scenes, std::uint64_t seed = 1);

}  // namespace avatar
