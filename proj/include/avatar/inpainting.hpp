#pragma once

// Texel visibility from posed views, and completion of the unseen part of
// the canonical texture maps with a small pixel-space DDPM.

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <vector>

#include "avatar/maps.hpp"
#include "avatar/splat.hpp"
#include "avatar/template.hpp"
#include "avatar/unet.hpp"

namespace avatar {

struct VisibilityMask {
  int resolution = 0;
  std::array<PlanarImage<std::uint8_t>, 2> vis;

  bool at(int side, int y, int x) const { return vis[side].at(0, y, x) != 0; }
  int count(int side) const;
  int count() const { return count(kFront) + count(kBack); }
};

VisibilityMask empty_visibility(int resolution);
VisibilityMask full_visibility(const CanonicalMapSet& maps);

struct VisibilityOptions {
  double depth_tolerance = 0.025;  // m behind the z-buffer still counted as seen
  double near = 0.05;
};

/// A valid texel is visible if its stored point, posed per frame, is not
/// behind the z-buffer of the posed mesh seen from that frame's camera.
/// `mesh` must live in the same canonical space as the maps (and share its
/// skinning); pixel_weights rows follow maps.valid_pixels(). One camera per
/// pose, or a single camera for all poses. No poses -> nothing visible.
VisibilityMask visibility_mask(const CanonicalMapSet& maps, const Eigen::MatrixXd& pixel_weights,
                               const TexturedTemplate& mesh, const SkinningField& mesh_skinning, const Skeleton& skel,
                               const std::vector<PoseParams>& poses, const std::vector<Camera>& cameras,
                               const std::vector<double>& reference_beta = {}, const VisibilityOptions& opts = {});

/// Visibility from 1..max_cameras cameras at random azimuth/elevation around
/// the canonical pose.
VisibilityMask random_visibility(const CanonicalMapSet& maps, const Eigen::MatrixXd& pixel_weights,
                                 const TexturedTemplate& mesh, const SkinningField& mesh_skinning, const Skeleton& skel,
                                 std::uint64_t seed, int max_cameras = 3, const std::vector<double>& reference_beta = {});

// ---- DDPM ----

struct DDPMConfig {
  int timesteps = 100;
  double beta_start = 1e-4, beta_end = 0.02;
  int resolution = 64;  // denoiser grid; map resolution must be a multiple
  int levels = 4, base_width = 16, max_width = 128;
  void validate() const;
  std::vector<double> betas() const;
};

constexpr int kDenoiserTimeChannels = 8;
// noisy texture 6 + known texture 6 + visibility 2 + mask 2 + time planes
constexpr int kDenoiserInputChannels = 16 + kDenoiserTimeChannels;

struct DenoiserWeights {
  DDPMConfig config;
  ParameterList params;
};

DenoiserWeights init_denoiser(const DDPMConfig& cfg, std::uint64_t seed);
void save_denoiser(const std::filesystem::path& path, const DenoiserWeights& w);
DenoiserWeights load_denoiser(const std::filesystem::path& path);

/// One training identity with a bank of visibility masks to draw from.
struct InpaintExample {
  CanonicalMapSet maps;
  std::vector<VisibilityMask> masks;
};

struct InpainterTrainConfig {
  int iterations = 3000;
  double lr = 1e-3;
  int warmup_steps = 100;
  double grad_clip = 1.0;  // global L2 norm, <= 0 disables
  std::uint64_t seed = 1;
};

struct InpainterTrainResult {
  DenoiserWeights weights;
  std::vector<double> curve;  // eps-MSE per step
};

/// Standard eps-prediction objective, MSE taken only over texels the model
/// has to generate (valid and not visible). Throws NumericalError on a
/// non-finite loss.
InpainterTrainResult train_inpainter(const std::vector<InpaintExample>& data, const DDPMConfig& ddpm,
                                     const InpainterTrainConfig& cfg, const DenoiserWeights* init = nullptr,
                                     const std::function<void(int, double)>& progress = {});

using TexturePair = std::array<ImageD, 2>;

/// Completes maps.texture outside `vis`. Visible texels are returned
/// bit-identical, texels outside the mask are zero, everything else is in
/// [0,1]. Reverse diffusion at the denoiser resolution with known-region
/// replacement every step, then upsampled with a 2-texel feather band.
TexturePair inpaint(const CanonicalMapSet& maps, const VisibilityMask& vis, const DenoiserWeights& w,
                    std::uint64_t seed);

/// Baseline: every unseen valid texel gets the mean color of the visible
/// texels (both sides pooled).
TexturePair mean_color_fill(const CanonicalMapSet& maps, const VisibilityMask& vis);

/// Mean squared error over valid texels that are not visible.
double masked_region_mse(const TexturePair& a, const TexturePair& b, const CanonicalMapSet& maps,
                         const VisibilityMask& vis);

}  // namespace avatar
