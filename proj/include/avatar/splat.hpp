#pragma once

// Tile-based Gaussian splatting rasterizer with analytic gradients.
//
// Conventions: view space looks down +z (x right, y down); pixel (u, v) has
// its center at (u + 0.5, v + 0.5). Gaussians are sorted once per view by
// view-space mean depth (stable, ties keep input order) and composited front
// to back:
//   alpha_i = min(alpha_max, o_i exp(-d^T Sigma2D^-1 d / 2)),  only where d^T Sigma2D^-1 d <= cutoff^2
//   C = sum_i c_i alpha_i T_i,  T_i = prod_{j<i} (1 - alpha_j),  A = 1 - T_final
// A pixel stops after the Gaussian that brings T below min_transmittance.

#include <cstdint>
#include <span>
#include <vector>

#include "avatar/common.hpp"
#include "avatar/gaussian.hpp"
#include "avatar/image.hpp"

namespace avatar {

struct Camera {
  double fx = 1, fy = 1, cx = 0, cy = 0;
  Mat3d rotation = Mat3d::Identity();  // world -> view
  Vec3d translation = Vec3d::Zero();
  int width = 0, height = 0;

  Vec3d to_view(const Vec3d& x) const { return rotation * x + translation; }
  Vec3d center() const { return -rotation.transpose() * translation; }
  Vec2d project(const Vec3d& world) const;
  void validate() const;

  /// Camera at `eye` looking at `target`; `up` is the world up direction.
  static Camera look_at(const Vec3d& eye, const Vec3d& target, const Vec3d& up, double focal, int width, int height);
};

struct RenderOptions {
  double low_pass = 0.3;  // px^2 added to the projected covariance diagonal
  double near = 0.05;     // m; Gaussians at or behind it are culled
  double alpha_max = 0.99;
  double min_transmittance = 1e-4;
  double cutoff_sigma = 3.0;
  int tile = 16;
};

/// Posed render primitive: a Gaussian given by its covariance directly (LBS
/// with blended, non-rigid transforms does not preserve the q/s factorization).
struct Splat {
  Vec3d mean = Vec3d::Zero();
  Mat3d cov = Mat3d::Identity();
  double opacity = 0.5;
  Vec3d color = Vec3d::Zero();
};

Splat to_splat(const Gaussian3D& g);

struct ScreenGaussian {
  Vec2d mean = Vec2d::Zero();  // pixels
  Mat2d cov = Mat2d::Identity();
  Mat2d conic = Mat2d::Identity();  // cov^-1
  double depth = 0;
  double opacity = 0;
  Vec3d color = Vec3d::Zero();
  bool culled = true;
};

ScreenGaussian project(const Splat& s, const Camera& cam, const RenderOptions& opts = {});

struct RenderTarget {
  ImageD rgb;    // 3 channels, premultiplied over black
  ImageD alpha;  // 1 channel
};

/// What the forward pass leaves behind for the backward pass.
struct RenderRecord {
  std::uint64_t scene_hash = 0;
  std::vector<ScreenGaussian> screen;
  std::vector<std::vector<int>> tiles;  // depth-sorted Gaussian indices per tile
  int tiles_x = 0, tiles_y = 0;
};

std::uint64_t scene_hash(std::span<const Splat> splats, const Camera& cam, const RenderOptions& opts);

RenderTarget render(std::span<const Splat> splats, const Camera& cam, const RenderOptions& opts = {},
                    RenderRecord* record = nullptr);

struct SplatGrad {
  Vec3d mean = Vec3d::Zero();
  Mat3d cov = Mat3d::Zero();  // symmetric
  double opacity = 0;
  Vec3d color = Vec3d::Zero();
};

/// Gradients of L given dL/dC (3 channels) and optionally dL/dA. Throws
/// ContractError if the record was produced by a different scene.
std::vector<SplatGrad> render_backward(std::span<const Splat> splats, const Camera& cam, const RenderRecord& record,
                                       const ImageD& d_rgb, const ImageD* d_alpha = nullptr,
                                       const RenderOptions& opts = {});

/// Gaussian-level entry points (convert through to_splat).
RenderTarget rasterize(const std::vector<Gaussian3D>& gaussians, const Camera& cam, const RenderOptions& opts = {},
                       RenderRecord* record = nullptr);
std::vector<GaussianGrad> rasterize_backward(const std::vector<Gaussian3D>& gaussians, const Camera& cam,
                                             const RenderRecord& record, const ImageD& d_rgb,
                                             const ImageD* d_alpha = nullptr, const RenderOptions& opts = {});

/// Render as a 4-channel float image (RGB premultiplied, alpha).
Image to_rgba(const RenderTarget& rt);

// Scene dump (little-endian): "AVSCENE\n" | u32 version=1 | u32 count
//   | count x (x f64x3, q f64x4 (w,x,y,z), s f64x3, o f64, c f64x3)
void save_scene(const std::filesystem::path& path, const std::vector<Gaussian3D>& g);
std::vector<Gaussian3D> load_scene(const std::filesystem::path& path);

}  // namespace avatar
