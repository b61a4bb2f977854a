#pragma once

// Front/back orthographic parameterization of the canonical template:
// mask, position, texture and normal maps on one shared pixel grid, their
// posed counterparts, and decoding of per-pixel Gaussian attributes.
//
// Pixel (x, y) of either side sits at world
//   X = center.x - extent/2 + (x + 0.5) * texel
//   Y = center.y + extent/2 - (y + 0.5) * texel
// The front side keeps the surface point with the largest z, the back side
// the smallest z. Both sides use the same grid (the back is not mirrored).

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "avatar/gaussian.hpp"
#include "avatar/image.hpp"
#include "avatar/skeleton.hpp"
#include "avatar/template.hpp"

namespace avatar {

enum Side : int { kFront = 0, kBack = 1 };

struct PixelRef {
  int side;
  int y;
  int x;
  bool operator==(const PixelRef&) const = default;
};

struct MapFraming {
  double extent = 2.2;  // meters covered by the full grid
  Vec2d center = Vec2d(0.0, -0.05);
};

struct CanonicalMapSet {
  int resolution = 0;
  MapFraming framing;
  std::array<PlanarImage<std::uint8_t>, 2> mask;
  std::array<ImageD, 2> position;  // 3 channels, meters
  std::array<ImageD, 2> texture;   // 3 channels, [0,1]
  std::array<ImageD, 2> normal;    // 3 channels, unit

  double texel() const { return framing.extent / resolution; }
  Vec2d pixel_xy(int y, int x) const;
  bool valid(int side, int y, int x) const { return mask[side].at(0, y, x) != 0; }
  Vec3d pos(const PixelRef& p) const;
  Vec3d color(const PixelRef& p) const;
  Vec3d nrm(const PixelRef& p) const;
  int valid_count(int side) const;
  int valid_count() const { return valid_count(kFront) + valid_count(kBack); }
  /// Valid pixels, front side first, row-major within a side. This is the
  /// order of extracted Gaussians.
  std::vector<PixelRef> valid_pixels() const;
};

CanonicalMapSet empty_maps(int resolution, const MapFraming& framing = {});

/// Orthographic depth-test bake of the template into both sides.
CanonicalMapSet bake_maps(const TexturedTemplate& tmpl, int resolution, const MapFraming& framing = {});

struct PosedPositionMaps {
  std::array<ImageD, 2> position;
};

/// Skinning weights of every valid pixel's stored point (rows follow
/// valid_pixels()).
Eigen::MatrixXd pixel_weights(const CanonicalMapSet& maps, const SkinningField& skinning);

/// Forward LBS of the stored points, root rotation/translation excluded.
/// reference_beta: bone scales the maps were baked at (empty = all ones,
/// i.e. normalized maps).
PosedPositionMaps pose_maps(const CanonicalMapSet& maps, const SkinningField& skinning, const Skeleton& skel,
                            const PoseParams& pose, const std::vector<double>& reference_beta = {});
PosedPositionMaps pose_maps(const CanonicalMapSet& maps, const Eigen::MatrixXd& weights, const Skeleton& skel,
                            const PoseParams& pose, const std::vector<double>& reference_beta = {});

// Gaussian map channel layout, per side.
constexpr int kGaussianChannels = 14;
constexpr int kChDx = 0, kChDc = 3, kChQ = 6, kChLogScale = 10, kChOpacity = 13;

struct DecodeOptions {
  // Base surfel: in-plane std-dev = scale_factor * texel (stretched by
  // 1/|n_z| along the depth direction), normal std-dev = thin_factor * texel.
  double scale_factor = 0.8;
  double thin_factor = 0.3;
  double grazing_floor = 0.5;
  double min_scale = 1e-4;
  double max_scale = 0.2;
};

/// Base orientation and scale of the Gaussian at a pixel (zero network output).
void base_surfel(const Vec3d& normal, double texel, const DecodeOptions& opts, Quatd& q, Vec3d& s);

/// gmap: 2*14 x R x R floats (front channels then back). One Gaussian per
/// valid pixel in valid_pixels() order, in canonical space.
std::vector<Gaussian3D> extract_gaussians(std::span<const float> gmap, const CanonicalMapSet& maps,
                                          const DecodeOptions& opts = {});

/// Chains per-Gaussian gradients back onto the Gaussian map channels.
std::vector<float> extract_gaussians_backward(std::span<const float> gmap, const CanonicalMapSet& maps,
                                              const std::vector<GaussianGrad>& grads, const DecodeOptions& opts = {});

// Map file (little-endian):
//   "AVMAPS\r\n" | u32 version=1 | u32 R | f64 extent | f64 center_x | f64 center_y
//   | str side order ("front,back")
//   | per side: R*R u8 mask, then 9 planes of R*R f32: position xyz, texture rgb, normal xyz
void save_maps(const std::filesystem::path& path, const CanonicalMapSet& maps);
CanonicalMapSet load_maps(const std::filesystem::path& path);

/// Front and back textures side by side, masked pixels black.
void export_texture_png(const std::filesystem::path& path, const CanonicalMapSet& maps);

}  // namespace avatar
