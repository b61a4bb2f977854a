#pragma once

// Canonical textured template mesh and skeleton-scale normalization.

#include <filesystem>
#include <vector>

#include "avatar/common.hpp"
#include "avatar/skeleton.hpp"

namespace avatar {

struct TexturedTemplate {
  std::vector<Vec3d> vertices;           // canonical pose, meters
  std::vector<Eigen::Vector3i> faces;    // counter-clockwise seen from outside
  std::vector<Vec3d> colors;             // RGB in [0,1]
  std::vector<Vec3d> normals;            // unit length
  // Bone scales of the skeleton this geometry currently fits. Normalization
  // maps it to all ones, which is what makes normalization idempotent.
  std::vector<double> bone_scale;

  int vertex_count() const { return static_cast<int>(vertices.size()); }
  int face_count() const { return static_cast<int>(faces.size()); }
  void validate() const;
};

/// Area-weighted vertex normals; isolated vertices get +z.
std::vector<Vec3d> compute_vertex_normals(const std::vector<Vec3d>& vertices,
                                          const std::vector<Eigen::Vector3i>& faces);

double triangle_area(const Vec3d& a, const Vec3d& b, const Vec3d& c);

/// Retargets the template from its current bone scales to the average
/// skeleton (all ones) at the canonical pose: v_norm = T_norm v with
/// T_norm = sum_i w_i G_i(cano, 1) G_i(cano, beta)^-1.
TexturedTemplate normalize_template(const TexturedTemplate& tmpl, const Skeleton& skel,
                                    const SkinningOptions& opts = {});
/// Same, with the subject bone scales given explicitly (overrides tmpl.bone_scale).
TexturedTemplate normalize_template(const TexturedTemplate& tmpl, const Skeleton& skel,
                                    const std::vector<double>& subject_beta,
                                    const SkinningOptions& opts = {});

// Template file (little-endian):
//   "AVMESH\r\n" | u32 version=1 | u32 nv | u32 nf | u32 nb
//   nv x (pos f64x3, color f64x3, normal f64x3) | nf x (i32x3) | nb x f64 bone scale
void save_template(const std::filesystem::path& path, const TexturedTemplate& tmpl);
TexturedTemplate load_template(const std::filesystem::path& path);
std::vector<unsigned char> encode_template(const TexturedTemplate& tmpl);
TexturedTemplate decode_template(const std::vector<unsigned char>& bytes);

// Skinning weight file: "AVSKIN\r\n" | u32 version=1 | u32 nv | u32 nb | u32 k
//   | nv x pos f64x3 | nv*nb weights f64 (row major)
void save_skinning(const std::filesystem::path& path, const SkinningField& field);
SkinningField load_skinning(const std::filesystem::path& path);

}  // namespace avatar
