#pragma once

// Triangle-mesh rasterizer with a z-buffer and perspective-correct
// barycentric color interpolation. Used to produce ground-truth images; it
// shares no code with the splat renderer on purpose.

#include <vector>

#include "avatar/image.hpp"
#include "avatar/splat.hpp"

namespace avatar {

struct MeshRenderOptions {
  int supersample = 2;  // s x s samples per pixel, box-filtered
  double near = 0.05;
};

/// Colors composited over black; alpha is sample coverage.
RenderTarget render_mesh(const std::vector<Vec3d>& vertices, const std::vector<Eigen::Vector3i>& faces,
                         const std::vector<Vec3d>& colors, const Camera& cam, const MeshRenderOptions& opts = {});

/// Per-pixel index of the nearest face (-1 for background), one sample at
/// each pixel center, and the barycentrics of that sample.
struct FaceIdBuffer {
  int width = 0, height = 0;
  std::vector<int> face;
  std::vector<Vec3d> bary;
  std::vector<double> depth;
};
FaceIdBuffer render_face_ids(const std::vector<Vec3d>& vertices, const std::vector<Eigen::Vector3i>& faces,
                             const Camera& cam, double near = 0.05);

}  // namespace avatar
