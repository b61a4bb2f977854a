#include "avatar/mesh_render.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "avatar/common.hpp"

namespace avatar {

namespace {

struct ScreenTri {
  Vec2d p[3];
  double inv_z[3];
  double area;
  int xmin, xmax, ymin, ymax;
};

// Projects every face onto a (scale * width) x (scale * height) sample grid.
// Faces with a vertex at or behind the near plane are dropped.
std::vector<ScreenTri> setup(const std::vector<Vec3d>& v, const std::vector<Eigen::Vector3i>& faces, const Camera& cam,
                             int scale, double near, std::vector<int>& ids) {
  std::vector<Vec3d> view(v.size());
  for (size_t i = 0; i < v.size(); ++i) view[i] = cam.rotation * v[i] + cam.translation;
  const int w = cam.width * scale, h = cam.height * scale;
  std::vector<ScreenTri> tris;
  ids.clear();
  for (size_t f = 0; f < faces.size(); ++f) {
    ScreenTri t;
    bool ok = true;
    for (int k = 0; k < 3; ++k) {
      const Vec3d& q = view[faces[f][k]];
      if (q.z() <= near) ok = false;
      t.inv_z[k] = 1.0 / q.z();
      t.p[k] = Vec2d((cam.fx * q.x() * t.inv_z[k] + cam.cx) * scale, (cam.fy * q.y() * t.inv_z[k] + cam.cy) * scale);
    }
    if (!ok) continue;
    t.area = (t.p[1] - t.p[0]).x() * (t.p[2] - t.p[0]).y() - (t.p[1] - t.p[0]).y() * (t.p[2] - t.p[0]).x();
    if (std::abs(t.area) < 1e-14) continue;
    const double x0 = std::min({t.p[0].x(), t.p[1].x(), t.p[2].x()}), x1 = std::max({t.p[0].x(), t.p[1].x(), t.p[2].x()});
    const double y0 = std::min({t.p[0].y(), t.p[1].y(), t.p[2].y()}), y1 = std::max({t.p[0].y(), t.p[1].y(), t.p[2].y()});
    t.xmin = std::max(0, static_cast<int>(std::floor(x0 - 0.5)));
    t.xmax = std::min(w - 1, static_cast<int>(std::ceil(x1 - 0.5)));
    t.ymin = std::max(0, static_cast<int>(std::floor(y0 - 0.5)));
    t.ymax = std::min(h - 1, static_cast<int>(std::ceil(y1 - 0.5)));
    if (t.xmin > t.xmax || t.ymin > t.ymax) continue;
    tris.push_back(t);
    ids.push_back(static_cast<int>(f));
  }
  return tris;
}

// Sample-grid z-buffer. Ties keep the earlier face.
void raster(const std::vector<ScreenTri>& tris, int w, int h, std::vector<int>& hit, std::vector<Vec3d>& bary,
            std::vector<double>& depth) {
  hit.assign(size_t(w) * h, -1);
  bary.assign(size_t(w) * h, Vec3d::Zero());
  depth.assign(size_t(w) * h, std::numeric_limits<double>::infinity());
  parallel_for(h, [&](std::int64_t yb, std::int64_t ye) {
    for (size_t ti = 0; ti < tris.size(); ++ti) {
      const auto& t = tris[ti];
      const int y0 = std::max<int>(t.ymin, yb), y1 = std::min<int>(t.ymax, ye - 1);
      for (int y = y0; y <= y1; ++y)
        for (int x = t.xmin; x <= t.xmax; ++x) {
          const Vec2d s(x + 0.5, y + 0.5);
          double b[3];
          for (int k = 0; k < 3; ++k) {
            const Vec2d& a = t.p[(k + 1) % 3];
            const Vec2d& c = t.p[(k + 2) % 3];
            b[k] = ((c - a).x() * (s - a).y() - (c - a).y() * (s - a).x()) / t.area;
          }
          if (b[0] < 0 || b[1] < 0 || b[2] < 0) continue;
          // Screen-space barycentrics -> perspective-correct ones.
          const double iz = b[0] * t.inv_z[0] + b[1] * t.inv_z[1] + b[2] * t.inv_z[2];
          const double z = 1.0 / iz;
          const size_t at = size_t(y) * w + x;
          if (!(z < depth[at])) continue;
          depth[at] = z;
          hit[at] = static_cast<int>(ti);
          bary[at] = Vec3d(b[0] * t.inv_z[0], b[1] * t.inv_z[1], b[2] * t.inv_z[2]) * z;
        }
    }
  });
}

}  // namespace

RenderTarget render_mesh(const std::vector<Vec3d>& vertices, const std::vector<Eigen::Vector3i>& faces,
                         const std::vector<Vec3d>& colors, const Camera& cam, const MeshRenderOptions& opts) {
  cam.validate();
  if (colors.size() != vertices.size()) throw ShapeError("render_mesh: one color per vertex required");
  if (opts.supersample < 1) throw ConfigError("render_mesh: supersample must be >= 1");
  const int s = opts.supersample, w = cam.width * s, h = cam.height * s;
  std::vector<int> ids, hit;
  std::vector<Vec3d> bary;
  std::vector<double> depth;
  const auto tris = setup(vertices, faces, cam, s, opts.near, ids);
  raster(tris, w, h, hit, bary, depth);
  RenderTarget out{ImageD(cam.width, cam.height, 3), ImageD(cam.width, cam.height, 1)};
  const double norm = 1.0 / (s * s);
  for (int y = 0; y < cam.height; ++y)
    for (int x = 0; x < cam.width; ++x) {
      Vec3d col = Vec3d::Zero();
      int cover = 0;
      for (int sy = 0; sy < s; ++sy)
        for (int sx = 0; sx < s; ++sx) {
          const size_t at = size_t(y * s + sy) * w + (x * s + sx);
          if (hit[at] < 0) continue;
          const auto& f = faces[ids[hit[at]]];
          col += bary[at][0] * colors[f[0]] + bary[at][1] * colors[f[1]] + bary[at][2] * colors[f[2]];
          ++cover;
        }
      for (int c = 0; c < 3; ++c) out.rgb.at(c, y, x) = col[c] * norm;
      out.alpha.at(0, y, x) = cover * norm;
    }
  return out;
}

FaceIdBuffer render_face_ids(const std::vector<Vec3d>& vertices, const std::vector<Eigen::Vector3i>& faces,
                             const Camera& cam, double near) {
  cam.validate();
  std::vector<int> ids, hit;
  FaceIdBuffer out;
  out.width = cam.width;
  out.height = cam.height;
  const auto tris = setup(vertices, faces, cam, 1, near, ids);
  raster(tris, cam.width, cam.height, hit, out.bary, out.depth);
  out.face.resize(hit.size());
  for (size_t i = 0; i < hit.size(); ++i) out.face[i] = hit[i] < 0 ? -1 : ids[hit[i]];
  return out;
}

}  // namespace avatar
