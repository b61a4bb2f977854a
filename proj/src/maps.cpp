#include "avatar/maps.hpp"

#include <cmath>
#include <cstring>
#include <limits>

#include "avatar/binary_io.hpp"

namespace avatar {

namespace {
constexpr char kMagic[8] = {'A', 'V', 'M', 'A', 'P', 'S', '\r', '\n'};

// Map values are kept float-representable so the f32 file round trip is exact.
double f32r(double v) { return static_cast<double>(static_cast<float>(v)); }

double sigmoid(double v) { return 1.0 / (1.0 + std::exp(-v)); }

void check_gmap(std::span<const float> gmap, const CanonicalMapSet& maps) {
  const size_t expect = size_t(2 * kGaussianChannels) * maps.resolution * maps.resolution;
  if (gmap.size() != expect)
    throw ShapeError("gaussian map has " + std::to_string(gmap.size()) + " values, expected " + std::to_string(expect) +
                     " for resolution " + std::to_string(maps.resolution));
}
}  // namespace

Vec2d CanonicalMapSet::pixel_xy(int y, int x) const {
  const double t = texel();
  return Vec2d(framing.center.x() - 0.5 * framing.extent + (x + 0.5) * t,
               framing.center.y() + 0.5 * framing.extent - (y + 0.5) * t);
}

Vec3d CanonicalMapSet::pos(const PixelRef& p) const {
  const auto& m = position[p.side];
  return Vec3d(m.at(0, p.y, p.x), m.at(1, p.y, p.x), m.at(2, p.y, p.x));
}
Vec3d CanonicalMapSet::color(const PixelRef& p) const {
  const auto& m = texture[p.side];
  return Vec3d(m.at(0, p.y, p.x), m.at(1, p.y, p.x), m.at(2, p.y, p.x));
}
Vec3d CanonicalMapSet::nrm(const PixelRef& p) const {
  const auto& m = normal[p.side];
  return Vec3d(m.at(0, p.y, p.x), m.at(1, p.y, p.x), m.at(2, p.y, p.x));
}

int CanonicalMapSet::valid_count(int side) const {
  int n = 0;
  for (auto v : mask[side].data) n += v != 0;
  return n;
}

std::vector<PixelRef> CanonicalMapSet::valid_pixels() const {
  std::vector<PixelRef> out;
  out.reserve(valid_count());
  for (int s = 0; s < 2; ++s)
    for (int y = 0; y < resolution; ++y)
      for (int x = 0; x < resolution; ++x)
        if (valid(s, y, x)) out.push_back({s, y, x});
  return out;
}

CanonicalMapSet empty_maps(int resolution, const MapFraming& framing) {
  CanonicalMapSet m;
  m.resolution = resolution;
  m.framing = framing;
  for (int s = 0; s < 2; ++s) {
    m.mask[s] = PlanarImage<std::uint8_t>(resolution, resolution, 1);
    m.position[s] = ImageD(resolution, resolution, 3);
    m.texture[s] = ImageD(resolution, resolution, 3);
    m.normal[s] = ImageD(resolution, resolution, 3);
  }
  return m;
}

CanonicalMapSet bake_maps(const TexturedTemplate& tmpl, int resolution, const MapFraming& framing) {
  if (resolution < 16) throw ShapeError("map resolution must be at least 16");
  if (tmpl.faces.empty()) throw DataError("cannot bake a template with zero faces");
  tmpl.validate();
  auto maps = empty_maps(resolution, framing);
  const double t = maps.texel();
  const double x0 = framing.center.x() - 0.5 * framing.extent;
  const double y0 = framing.center.y() + 0.5 * framing.extent;
  const int r = resolution;

  parallel_for(2, [&](std::int64_t sb, std::int64_t se) {
    for (auto side = sb; side < se; ++side) {
      const double sign = side == kFront ? 1.0 : -1.0;
      std::vector<double> depth(size_t(r) * r, -std::numeric_limits<double>::infinity());
      for (const auto& f : tmpl.faces) {
        const Vec3d& a = tmpl.vertices[f[0]];
        const Vec3d& b = tmpl.vertices[f[1]];
        const Vec3d& c = tmpl.vertices[f[2]];
        // Continuous pixel coordinates: pixel centers at integer + 0.5.
        auto to_px = [&](const Vec3d& v) { return Vec2d((v.x() - x0) / t, (y0 - v.y()) / t); };
        const Vec2d pa = to_px(a), pb = to_px(b), pc = to_px(c);
        const double area = (pb - pa).x() * (pc - pa).y() - (pb - pa).y() * (pc - pa).x();
        if (std::abs(area) < 1e-12) continue;
        const int xmin = std::max(0, static_cast<int>(std::floor(std::min({pa.x(), pb.x(), pc.x()}) - 0.5)));
        const int xmax = std::min(r - 1, static_cast<int>(std::ceil(std::max({pa.x(), pb.x(), pc.x()}) - 0.5)));
        const int ymin = std::max(0, static_cast<int>(std::floor(std::min({pa.y(), pb.y(), pc.y()}) - 0.5)));
        const int ymax = std::min(r - 1, static_cast<int>(std::ceil(std::max({pa.y(), pb.y(), pc.y()}) - 0.5)));
        for (int y = ymin; y <= ymax; ++y)
          for (int x = xmin; x <= xmax; ++x) {
            const Vec2d p(x + 0.5, y + 0.5);
            auto edge = [](const Vec2d& u, const Vec2d& v, const Vec2d& w) {
              return (v - u).x() * (w - u).y() - (v - u).y() * (w - u).x();
            };
            double wa = edge(pb, pc, p) / area, wb = edge(pc, pa, p) / area, wc = edge(pa, pb, p) / area;
            if (wa < -1e-9 || wb < -1e-9 || wc < -1e-9) continue;
            wa = std::max(wa, 0.0);
            wb = std::max(wb, 0.0);
            wc = std::max(wc, 0.0);
            const double sum = wa + wb + wc;
            wa /= sum;
            wb /= sum;
            wc /= sum;
            const Vec3d pos = wa * a + wb * b + wc * c;
            const double d = sign * pos.z();
            auto& best = depth[size_t(y) * r + x];
            if (!(d > best)) continue;
            best = d;
            const Vec3d col = wa * tmpl.colors[f[0]] + wb * tmpl.colors[f[1]] + wc * tmpl.colors[f[2]];
            Vec3d nrm = wa * tmpl.normals[f[0]] + wb * tmpl.normals[f[1]] + wc * tmpl.normals[f[2]];
            if (nrm.norm() < 1e-12) nrm = (b - a).cross(c - a);
            nrm.normalize();
            maps.mask[side].at(0, y, x) = 1;
            for (int k = 0; k < 3; ++k) {
              maps.position[side].at(k, y, x) = f32r(pos[k]);
              maps.texture[side].at(k, y, x) = f32r(std::clamp(col[k], 0.0, 1.0));
              maps.normal[side].at(k, y, x) = nrm[k];
            }
          }
      }
      // Normals are renormalized after float rounding so they stay unit to 1e-7.
      for (int y = 0; y < r; ++y)
        for (int x = 0; x < r; ++x)
          if (maps.mask[side].at(0, y, x)) {
            Vec3d n(maps.normal[side].at(0, y, x), maps.normal[side].at(1, y, x), maps.normal[side].at(2, y, x));
            n.normalize();
            for (int k = 0; k < 3; ++k) maps.normal[side].at(k, y, x) = f32r(n[k]);
          }
    }
  });
  return maps;
}

Eigen::MatrixXd pixel_weights(const CanonicalMapSet& maps, const SkinningField& skinning) {
  std::vector<Vec3d> pts;
  for (const auto& p : maps.valid_pixels()) pts.push_back(maps.pos(p));
  return skinning.query(pts);
}

PosedPositionMaps pose_maps(const CanonicalMapSet& maps, const SkinningField& skinning, const Skeleton& skel,
                            const PoseParams& pose, const std::vector<double>& reference_beta) {
  return pose_maps(maps, pixel_weights(maps, skinning), skel, pose, reference_beta);
}

PosedPositionMaps pose_maps(const CanonicalMapSet& maps, const Eigen::MatrixXd& weights, const Skeleton& skel,
                            const PoseParams& pose, const std::vector<double>& reference_beta) {
  const auto pixels = maps.valid_pixels();
  if (weights.rows() != static_cast<Eigen::Index>(pixels.size()) || weights.cols() != skel.size())
    throw ShapeError("pixel weight matrix does not match maps/skeleton");
  PoseParams local = pose;
  local.root_rotation.setZero();
  local.root_translation.setZero();
  const auto bones = bone_transforms(skel, local, reference_beta);
  PosedPositionMaps out;
  for (int s = 0; s < 2; ++s) out.position[s] = ImageD(maps.resolution, maps.resolution, 3);
  parallel_for(static_cast<std::int64_t>(pixels.size()), [&](std::int64_t b, std::int64_t e) {
    for (auto i = b; i < e; ++i) {
      const auto& p = pixels[i];
      const Vec3d x = deform_point<double>(maps.pos(p), lbs_blend(weights.row(i).transpose(), bones));
      for (int k = 0; k < 3; ++k) out.position[p.side].at(k, p.y, p.x) = f32r(x[k]);
    }
  });
  return out;
}

void base_surfel(const Vec3d& normal, double texel, const DecodeOptions& opts, Quatd& q, Vec3d& s) {
  const Vec3d n = normal.normalized();
  Vec3d ta = Vec3d::UnitZ() - n.z() * n;
  if (ta.norm() < 1e-6) ta = Vec3d::UnitX() - n.x() * n;
  ta.normalize();
  const Vec3d tb = n.cross(ta);
  Mat3d r;
  r << ta, tb, n;
  q = Quatd(r);
  if (q.w() < 0) q.coeffs() = -q.coeffs();
  const double k = opts.scale_factor * texel;
  s = Vec3d(k / std::max(std::abs(n.z()), opts.grazing_floor), k, opts.thin_factor * texel);
}

std::vector<Gaussian3D> extract_gaussians(std::span<const float> gmap, const CanonicalMapSet& maps,
                                          const DecodeOptions& opts) {
  check_gmap(gmap, maps);
  const auto pixels = maps.valid_pixels();
  const size_t plane = size_t(maps.resolution) * maps.resolution;
  std::vector<Gaussian3D> out(pixels.size());
  parallel_for(static_cast<std::int64_t>(pixels.size()), [&](std::int64_t b, std::int64_t e) {
    for (auto i = b; i < e; ++i) {
      const auto& p = pixels[i];
      const size_t off = size_t(p.y) * maps.resolution + p.x;
      auto ch = [&](int c) { return static_cast<double>(gmap[(size_t(p.side) * kGaussianChannels + c) * plane + off]); };
      Quatd qb;
      Vec3d sb;
      base_surfel(maps.nrm(p), maps.texel(), opts, qb, sb);
      auto& g = out[i];
      const Vec3d xc = maps.pos(p), cc = maps.color(p);
      for (int k = 0; k < 3; ++k) {
        g.x[k] = xc[k] + ch(kChDx + k);
        g.c[k] = std::clamp(cc[k] + ch(kChDc + k), 0.0, 1.0);
        g.s[k] = std::clamp(sb[k] * std::exp(ch(kChLogScale + k)), opts.min_scale, opts.max_scale);
      }
      g.q = Quatd(qb.w() + ch(kChQ), qb.x() + ch(kChQ + 1), qb.y() + ch(kChQ + 2), qb.z() + ch(kChQ + 3));
      if (g.q.norm() < 1e-12) throw NumericalError("decoded quaternion vanished at a gaussian map pixel");
      g.q.normalize();
      g.o = sigmoid(ch(kChOpacity));
    }
  });
  return out;
}

std::vector<float> extract_gaussians_backward(std::span<const float> gmap, const CanonicalMapSet& maps,
                                              const std::vector<GaussianGrad>& grads, const DecodeOptions& opts) {
  check_gmap(gmap, maps);
  const auto pixels = maps.valid_pixels();
  if (grads.size() != pixels.size()) throw ShapeError("gradient count does not match valid pixel count");
  const size_t plane = size_t(maps.resolution) * maps.resolution;
  std::vector<float> out(gmap.size(), 0.0f);
  parallel_for(static_cast<std::int64_t>(pixels.size()), [&](std::int64_t b, std::int64_t e) {
    for (auto i = b; i < e; ++i) {
      const auto& p = pixels[i];
      const size_t off = size_t(p.y) * maps.resolution + p.x;
      auto idx = [&](int c) { return (size_t(p.side) * kGaussianChannels + c) * plane + off; };
      auto ch = [&](int c) { return static_cast<double>(gmap[idx(c)]); };
      const auto& g = grads[i];
      Quatd qb;
      Vec3d sb;
      base_surfel(maps.nrm(p), maps.texel(), opts, qb, sb);
      const Vec3d cc = maps.color(p);
      for (int k = 0; k < 3; ++k) {
        out[idx(kChDx + k)] = static_cast<float>(g.x[k]);
        const double craw = cc[k] + ch(kChDc + k);
        out[idx(kChDc + k)] = (craw >= 0.0 && craw <= 1.0) ? static_cast<float>(g.c[k]) : 0.0f;
        const double sraw = sb[k] * std::exp(ch(kChLogScale + k));
        out[idx(kChLogScale + k)] =
            (sraw >= opts.min_scale && sraw <= opts.max_scale) ? static_cast<float>(g.s[k] * sraw) : 0.0f;
      }
      // Through q = v/|v|, v = q_base + q_raw. Idempotent when g.q is already
      // tangent to the unit sphere, as the renderer's gradient is.
      const Eigen::Vector4d v(qb.w() + ch(kChQ), qb.x() + ch(kChQ + 1), qb.y() + ch(kChQ + 2), qb.z() + ch(kChQ + 3));
      const Eigen::Vector4d u = v.normalized();
      const Eigen::Vector4d dv = (g.q - u * u.dot(g.q)) / v.norm();
      for (int k = 0; k < 4; ++k) out[idx(kChQ + k)] = static_cast<float>(dv[k]);
      const double o = sigmoid(ch(kChOpacity));
      out[idx(kChOpacity)] = static_cast<float>(g.o * o * (1.0 - o));
    }
  });
  return out;
}

void save_maps(const std::filesystem::path& path, const CanonicalMapSet& maps) {
  ByteWriter w;
  w.raw(kMagic, 8);
  w.u32(1);
  w.u32(static_cast<std::uint32_t>(maps.resolution));
  w.f64(maps.framing.extent);
  w.f64(maps.framing.center.x());
  w.f64(maps.framing.center.y());
  w.str("front,back");
  for (int s = 0; s < 2; ++s) {
    w.raw(maps.mask[s].data.data(), maps.mask[s].data.size());
    for (const ImageD* img : {&maps.position[s], &maps.texture[s], &maps.normal[s]})
      for (double v : img->data) w.f32(static_cast<float>(v));
  }
  write_file_bytes(path, w.bytes);
}

CanonicalMapSet load_maps(const std::filesystem::path& path) {
  const auto bytes = read_file_bytes(path);
  ByteReader r(bytes);
  char m[8];
  r.raw(m, 8);
  if (std::memcmp(m, kMagic, 8) != 0) throw DataError("bad magic in map file " + path.string());
  if (r.u32() != 1) throw DataError("unsupported map file version");
  const int res = static_cast<int>(r.u32());
  if (res < 1 || res > 8192) throw DataError("implausible map resolution");
  MapFraming fr;
  fr.extent = r.f64();
  fr.center.x() = r.f64();
  fr.center.y() = r.f64();
  if (r.str() != "front,back") throw DataError("unexpected side order in map file");
  auto maps = empty_maps(res, fr);
  for (int s = 0; s < 2; ++s) {
    r.raw(maps.mask[s].data.data(), maps.mask[s].data.size());
    for (ImageD* img : {&maps.position[s], &maps.texture[s], &maps.normal[s]})
      for (double& v : img->data) v = r.f32();
  }
  if (!r.done()) throw DataError("trailing bytes in map file");
  return maps;
}

void export_texture_png(const std::filesystem::path& path, const CanonicalMapSet& maps) {
  const int r = maps.resolution;
  Image img(2 * r, r, 3);
  for (int s = 0; s < 2; ++s)
    for (int k = 0; k < 3; ++k)
      for (int y = 0; y < r; ++y)
        for (int x = 0; x < r; ++x) img.at(k, y, s * r + x) = static_cast<float>(maps.texture[s].at(k, y, x));
  write_png(path, img);
}

}  // namespace avatar
