#include "avatar/splat.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>

#include "avatar/binary_io.hpp"

namespace avatar {

namespace {

constexpr char kSceneMagic[8] = {'A', 'V', 'S', 'C', 'E', 'N', 'E', '\n'};

struct Hasher {
  std::uint64_t h = 1469598103934665603ull;
  void bytes(const void* p, size_t n) {
    auto* c = static_cast<const unsigned char*>(p);
    for (size_t i = 0; i < n; ++i) h = (h ^ c[i]) * 1099511628211ull;
  }
  void f(double v) { bytes(&v, sizeof v); }
};

// Per-pixel contribution kept while replaying a pixel in the backward pass.
struct Contribution {
  int index;
  double alpha;
  double gauss;
  double transmittance;
  bool clamped;
  Vec2d d;
};

struct PixelAccum {
  Vec2d d_mean = Vec2d::Zero();
  Mat2d d_conic = Mat2d::Zero();
  double d_opacity = 0;
  Vec3d d_color = Vec3d::Zero();
};

}  // namespace

Vec2d Camera::project(const Vec3d& world) const {
  const Vec3d t = to_view(world);
  return Vec2d(fx * t.x() / t.z() + cx, fy * t.y() / t.z() + cy);
}

void Camera::validate() const {
  if (!(fx > 0) || !(fy > 0)) throw DataError("camera focal lengths must be positive");
  if (width <= 0 || height <= 0) throw DataError("camera image size must be positive");
  if (!rotation.allFinite() || !translation.allFinite()) throw DataError("non-finite camera extrinsics");
  if ((rotation * rotation.transpose() - Mat3d::Identity()).cwiseAbs().maxCoeff() > 1e-6 || rotation.determinant() < 0)
    throw DataError("camera rotation is not orthonormal");
}

Camera Camera::look_at(const Vec3d& eye, const Vec3d& target, const Vec3d& up, double focal, int width, int height) {
  const Vec3d f = (target - eye).normalized();
  const Vec3d right = f.cross(up).normalized();
  const Vec3d down = f.cross(right);
  Camera c;
  c.rotation.row(0) = right;
  c.rotation.row(1) = down;
  c.rotation.row(2) = f;
  c.translation = -c.rotation * eye;
  c.fx = c.fy = focal;
  c.cx = 0.5 * width;
  c.cy = 0.5 * height;
  c.width = width;
  c.height = height;
  return c;
}

Splat to_splat(const Gaussian3D& g) { return Splat{g.x, g.covariance(), g.o, g.c}; }

ScreenGaussian project(const Splat& s, const Camera& cam, const RenderOptions& opts) {
  ScreenGaussian out;
  const Vec3d t = cam.to_view(s.mean);
  out.depth = t.z();
  out.opacity = s.opacity;
  out.color = s.color;
  if (!(t.z() > opts.near)) return out;
  const double iz = 1.0 / t.z();
  Eigen::Matrix<double, 2, 3> j;
  j << cam.fx * iz, 0, -cam.fx * t.x() * iz * iz, 0, cam.fy * iz, -cam.fy * t.y() * iz * iz;
  const Eigen::Matrix<double, 2, 3> m = j * cam.rotation;
  out.mean = Vec2d(cam.fx * t.x() * iz + cam.cx, cam.fy * t.y() * iz + cam.cy);
  out.cov = m * s.cov * m.transpose();
  out.cov(0, 1) = out.cov(1, 0) = 0.5 * (out.cov(0, 1) + out.cov(1, 0));
  out.cov.diagonal().array() += opts.low_pass;
  const double det = out.cov.determinant();
  if (!(det > 0)) return out;
  out.conic << out.cov(1, 1) / det, -out.cov(0, 1) / det, -out.cov(1, 0) / det, out.cov(0, 0) / det;
  out.culled = false;
  return out;
}

std::uint64_t scene_hash(std::span<const Splat> splats, const Camera& cam, const RenderOptions& opts) {
  Hasher h;
  for (const auto& s : splats) {
    h.bytes(s.mean.data(), sizeof(double) * 3);
    h.bytes(s.cov.data(), sizeof(double) * 9);
    h.f(s.opacity);
    h.bytes(s.color.data(), sizeof(double) * 3);
  }
  for (double v : {cam.fx, cam.fy, cam.cx, cam.cy}) h.f(v);
  h.bytes(cam.rotation.data(), sizeof(double) * 9);
  h.bytes(cam.translation.data(), sizeof(double) * 3);
  h.bytes(&cam.width, sizeof(int));
  h.bytes(&cam.height, sizeof(int));
  for (double v : {opts.low_pass, opts.near, opts.alpha_max, opts.min_transmittance, opts.cutoff_sigma}) h.f(v);
  h.bytes(&opts.tile, sizeof(int));
  return h.h;
}

namespace {

void check_splats(std::span<const Splat> splats) {
  for (size_t i = 0; i < splats.size(); ++i) {
    const auto& s = splats[i];
    if (!s.mean.allFinite() || !s.cov.allFinite() || !std::isfinite(s.opacity) || !s.color.allFinite())
      throw NumericalError("gaussian " + std::to_string(i) + " has a non-finite attribute");
  }
}

RenderRecord build_record(std::span<const Splat> splats, const Camera& cam, const RenderOptions& opts) {
  if (opts.tile < 1) throw ConfigError("render tile size must be positive");
  RenderRecord rec;
  rec.scene_hash = scene_hash(splats, cam, opts);
  rec.screen.resize(splats.size());
  parallel_for(static_cast<std::int64_t>(splats.size()), [&](std::int64_t b, std::int64_t e) {
    for (auto i = b; i < e; ++i) rec.screen[i] = project(splats[i], cam, opts);
  });
  std::vector<int> order;
  order.reserve(splats.size());
  for (int i = 0; i < static_cast<int>(splats.size()); ++i)
    if (!rec.screen[i].culled) order.push_back(i);
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return rec.screen[a].depth < rec.screen[b].depth; });

  rec.tiles_x = (cam.width + opts.tile - 1) / opts.tile;
  rec.tiles_y = (cam.height + opts.tile - 1) / opts.tile;
  rec.tiles.assign(size_t(rec.tiles_x) * rec.tiles_y, {});
  const double cut = opts.cutoff_sigma;
  for (int i : order) {
    const auto& g = rec.screen[i];
    // Slightly padded so rounding never drops a pixel the per-pixel test accepts.
    const double rx = cut * std::sqrt(g.cov(0, 0)) * (1 + 1e-9) + 1e-9;
    const double ry = cut * std::sqrt(g.cov(1, 1)) * (1 + 1e-9) + 1e-9;
    const double px0 = std::ceil(g.mean.x() - rx - 0.5), px1 = std::floor(g.mean.x() + rx - 0.5);
    const double py0 = std::ceil(g.mean.y() - ry - 0.5), py1 = std::floor(g.mean.y() + ry - 0.5);
    if (px1 < 0 || py1 < 0 || px0 > cam.width - 1 || py0 > cam.height - 1 || px0 > px1 || py0 > py1) continue;
    const int tx0 = static_cast<int>(std::max(px0, 0.0)) / opts.tile;
    const int tx1 = static_cast<int>(std::min(px1, cam.width - 1.0)) / opts.tile;
    const int ty0 = static_cast<int>(std::max(py0, 0.0)) / opts.tile;
    const int ty1 = static_cast<int>(std::min(py1, cam.height - 1.0)) / opts.tile;
    for (int ty = ty0; ty <= ty1; ++ty)
      for (int tx = tx0; tx <= tx1; ++tx) rec.tiles[size_t(ty) * rec.tiles_x + tx].push_back(i);
  }
  return rec;
}

// Evaluates one Gaussian at pixel center p. Returns false outside the cutoff.
inline bool evaluate(const ScreenGaussian& g, const Vec2d& p, double cutoff2, double alpha_max, Contribution& c) {
  c.d = p - g.mean;
  const double power = c.d.x() * c.d.x() * g.conic(0, 0) + 2.0 * c.d.x() * c.d.y() * g.conic(0, 1) +
                       c.d.y() * c.d.y() * g.conic(1, 1);
  if (power > cutoff2) return false;
  c.gauss = std::exp(-0.5 * power);
  const double a = g.opacity * c.gauss;
  c.clamped = a > alpha_max;
  c.alpha = c.clamped ? alpha_max : a;
  return true;
}

}  // namespace

RenderTarget render(std::span<const Splat> splats, const Camera& cam, const RenderOptions& opts,
                    RenderRecord* record) {
  cam.validate();
  check_splats(splats);
  RenderRecord local;
  RenderRecord& rec = record ? *record : local;
  rec = build_record(splats, cam, opts);

  RenderTarget out{ImageD(cam.width, cam.height, 3), ImageD(cam.width, cam.height, 1)};
  const double cutoff2 = opts.cutoff_sigma * opts.cutoff_sigma;
  const auto ntiles = static_cast<std::int64_t>(rec.tiles.size());
  parallel_for(ntiles, [&](std::int64_t tb, std::int64_t te) {
    Contribution c;
    for (auto t = tb; t < te; ++t) {
      const int tx = static_cast<int>(t % rec.tiles_x), ty = static_cast<int>(t / rec.tiles_x);
      const auto& list = rec.tiles[t];
      for (int y = ty * opts.tile; y < std::min(cam.height, (ty + 1) * opts.tile); ++y)
        for (int x = tx * opts.tile; x < std::min(cam.width, (tx + 1) * opts.tile); ++x) {
          const Vec2d p(x + 0.5, y + 0.5);
          double tr = 1.0;
          Vec3d col = Vec3d::Zero();
          for (int i : list) {
            const auto& g = rec.screen[i];
            if (!evaluate(g, p, cutoff2, opts.alpha_max, c)) continue;
            col += g.color * (c.alpha * tr);
            tr *= 1.0 - c.alpha;
            if (tr < opts.min_transmittance) break;
          }
          for (int k = 0; k < 3; ++k) out.rgb.at(k, y, x) = col[k];
          out.alpha.at(0, y, x) = 1.0 - tr;
        }
    }
  });
  return out;
}

std::vector<SplatGrad> render_backward(std::span<const Splat> splats, const Camera& cam, const RenderRecord& rec,
                                       const ImageD& d_rgb, const ImageD* d_alpha, const RenderOptions& opts) {
  if (rec.scene_hash != scene_hash(splats, cam, opts))
    throw ContractError("render_backward called with a scene that differs from the forward pass");
  if (d_rgb.width != cam.width || d_rgb.height != cam.height || d_rgb.channels != 3)
    throw ShapeError("upstream color gradient does not match the image size");
  if (d_alpha && (d_alpha->width != cam.width || d_alpha->height != cam.height || d_alpha->channels != 1))
    throw ShapeError("upstream alpha gradient does not match the image size");

  const size_t n = splats.size();
  const double cutoff2 = opts.cutoff_sigma * opts.cutoff_sigma;
  const auto ntiles = static_cast<std::int64_t>(rec.tiles.size());
  // One accumulator per worker chunk, reduced in chunk order: deterministic
  // for a fixed thread cap.
  const int chunks = parallel_chunks(ntiles);
  std::vector<std::vector<PixelAccum>> acc(chunks);
  parallel_for_chunks(ntiles, [&](int chunk, std::int64_t tb, std::int64_t te) {
    auto& mine = acc[chunk];
    mine.assign(n, PixelAccum{});
    std::vector<Contribution> list;
    Contribution c;
    for (auto t = tb; t < te; ++t) {
      const int tx = static_cast<int>(t % rec.tiles_x), ty = static_cast<int>(t / rec.tiles_x);
      const auto& tile = rec.tiles[t];
      for (int y = ty * opts.tile; y < std::min(cam.height, (ty + 1) * opts.tile); ++y)
        for (int x = tx * opts.tile; x < std::min(cam.width, (tx + 1) * opts.tile); ++x) {
          const Vec2d p(x + 0.5, y + 0.5);
          const Vec3d gc(d_rgb.at(0, y, x), d_rgb.at(1, y, x), d_rgb.at(2, y, x));
          const double ga = d_alpha ? d_alpha->at(0, y, x) : 0.0;
          if (gc.isZero(0.0) && ga == 0.0) continue;
          list.clear();
          double tr = 1.0;
          for (int i : tile) {
            const auto& g = rec.screen[i];
            if (!evaluate(g, p, cutoff2, opts.alpha_max, c)) continue;
            c.index = i;
            c.transmittance = tr;
            list.push_back(c);
            tr *= 1.0 - c.alpha;
            if (tr < opts.min_transmittance) break;
          }
          const double t_final = tr;
          double behind = 0.0;  // gc . (color accumulated behind the current Gaussian)
          for (auto it = list.rbegin(); it != list.rend(); ++it) {
            const auto& g = rec.screen[it->index];
            auto& a = mine[it->index];
            const double cdot = gc.dot(g.color);
            a.d_color += gc * (it->alpha * it->transmittance);
            const double inv = 1.0 / (1.0 - it->alpha);
            const double d_alpha_i = it->transmittance * cdot - behind * inv + ga * t_final * inv;
            behind += cdot * it->alpha * it->transmittance;
            if (it->clamped) continue;
            a.d_opacity += d_alpha_i * it->gauss;
            const double d_power = d_alpha_i * g.opacity * it->gauss * -0.5;
            a.d_conic += d_power * (it->d * it->d.transpose());
            a.d_mean += d_power * -2.0 * (g.conic * it->d);
          }
        }
    }
  });

  std::vector<SplatGrad> out(n);
  parallel_for(static_cast<std::int64_t>(n), [&](std::int64_t b, std::int64_t e) {
    for (auto i = b; i < e; ++i) {
      const auto& g = rec.screen[i];
      if (g.culled) continue;
      PixelAccum a;
      for (const auto& part : acc)
        if (!part.empty()) {
          a.d_mean += part[i].d_mean;
          a.d_conic += part[i].d_conic;
          a.d_opacity += part[i].d_opacity;
          a.d_color += part[i].d_color;
        }
      auto& o = out[i];
      o.opacity = a.d_opacity;
      o.color = a.d_color;
      // Conic = Sigma2D^-1  =>  dSigma2D = -conic dConic conic.
      const Mat2d d_cov2 = -g.conic * a.d_conic * g.conic;
      const Vec3d t = cam.to_view(splats[i].mean);
      const double iz = 1.0 / t.z(), iz2 = iz * iz, iz3 = iz2 * iz;
      Eigen::Matrix<double, 2, 3> j;
      j << cam.fx * iz, 0, -cam.fx * t.x() * iz2, 0, cam.fy * iz, -cam.fy * t.y() * iz2;
      const Eigen::Matrix<double, 2, 3> m = j * cam.rotation;
      o.cov = m.transpose() * d_cov2 * m;
      const Mat3d v = cam.rotation * splats[i].cov * cam.rotation.transpose();
      const Eigen::Matrix<double, 2, 3> dj = (d_cov2 + d_cov2.transpose()) * j * v;
      Vec3d dt;
      dt.x() = a.d_mean.x() * cam.fx * iz + dj(0, 2) * (-cam.fx * iz2);
      dt.y() = a.d_mean.y() * cam.fy * iz + dj(1, 2) * (-cam.fy * iz2);
      dt.z() = -a.d_mean.x() * cam.fx * t.x() * iz2 - a.d_mean.y() * cam.fy * t.y() * iz2 +
               dj(0, 0) * (-cam.fx * iz2) + dj(0, 2) * (2 * cam.fx * t.x() * iz3) + dj(1, 1) * (-cam.fy * iz2) +
               dj(1, 2) * (2 * cam.fy * t.y() * iz3);
      o.mean = cam.rotation.transpose() * dt;
    }
  });
  return out;
}

RenderTarget rasterize(const std::vector<Gaussian3D>& gaussians, const Camera& cam, const RenderOptions& opts,
                       RenderRecord* record) {
  validate_gaussians(gaussians);
  std::vector<Splat> splats(gaussians.size());
  for (size_t i = 0; i < gaussians.size(); ++i) splats[i] = to_splat(gaussians[i]);
  return render(splats, cam, opts, record);
}

std::vector<GaussianGrad> rasterize_backward(const std::vector<Gaussian3D>& gaussians, const Camera& cam,
                                             const RenderRecord& record, const ImageD& d_rgb, const ImageD* d_alpha,
                                             const RenderOptions& opts) {
  std::vector<Splat> splats(gaussians.size());
  for (size_t i = 0; i < gaussians.size(); ++i) splats[i] = to_splat(gaussians[i]);
  const auto sg = render_backward(splats, cam, record, d_rgb, d_alpha, opts);
  std::vector<GaussianGrad> out(gaussians.size());
  for (size_t i = 0; i < gaussians.size(); ++i) {
    out[i].x = sg[i].mean;
    out[i].o = sg[i].opacity;
    out[i].c = sg[i].color;
    covariance_backward(gaussians[i].q, gaussians[i].s, sg[i].cov, out[i].q, out[i].s);
  }
  return out;
}

Image to_rgba(const RenderTarget& rt) {
  Image img(rt.rgb.width, rt.rgb.height, 4);
  const size_t plane = img.plane();
  for (size_t i = 0; i < 3 * plane; ++i) img.data[i] = static_cast<float>(rt.rgb.data[i]);
  for (size_t i = 0; i < plane; ++i) img.data[3 * plane + i] = static_cast<float>(rt.alpha.data[i]);
  return img;
}

void save_scene(const std::filesystem::path& path, const std::vector<Gaussian3D>& gs) {
  ByteWriter w;
  w.raw(kSceneMagic, 8);
  w.u32(1);
  w.u32(static_cast<std::uint32_t>(gs.size()));
  for (const auto& g : gs) {
    for (int k = 0; k < 3; ++k) w.f64(g.x[k]);
    for (double v : {g.q.w(), g.q.x(), g.q.y(), g.q.z()}) w.f64(v);
    for (int k = 0; k < 3; ++k) w.f64(g.s[k]);
    w.f64(g.o);
    for (int k = 0; k < 3; ++k) w.f64(g.c[k]);
  }
  write_file_bytes(path, w.bytes);
}

std::vector<Gaussian3D> load_scene(const std::filesystem::path& path) {
  const auto bytes = read_file_bytes(path);
  ByteReader r(bytes);
  char m[8];
  r.raw(m, 8);
  if (std::memcmp(m, kSceneMagic, 8) != 0) throw DataError("bad magic in scene file " + path.string());
  if (r.u32() != 1) throw DataError("unsupported scene file version");
  std::vector<Gaussian3D> gs(r.u32());
  for (auto& g : gs) {
    for (int k = 0; k < 3; ++k) g.x[k] = r.f64();
    const double w = r.f64(), x = r.f64(), y = r.f64(), z = r.f64();
    g.q = Quatd(w, x, y, z);
    for (int k = 0; k < 3; ++k) g.s[k] = r.f64();
    g.o = r.f64();
    for (int k = 0; k < 3; ++k) g.c[k] = r.f64();
  }
  if (!r.done()) throw DataError("trailing bytes in scene file");
  return gs;
}

}  // namespace avatar
