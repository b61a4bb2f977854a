#include "avatar/inpainting.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <random>

#include "avatar/common.hpp"
#include "avatar/geometry.hpp"
#include "avatar/mesh_render.hpp"
#include "avatar/ops.hpp"
#include "avatar/optim.hpp"

namespace avatar {

int VisibilityMask::count(int side) const {
  int n = 0;
  for (auto v : vis[side].data) n += v != 0;
  return n;
}

VisibilityMask empty_visibility(int resolution) {
  VisibilityMask m;
  m.resolution = resolution;
  for (auto& v : m.vis) v = PlanarImage<std::uint8_t>(resolution, resolution, 1);
  return m;
}

VisibilityMask full_visibility(const CanonicalMapSet& maps) {
  VisibilityMask m;
  m.resolution = maps.resolution;
  m.vis = maps.mask;
  for (auto& v : m.vis)
    for (auto& b : v.data) b = b ? 1 : 0;
  return m;
}

VisibilityMask visibility_mask(const CanonicalMapSet& maps, const Eigen::MatrixXd& pixel_weights,
                               const TexturedTemplate& mesh, const SkinningField& mesh_skinning, const Skeleton& skel,
                               const std::vector<PoseParams>& poses, const std::vector<Camera>& cameras,
                               const std::vector<double>& reference_beta, const VisibilityOptions& opts) {
  auto out = empty_visibility(maps.resolution);
  if (poses.empty()) return out;
  if (cameras.size() != poses.size() && cameras.size() != 1)
    throw ShapeError("visibility: need one camera per pose or a single camera");
  if (mesh_skinning.weights.rows() != mesh.vertex_count()) throw ShapeError("visibility: skinning does not match mesh");
  const auto px = maps.valid_pixels();
  if (pixel_weights.rows() != static_cast<Eigen::Index>(px.size())) throw ShapeError("visibility: pixel weights");

  std::vector<Vec3d> verts(mesh.vertices.size());
  std::vector<Vec3d> pts(px.size());
  for (size_t f = 0; f < poses.size(); ++f) {
    const auto& cam = cameras.size() == 1 ? cameras[0] : cameras[f];
    const auto bones = bone_transforms(skel, poses[f], reference_beta);
    parallel_for(mesh.vertex_count(), [&](std::int64_t b, std::int64_t e) {
      for (auto i = b; i < e; ++i)
        verts[i] = deform_point<double>(mesh.vertices[i], lbs_blend(mesh_skinning.weights.row(i).transpose(), bones));
    });
    const auto zb = render_face_ids(verts, mesh.faces, cam, opts.near);
    parallel_for(static_cast<std::int64_t>(px.size()), [&](std::int64_t b, std::int64_t e) {
      for (auto i = b; i < e; ++i) {
        const auto& p = px[i];
        if (out.vis[p.side].at(0, p.y, p.x)) continue;
        const Vec3d x = deform_point<double>(maps.pos(p), lbs_blend(pixel_weights.row(i).transpose(), bones));
        const Vec3d v = cam.to_view(x);
        if (v.z() <= opts.near) continue;
        const Vec2d uv = cam.project(x);
        const int u = static_cast<int>(std::floor(uv.x())), w = static_cast<int>(std::floor(uv.y()));
        if (u < 0 || w < 0 || u >= cam.width || w >= cam.height) continue;
        // Background under a surface point happens only at the silhouette.
        const double z = zb.depth[size_t(w) * cam.width + u];
        if (v.z() <= z + opts.depth_tolerance) out.vis[p.side].at(0, p.y, p.x) = 1;
      }
    });
  }
  return out;
}

VisibilityMask random_visibility(const CanonicalMapSet& maps, const Eigen::MatrixXd& pixel_weights,
                                 const TexturedTemplate& mesh, const SkinningField& mesh_skinning, const Skeleton& skel,
                                 std::uint64_t seed, int max_cameras, const std::vector<double>& reference_beta) {
  if (max_cameras < 1) throw ConfigError("random_visibility: max_cameras must be >= 1");
  std::mt19937_64 rng(mix_seed(seed, 0x715));
  const int n = std::uniform_int_distribution<int>(1, max_cameras)(rng);
  std::uniform_real_distribution<double> az(0.0, 2.0 * kPi), el(-0.3, 0.6);
  std::vector<Camera> cams;
  const Vec3d target(0.0, -0.05, 0.0);
  for (int i = 0; i < n; ++i) {
    const double a = az(rng), e = el(rng);
    const Vec3d eye = target + 3.0 * Vec3d(std::sin(a) * std::cos(e), std::sin(e), std::cos(a) * std::cos(e));
    cams.push_back(Camera::look_at(eye, target, Vec3d::UnitY(), 330.0, 256, 256));
  }
  PoseParams cano = PoseParams::canonical(skel, reference_beta.empty() ? std::vector<double>(skel.size(), 1.0)
                                                                          : reference_beta);
  return visibility_mask(maps, pixel_weights, mesh, mesh_skinning, skel, std::vector<PoseParams>(n, cano), cams,
                         reference_beta);
}

// ---- DDPM ----

void DDPMConfig::validate() const {
  if (timesteps < 10) throw ConfigError("ddpm: timesteps must be >= 10");
  if (!(beta_start > 0) || !(beta_end < 1) || !(beta_start < beta_end)) throw ConfigError("ddpm: need 0 < beta_start < beta_end < 1");
  if (resolution < 8) throw ConfigError("ddpm: resolution too small");
  UNetConfig{kDenoiserInputChannels, 6, levels, base_width, max_width}.validate();
  if (resolution % (1 << (levels - 1)) != 0) throw ConfigError("ddpm: resolution must be divisible by 2^(levels-1)");
}

std::vector<double> DDPMConfig::betas() const {
  std::vector<double> b(timesteps);
  for (int t = 0; t < timesteps; ++t) b[t] = beta_start + (beta_end - beta_start) * t / (timesteps - 1);
  return b;
}

namespace {

UNetConfig denoiser_unet(const DDPMConfig& c) { return {kDenoiserInputChannels, 6, c.levels, c.base_width, c.max_width}; }

struct Schedule {
  std::vector<double> beta, alpha, abar;
  explicit Schedule(const DDPMConfig& c) : beta(c.betas()) {
    double a = 1.0;
    for (double b : beta) {
      alpha.push_back(1.0 - b);
      a *= 1.0 - b;
      abar.push_back(a);
    }
  }
};

// Texture at the denoiser resolution, in [-1, 1], with validity and
// knownness per low-res texel. A low-res texel is valid if any of its
// sub-texels is, and known if every valid sub-texel is visible.
struct LowRes {
  int r = 0;
  std::vector<float> x0;       // 6 x r x r, zero where invalid
  std::vector<float> valid;    // 2 x r x r
  std::vector<float> known;    // 2 x r x r
  std::vector<float> known_x;  // 6 x r x r, x0 on known texels, zero elsewhere
};

LowRes downsample(const CanonicalMapSet& maps, const VisibilityMask& vis, int r) {
  const int R = maps.resolution;
  if (R % r != 0) throw ConfigError("inpainting: map resolution " + std::to_string(R) + " is not a multiple of " + std::to_string(r));
  const int f = R / r;
  LowRes lr;
  lr.r = r;
  const size_t plane = size_t(r) * r;
  lr.x0.assign(6 * plane, 0.0f);
  lr.valid.assign(2 * plane, 0.0f);
  lr.known.assign(2 * plane, 0.0f);
  lr.known_x.assign(6 * plane, 0.0f);
  for (int s = 0; s < 2; ++s)
    for (int y = 0; y < r; ++y)
      for (int x = 0; x < r; ++x) {
        int nv = 0, nk = 0;
        Vec3d sum_all = Vec3d::Zero(), sum_known = Vec3d::Zero();
        for (int dy = 0; dy < f; ++dy)
          for (int dx = 0; dx < f; ++dx) {
            const int yy = y * f + dy, xx = x * f + dx;
            if (!maps.valid(s, yy, xx)) continue;
            const Vec3d c = maps.color({s, yy, xx});
            ++nv;
            sum_all += c;
            if (vis.at(s, yy, xx)) {
              ++nk;
              sum_known += c;
            }
          }
        if (nv == 0) continue;
        const size_t o = size_t(y) * r + x;
        lr.valid[s * plane + o] = 1.0f;
        const bool known = nk == nv;
        lr.known[s * plane + o] = known ? 1.0f : 0.0f;
        const Vec3d c = (known ? sum_known : sum_all) / nv;
        for (int k = 0; k < 3; ++k) {
          lr.x0[(s * 3 + k) * plane + o] = static_cast<float>(2.0 * c[k] - 1.0);
          if (known) lr.known_x[(s * 3 + k) * plane + o] = static_cast<float>(2.0 * c[k] - 1.0);
        }
      }
  return lr;
}

Tensor denoiser_input(const LowRes& lr, const std::vector<float>& xt, int t, int T) {
  const size_t plane = size_t(lr.r) * lr.r;
  std::vector<float> in(kDenoiserInputChannels * plane);
  std::copy(xt.begin(), xt.end(), in.begin());
  std::copy(lr.known_x.begin(), lr.known_x.end(), in.begin() + 6 * plane);
  std::copy(lr.known.begin(), lr.known.end(), in.begin() + 12 * plane);
  std::copy(lr.valid.begin(), lr.valid.end(), in.begin() + 14 * plane);
  const double tau = (t + 0.5) / T;
  for (int k = 0; k < kDenoiserTimeChannels / 2; ++k) {
    const double w = kPi * (1 << k) * tau;
    std::fill_n(in.begin() + (16 + 2 * k) * plane, plane, static_cast<float>(std::sin(w)));
    std::fill_n(in.begin() + (17 + 2 * k) * plane, plane, static_cast<float>(std::cos(w)));
  }
  return Tensor::from({1, kDenoiserInputChannels, lr.r, lr.r}, std::move(in));
}

}  // namespace

DenoiserWeights init_denoiser(const DDPMConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  return {cfg, init_unet(denoiser_unet(cfg), seed)};
}

void save_denoiser(const std::filesystem::path& path, const DenoiserWeights& w) {
  const auto& c = w.config;
  nlohmann::json meta{{"kind", "denoiser"},   {"timesteps", c.timesteps}, {"beta_start", c.beta_start},
                      {"beta_end", c.beta_end}, {"resolution", c.resolution}, {"levels", c.levels},
                      {"base_width", c.base_width}, {"max_width", c.max_width}};
  save_checkpoint(path, {meta.dump(), w.params});
}

DenoiserWeights load_denoiser(const std::filesystem::path& path) {
  auto ck = load_checkpoint(path);
  DDPMConfig c;
  try {
    const auto m = nlohmann::json::parse(ck.metadata);
    if (m.at("kind") != "denoiser") throw DataError("checkpoint " + path.string() + " is not an inpainting denoiser");
    c.timesteps = m.at("timesteps");
    c.beta_start = m.at("beta_start");
    c.beta_end = m.at("beta_end");
    c.resolution = m.at("resolution");
    c.levels = m.at("levels");
    c.base_width = m.at("base_width");
    c.max_width = m.at("max_width");
  } catch (const nlohmann::json::exception& e) {
    throw DataError("bad denoiser checkpoint metadata in " + path.string() + ": " + e.what());
  }
  auto w = init_denoiser(c, 0);
  if (w.params.size() != ck.tensors.size()) throw DataError("denoiser checkpoint has the wrong parameter count");
  assign_parameters(w.params, ck.tensors);
  return w;
}

InpainterTrainResult train_inpainter(const std::vector<InpaintExample>& data, const DDPMConfig& ddpm,
                                     const InpainterTrainConfig& cfg, const DenoiserWeights* init,
                                     const std::function<void(int, double)>& progress) {
  ddpm.validate();
  if (data.size() < 2) throw DataError("train_inpainter: need at least two identities");
  for (const auto& d : data)
    if (d.masks.empty()) throw DataError("train_inpainter: every identity needs at least one mask");
  InpainterTrainResult res;
  res.weights = init ? DenoiserWeights{init->config, {}} : init_denoiser(ddpm, cfg.seed);
  if (init)
    for (const auto& t : init->params) {
      const auto v = t.tensor.values();
      res.weights.params.push_back({t.name, Tensor::from(t.tensor.shape(), {v.begin(), v.end()}, true)});
    }
  const auto& dc = res.weights.config;
  const Schedule sch(dc);
  const auto unet = denoiser_unet(dc);
  std::mt19937_64 rng(mix_seed(cfg.seed, 0xD1FF));
  std::normal_distribution<float> normal;
  auto params = tensors_of(res.weights.params);
  AdamState adam;
  // Low-res views are cached per (identity, mask).
  std::vector<std::vector<LowRes>> cache(data.size());
  for (size_t i = 0; i < data.size(); ++i)
    for (const auto& m : data[i].masks) cache[i].push_back(downsample(data[i].maps, m, dc.resolution));
  const size_t plane = size_t(dc.resolution) * dc.resolution;

  for (int step = 0; step < cfg.iterations; ++step) {
    const size_t id = std::uniform_int_distribution<size_t>(0, data.size() - 1)(rng);
    const size_t mi = std::uniform_int_distribution<size_t>(0, cache[id].size() - 1)(rng);
    const int t = std::uniform_int_distribution<int>(0, dc.timesteps - 1)(rng);
    const LowRes& lr = cache[id][mi];
    std::vector<float> eps(6 * plane), xt(6 * plane, 0.0f), g(6 * plane, 0.0f);
    for (auto& e : eps) e = normal(rng);
    const double sa = std::sqrt(sch.abar[t]), sb = std::sqrt(1.0 - sch.abar[t]);
    size_t n = 0;
    for (int c = 0; c < 6; ++c)
      for (size_t i = 0; i < plane; ++i) {
        const size_t at = c * plane + i;
        if (lr.valid[(c / 3) * plane + i] == 0.0f) continue;
        xt[at] = static_cast<float>(sa * lr.x0[at] + sb * eps[at]);
        n += lr.known[(c / 3) * plane + i] == 0.0f;
      }
    const auto out = unet_forward(unet, res.weights.params, denoiser_input(lr, xt, t, dc.timesteps));
    const auto pred = out.values();
    double loss = 0;
    for (int c = 0; c < 6; ++c)
      for (size_t i = 0; i < plane; ++i) {
        const size_t s = (c / 3) * plane + i;
        if (lr.valid[s] == 0.0f || lr.known[s] != 0.0f) continue;
        const double d = pred[c * plane + i] - eps[c * plane + i];
        loss += d * d;
        g[c * plane + i] = static_cast<float>(2.0 * d / n);
      }
    loss = n ? loss / n : 0.0;
    if (!std::isfinite(loss))
      throw NumericalError("non-finite inpainting loss at step " + std::to_string(step) + " (identity " +
                           std::to_string(id) + ", t=" + std::to_string(t) + ")");
    zero_grad(params);
    if (n) {
      backward(ops::dot_const(out, g));
      if (cfg.grad_clip > 0) clip_grad_norm(params, cfg.grad_clip);
      AdamConfig ac;
      // Linear warmup, then cosine decay to a tenth.
      double lr = cfg.lr;
      if (step < cfg.warmup_steps) {
        lr *= (step + 1.0) / cfg.warmup_steps;
      } else {
        const double u = double(step - cfg.warmup_steps) / std::max(1, cfg.iterations - cfg.warmup_steps);
        lr *= 0.1 + 0.45 * (1.0 + std::cos(kPi * u));
      }
      ac.lr = static_cast<float>(lr);
      adam_step(params, adam, ac);
    }
    res.curve.push_back(loss);
    if (progress) progress(step, loss);
  }
  return res;
}

TexturePair mean_color_fill(const CanonicalMapSet& maps, const VisibilityMask& vis) {
  Vec3d sum = Vec3d::Zero();
  int n = 0;
  for (const auto& p : maps.valid_pixels())
    if (vis.at(p.side, p.y, p.x)) {
      sum += maps.color(p);
      ++n;
    }
  const Vec3d mean = n ? Vec3d(sum / n) : Vec3d::Constant(0.5);
  TexturePair out{ImageD(maps.resolution, maps.resolution, 3), ImageD(maps.resolution, maps.resolution, 3)};
  for (const auto& p : maps.valid_pixels()) {
    const Vec3d c = vis.at(p.side, p.y, p.x) ? maps.color(p) : mean;
    for (int k = 0; k < 3; ++k) out[p.side].at(k, p.y, p.x) = c[k];
  }
  return out;
}

double masked_region_mse(const TexturePair& a, const TexturePair& b, const CanonicalMapSet& maps,
                         const VisibilityMask& vis) {
  double s = 0;
  size_t n = 0;
  for (const auto& p : maps.valid_pixels()) {
    if (vis.at(p.side, p.y, p.x)) continue;
    for (int k = 0; k < 3; ++k) {
      const double d = a[p.side].at(k, p.y, p.x) - b[p.side].at(k, p.y, p.x);
      s += d * d;
    }
    n += 3;
  }
  return n ? s / n : 0.0;
}

TexturePair inpaint(const CanonicalMapSet& maps, const VisibilityMask& vis, const DenoiserWeights& w,
                    std::uint64_t seed) {
  if (vis.resolution != maps.resolution) throw ShapeError("inpaint: visibility and maps differ in resolution");
  const int R = maps.resolution;
  TexturePair out{ImageD(R, R, 3), ImageD(R, R, 3)};
  bool complete = true;
  for (const auto& p : maps.valid_pixels()) {
    if (vis.at(p.side, p.y, p.x))
      for (int k = 0; k < 3; ++k) out[p.side].at(k, p.y, p.x) = maps.texture[p.side].at(k, p.y, p.x);
    else
      complete = false;
  }
  if (complete) return out;

  const auto& dc = w.config;
  const Schedule sch(dc);
  const auto unet = denoiser_unet(dc);
  const LowRes lr = downsample(maps, vis, dc.resolution);
  const int r = lr.r;
  const size_t plane = size_t(r) * r;
  std::mt19937_64 rng(mix_seed(seed, 0x1A9A));
  std::normal_distribution<double> normal;
  std::vector<float> x(6 * plane, 0.0f);
  auto active = [&](int c, size_t i) { return lr.valid[(c / 3) * plane + i] != 0.0f; };
  auto known = [&](int c, size_t i) { return lr.known[(c / 3) * plane + i] != 0.0f; };
  // With T=100 the linear schedule keeps sqrt(abar_T) ~ 0.6 of the signal,
  // so x_T is drawn around the mean seen color rather than from N(0, I).
  Vec3d mean = Vec3d::Zero();
  int nk = 0;
  for (size_t i = 0; i < plane; ++i)
    for (int s = 0; s < 2; ++s)
      if (active(3 * s, i) && known(3 * s, i)) {
        for (int k = 0; k < 3; ++k) mean[k] += lr.x0[(3 * s + k) * plane + i];
        ++nk;
      }
  if (nk) mean /= nk;
  {
    const int t = dc.timesteps - 1;
    const double sa = std::sqrt(sch.abar[t]), sb = std::sqrt(1.0 - sch.abar[t]);
    for (int c = 0; c < 6; ++c)
      for (size_t i = 0; i < plane; ++i)
        if (active(c, i)) x[c * plane + i] = static_cast<float>(sa * mean[c % 3] + sb * normal(rng));
  }
  std::vector<float> x0_pred(6 * plane, 0.0f);
  for (int t = dc.timesteps - 1; t >= 0; --t) {
    // Known-region replacement: the visible part is the forward-noised truth.
    const double sa = std::sqrt(sch.abar[t]), sb = std::sqrt(1.0 - sch.abar[t]);
    for (int c = 0; c < 6; ++c)
      for (size_t i = 0; i < plane; ++i)
        if (active(c, i) && known(c, i)) x[c * plane + i] = static_cast<float>(sa * lr.x0[c * plane + i] + sb * normal(rng));
    const auto eps = unet_forward(unet, w.params, denoiser_input(lr, x, t, dc.timesteps)).values();
    const double abar_prev = t > 0 ? sch.abar[t - 1] : 1.0;
    const double c0 = std::sqrt(abar_prev) * sch.beta[t] / (1.0 - sch.abar[t]);
    const double ct = std::sqrt(sch.alpha[t]) * (1.0 - abar_prev) / (1.0 - sch.abar[t]);
    const double sigma = std::sqrt(sch.beta[t] * (1.0 - abar_prev) / (1.0 - sch.abar[t]));
    for (int c = 0; c < 6; ++c)
      for (size_t i = 0; i < plane; ++i) {
        const size_t at = c * plane + i;
        if (!active(c, i)) continue;
        const double x0 = std::clamp((x[at] - sb * eps[at]) / sa, -1.0, 1.0);
        x0_pred[at] = static_cast<float>(x0);
        double next = c0 * x0 + ct * x[at];
        if (t > 0) next += sigma * normal(rng);
        x[at] = static_cast<float>(next);
      }
  }

  // Back to map resolution: bilinear over valid low-res texels, then a
  // feather band pulling the first two unseen texels toward nearby seen ones.
  const int f = R / r;
  auto lowres = [&](int s, int k, int y, int xx, double& wsum) {
    y = std::clamp(y, 0, r - 1);
    xx = std::clamp(xx, 0, r - 1);
    const size_t i = size_t(y) * r + xx;
    if (lr.valid[s * plane + i] == 0.0f) return 0.0;
    wsum += 1.0;
    return 0.5 * (double(x0_pred[(s * 3 + k) * plane + i]) + 1.0);
  };
  for (const auto& p : maps.valid_pixels()) {
    if (vis.at(p.side, p.y, p.x)) continue;
    const double fy = (p.y + 0.5) / f - 0.5, fx = (p.x + 0.5) / f - 0.5;
    const int y0 = static_cast<int>(std::floor(fy)), x0 = static_cast<int>(std::floor(fx));
    const double ay = fy - y0, ax = fx - x0;
    Vec3d fill;
    for (int k = 0; k < 3; ++k) {
      double acc = 0, wacc = 0;
      const double wts[4] = {(1 - ay) * (1 - ax), (1 - ay) * ax, ay * (1 - ax), ay * ax};
      const int dy[4] = {0, 0, 1, 1}, dx[4] = {0, 1, 0, 1};
      for (int q = 0; q < 4; ++q) {
        double hit = 0;
        const double v = lowres(p.side, k, y0 + dy[q], x0 + dx[q], hit);
        acc += wts[q] * v;
        wacc += wts[q] * hit;
      }
      fill[k] = wacc > 0 ? acc / wacc : 0.5;
    }
    // Distance (chessboard) to the nearest seen texel, up to 2.
    int dist = 3;
    Vec3d seen = Vec3d::Zero();
    int nseen = 0;
    for (int d = 1; d <= 2 && dist == 3; ++d)
      for (int yy = p.y - d; yy <= p.y + d; ++yy)
        for (int xx = p.x - d; xx <= p.x + d; ++xx) {
          if (yy < 0 || xx < 0 || yy >= R || xx >= R) continue;
          if (!maps.valid(p.side, yy, xx) || !vis.at(p.side, yy, xx)) continue;
          dist = d;
          seen += maps.color({p.side, yy, xx});
          ++nseen;
        }
    if (nseen) {
      const double a = (3.0 - dist) / 3.0;
      fill = (1 - a) * fill + a * seen / nseen;
    }
    for (int k = 0; k < 3; ++k) out[p.side].at(k, p.y, p.x) = std::clamp(fill[k], 0.0, 1.0);
  }
  return out;
}

}  // namespace avatar
