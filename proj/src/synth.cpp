#include "avatar/synth.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include "avatar/binary_io.hpp"
#include "avatar/common.hpp"
#include "avatar/geometry.hpp"

namespace avatar {

namespace {

using json = nlohmann::json;
double lattice(std::uint64_t seed, int x, int y, int z) {
  const std::uint64_t h =
      mix_seed(seed, (std::uint64_t(std::uint32_t(x)) << 42) ^ (std::uint64_t(std::uint32_t(y)) << 21) ^ std::uint32_t(z));
  return static_cast<double>(h >> 11) * (1.0 / 9007199254740992.0);
}

// Smooth value noise in [0, 1].
double value_noise(std::uint64_t seed, const Vec3d& p) {
  const Vec3d f = p.array().floor();
  const int x0 = static_cast<int>(f.x()), y0 = static_cast<int>(f.y()), z0 = static_cast<int>(f.z());
  Vec3d t = p - f;
  t = t.array() * t.array() * (3.0 - 2.0 * t.array());
  double acc = 0.0;
  for (int c = 0; c < 8; ++c) {
    const int dx = c & 1, dy = (c >> 1) & 1, dz = (c >> 2) & 1;
    const double w = (dx ? t.x() : 1 - t.x()) * (dy ? t.y() : 1 - t.y()) * (dz ? t.z() : 1 - t.z());
    acc += w * lattice(seed, x0 + dx, y0 + dy, z0 + dz);
  }
  return acc;
}

enum Part { kTorso, kHead, kUpperArmL, kUpperArmR, kForearmL, kForearmR, kThighL, kThighR, kShinL, kShinR };

Vec3d paint(const ProceduralBodySpec& s, int part, const Vec3d& p, const Vec3d& head_center) {
  if (part == kHead) {
    // Hair on the top and back of the head.
    const Vec3d d = p - head_center;
    const bool hair = d.y() > 0.035 || (d.z() < -0.02 && d.y() > -0.05);
    return hair ? Vec3d(0.15, 0.1, 0.07) + 0.3 * s.accent.cwiseProduct(Vec3d(0.2, 0.15, 0.1)) : s.skin;
  }
  if (part == kForearmL || part == kForearmR) return s.skin;
  const bool upper = part == kTorso || part == kUpperArmL || part == kUpperArmR;
  const Vec3d base = upper ? s.shirt : s.pants;
  const double w = 2.0 * kPi / s.pattern_period;
  double f = 0.0;
  switch (s.program) {
    case TextureProgram::kStripes:
      f = 0.5 + 0.5 * std::sin(w * p.y() + s.pattern_phase);
      break;
    case TextureProgram::kChecker: {
      const double v = std::sin(w * p.x() + s.pattern_phase) * std::sin(w * p.y()) * std::cos(w * p.z());
      f = 0.5 + 0.5 * std::tanh(1.5 * v);
      break;
    }
    case TextureProgram::kBlocks:
      f = 0.5 + 0.5 * std::tanh((p.x() + 0.3 * p.z()) / 0.02 * (upper ? 1.0 : -1.0));
      break;
    case TextureProgram::kNoise:
      f = value_noise(s.seed, p / (0.5 * s.pattern_period));
      break;
  }
  return (1.0 - 0.7 * f) * base + 0.7 * f * s.accent;
}

// Capsule with elliptical cross-section (radii r1 along e1, r2 along e2)
// swept from a to b, with half-ellipsoid caps.
void add_capsule(TexturedTemplate& t, std::vector<int>& parts, int part, const Vec3d& a, const Vec3d& b, double r1,
                 double r2, const Vec3d& e1_hint, const ProceduralBodySpec& spec) {
  const Vec3d axis = (b - a).normalized();
  const double len = (b - a).norm();
  Vec3d e1 = (e1_hint - axis * axis.dot(e1_hint));
  if (e1.norm() < 1e-6) e1 = axis.unitOrthogonal();
  e1.normalize();
  const Vec3d e2 = axis.cross(e1);
  const double rc = 0.5 * (r1 + r2);
  const int n = spec.segments;
  const int ncap = std::max(3, static_cast<int>(std::ceil(0.5 * kPi * rc / spec.ring_spacing)));
  const int ncyl = std::max(1, static_cast<int>(std::ceil(len / spec.ring_spacing)));
  struct Ring {
    double along, radial;
  };
  std::vector<Ring> rings;
  for (int i = 1; i <= ncap; ++i) {
    const double al = -0.5 * kPi + 0.5 * kPi * i / ncap;
    rings.push_back({rc * std::sin(al), std::cos(al)});
  }
  for (int i = 1; i < ncyl; ++i) rings.push_back({len * i / ncyl, 1.0});
  for (int i = 0; i < ncap; ++i) {
    const double al = 0.5 * kPi * i / ncap;
    rings.push_back({len + rc * std::sin(al), std::cos(al)});
  }
  const int base = static_cast<int>(t.vertices.size());
  t.vertices.push_back(a - rc * axis);
  for (const auto& r : rings)
    for (int k = 0; k < n; ++k) {
      const double phi = 2.0 * kPi * k / n;
      t.vertices.push_back(a + r.along * axis + r.radial * (r1 * std::cos(phi) * e1 + r2 * std::sin(phi) * e2));
    }
  t.vertices.push_back(b + rc * axis);
  const int nr = static_cast<int>(rings.size());
  auto vid = [&](int ring, int k) { return base + 1 + ring * n + (k % n); };
  // Outward orientation: (e1, e2, axis) is right-handed.
  for (int k = 0; k < n; ++k) t.faces.emplace_back(base, vid(0, k + 1), vid(0, k));
  for (int r = 0; r + 1 < nr; ++r)
    for (int k = 0; k < n; ++k) {
      t.faces.emplace_back(vid(r, k), vid(r, k + 1), vid(r + 1, k + 1));
      t.faces.emplace_back(vid(r, k), vid(r + 1, k + 1), vid(r + 1, k));
    }
  const int top = base + 1 + nr * n;
  for (int k = 0; k < n; ++k) t.faces.emplace_back(top, vid(nr - 1, k), vid(nr - 1, k + 1));
  parts.resize(t.vertices.size(), part);
}

json vec_json(const Vec3d& v) { return json::array({v.x(), v.y(), v.z()}); }
Vec3d json_vec(const json& j) { return Vec3d(j.at(0).get<double>(), j.at(1).get<double>(), j.at(2).get<double>()); }

}  // namespace

void ProceduralBodySpec::validate() const {
  for (double r : {torso_rx, torso_rz, head_r, upper_arm_r, forearm_r, thigh_r, shin_r})
    if (!(r > 0.0)) throw DataError("body spec: radii must be positive");
  if (beta.size() != 17) throw ShapeError("body spec: expected 17 bone scales");
  for (double b : beta)
    if (!(b > 0.0)) throw DataError("body spec: bone scales must be positive");
  if (segments < 6 || !(ring_spacing > 0.0) || !(pattern_period > 0.0)) throw DataError("body spec: bad mesh resolution");
}

ProceduralBodySpec random_body_spec(std::uint64_t seed) {
  std::mt19937_64 rng(mix_seed(seed, 0xB0D1));
  std::uniform_real_distribution<double> u(0.0, 1.0);
  auto range = [&](double lo, double hi) { return lo + (hi - lo) * u(rng); };
  ProceduralBodySpec s;
  s.seed = seed;
  const double g = range(0.93, 1.07);
  // Joints sharing a scale: spine chain individually, limbs mirrored.
  const std::vector<std::vector<int>> groups = {{0}, {1}, {2}, {3}, {4}, {5, 8}, {6, 9}, {7, 10}, {11, 14}, {12, 15}, {13, 16}};
  for (const auto& grp : groups) {
    const double b = std::clamp(g * range(0.96, 1.04), 0.9, 1.12);
    for (int j : grp) s.beta[j] = b;
  }
  for (double* r : {&s.torso_rx, &s.torso_rz, &s.head_r, &s.upper_arm_r, &s.forearm_r, &s.thigh_r, &s.shin_r})
    *r *= range(0.87, 1.15);
  s.program = static_cast<TextureProgram>(static_cast<int>(u(rng) * 4) % 4);
  auto color = [&] { return Vec3d(range(0.08, 0.92), range(0.08, 0.92), range(0.08, 0.92)); };
  s.skin = Vec3d(range(0.45, 0.95), range(0.35, 0.75), range(0.25, 0.6));
  s.shirt = color();
  s.pants = color();
  s.accent = color();
  s.pattern_period = range(0.08, 0.16);
  s.pattern_phase = range(0.0, 2.0 * kPi);
  return s;
}

SyntheticSubject generate_subject(const ProceduralBodySpec& spec) {
  spec.validate();
  SyntheticSubject out;
  out.spec = spec;
  out.skeleton = make_body_skeleton();
  const auto& skel = out.skeleton;
  const auto f = forward_kinematics(skel, PoseParams::canonical(skel, spec.beta));
  auto p = [&](int j) { return f.position[j]; };
  auto tip = [&](int j) { return Vec3d(f.position[j] + f.rotation[j] * (spec.beta[j] * skel.joint(j).tip)); };

  TexturedTemplate& t = out.tmpl;
  std::vector<int> parts;
  const Vec3d ex = Vec3d::UnitX(), ez = Vec3d::UnitZ();
  const double bt = spec.beta[1];
  add_capsule(t, parts, kTorso, p(0) - 0.3 * (p(1) - p(0)), p(3) - Vec3d(0, 0.02, 0), spec.torso_rx * bt,
              spec.torso_rz * bt, ex, spec);
  const Vec3d hv = tip(4) - p(4);
  add_capsule(t, parts, kHead, p(4) + 0.35 * hv, p(4) + 0.6 * hv, spec.head_r * spec.beta[4], spec.head_r * spec.beta[4],
              ex, spec);
  add_capsule(t, parts, kUpperArmL, p(5), p(6), spec.upper_arm_r * spec.beta[5], spec.upper_arm_r * spec.beta[5], ez, spec);
  add_capsule(t, parts, kUpperArmR, p(8), p(9), spec.upper_arm_r * spec.beta[8], spec.upper_arm_r * spec.beta[8], ez, spec);
  add_capsule(t, parts, kForearmL, p(6), tip(7), spec.forearm_r * spec.beta[6], spec.forearm_r * spec.beta[6], ez, spec);
  add_capsule(t, parts, kForearmR, p(9), tip(10), spec.forearm_r * spec.beta[9], spec.forearm_r * spec.beta[9], ez, spec);
  add_capsule(t, parts, kThighL, p(11), p(12), spec.thigh_r * spec.beta[11], spec.thigh_r * spec.beta[11], ez, spec);
  add_capsule(t, parts, kThighR, p(14), p(15), spec.thigh_r * spec.beta[14], spec.thigh_r * spec.beta[14], ez, spec);
  const Vec3d down(0, -0.04, 0);
  add_capsule(t, parts, kShinL, p(12), p(13) + spec.beta[13] * down, spec.shin_r * spec.beta[12],
              spec.shin_r * spec.beta[12], ez, spec);
  add_capsule(t, parts, kShinR, p(15), p(16) + spec.beta[16] * down, spec.shin_r * spec.beta[15],
              spec.shin_r * spec.beta[15], ez, spec);

  const Vec3d head_center = p(4) + 0.475 * hv;
  t.colors.resize(t.vertices.size());
  for (size_t i = 0; i < t.vertices.size(); ++i) t.colors[i] = paint(spec, parts[i], t.vertices[i], head_center);
  t.normals = compute_vertex_normals(t.vertices, t.faces);
  t.bone_scale = spec.beta;
  t.validate();
  out.skinning = diffuse_skinning(t.vertices, skel, spec.beta);
  return out;
}

void pose_template(const TexturedTemplate& tmpl, const Skeleton& skel, const SkinningField& skinning,
                   const PoseParams& pose, const WrinkleOptions& wr, std::vector<Vec3d>& vertices,
                   std::vector<Vec3d>& colors) {
  pose.validate(skel);
  if (skinning.weights.rows() != tmpl.vertex_count()) throw ShapeError("skinning does not match template");
  const auto bones = bone_transforms(skel, pose, tmpl.bone_scale);
  const auto cano = forward_kinematics(skel, PoseParams::canonical(skel, tmpl.bone_scale));
  struct Crease {
    int joint, parent;
    double bend;
  };
  std::vector<Crease> creases;
  for (int j : {6, 9, 12, 15}) {
    const Mat3d rel = axis_angle_to_matrix<double>(skel.canonical_pose()[j]).transpose() *
                      axis_angle_to_matrix<double>(pose.theta[j]);
    const double ang = matrix_to_axis_angle<double>(rel).norm();
    creases.push_back({j, skel.joint(j).parent, std::min(ang, 1.5) / 1.5});
  }
  vertices.resize(tmpl.vertices.size());
  colors.resize(tmpl.vertices.size());
  parallel_for(tmpl.vertex_count(), [&](std::int64_t b, std::int64_t e) {
    for (auto i = b; i < e; ++i) {
      Vec3d v = tmpl.vertices[i];
      double shade = 1.0;
      for (const auto& c : creases) {
        if (c.bend <= 0.0) continue;
        const double w = 4.0 * skinning.weights(i, c.joint) * skinning.weights(i, c.parent);
        if (w <= 0.0) continue;
        const double r = (tmpl.vertices[i] - cano.position[c.joint]).norm();
        const double ph = 2.0 * kPi * r / wr.wavelength;
        v += wr.displacement * c.bend * w * std::sin(ph) * tmpl.normals[i];
        shade -= wr.shading * c.bend * w * (0.5 + 0.5 * std::cos(ph));
      }
      const Mat4d tr = lbs_blend(skinning.weights.row(i).transpose(), bones);
      vertices[i] = tr.topLeftCorner<3, 3>() * v + tr.topRightCorner<3, 1>();
      colors[i] = (std::max(shade, 0.0) * tmpl.colors[i]).cwiseMin(1.0).cwiseMax(0.0);
    }
  });
}

RenderTarget render_ground_truth(const TexturedTemplate& tmpl, const Skeleton& skel, const SkinningField& skinning,
                                 const PoseParams& pose, const Camera& cam, const WrinkleOptions& wr,
                                 const MeshRenderOptions& mo) {
  std::vector<Vec3d> v, c;
  pose_template(tmpl, skel, skinning, pose, wr, v, c);
  return render_mesh(v, tmpl.faces, c, cam, mo);
}

std::vector<PoseParams> random_pose_sequence(const Skeleton& skel, const std::vector<double>& beta, int frames,
                                             std::uint64_t seed, const PoseSequenceOptions& opts) {
  if (frames < 1) throw DataError("pose sequence needs at least one frame");
  std::mt19937_64 rng(mix_seed(seed, 0x5E9));
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  // Per-joint ranges (radians) about x, y, z; bends handled separately.
  const std::vector<Vec3d> range = {{0.10, 0.15, 0.10}, {0.15, 0.10, 0.10}, {0.10, 0.10, 0.10}, {0.20, 0.20, 0.10},
                                    {0.20, 0.30, 0.15}, {0.40, 0.50, 0.50}, {0.10, 0.00, 0.10}, {0.30, 0.30, 0.30},
                                    {0.40, 0.50, 0.50}, {0.10, 0.00, 0.10}, {0.30, 0.30, 0.30}, {0.60, 0.20, 0.20},
                                    {0.00, 0.05, 0.05}, {0.30, 0.10, 0.10}, {0.60, 0.20, 0.20}, {0.00, 0.05, 0.05},
                                    {0.30, 0.10, 0.10}};
  struct Bend {
    int joint, axis;
    double sign, max;
  };
  const std::vector<Bend> bends = {{6, 1, -1.0, 1.4}, {9, 1, 1.0, 1.4}, {12, 0, 1.0, 1.2}, {15, 0, 1.0, 1.2}};
  const int nj = skel.size();
  // Two harmonics per degree of freedom, 0.5-1.5 cycles over the sequence for the first.
  struct Wave {
    double amp[2], freq[2], phase[2];
  };
  auto make_wave = [&] {
    Wave w;
    for (int k = 0; k < 2; ++k) {
      w.amp[k] = (k == 0 ? 0.75 : 0.25) * u(rng);
      w.freq[k] = (k + 1) * (1.0 + 0.5 * u(rng));
      w.phase[k] = kPi * u(rng);
    }
    return w;
  };
  auto eval = [&](const Wave& w, double t) {
    double v = 0;
    for (int k = 0; k < 2; ++k) v += w.amp[k] * (std::sin(2 * kPi * w.freq[k] * t + w.phase[k]) - std::sin(w.phase[k]));
    return v;
  };
  std::vector<std::array<Wave, 3>> waves(nj);
  for (auto& jw : waves)
    for (auto& w : jw) w = make_wave();
  std::vector<Wave> bend_waves(bends.size());
  for (auto& w : bend_waves) w = make_wave();
  const Wave yaw = make_wave(), sx = make_wave(), sz = make_wave();

  std::vector<PoseParams> seq;
  const double span = std::max(1, frames - 1);
  for (int f = 0; f < frames; ++f) {
    const double t = f / span;
    PoseParams p = PoseParams::canonical(skel, beta);
    for (int j = 0; j < nj; ++j) {
      Vec3d d;
      for (int a = 0; a < 3; ++a) d[a] = opts.amplitude * range[j][a] * eval(waves[j][a], t);
      p.theta[j] += d;
    }
    for (size_t b = 0; b < bends.size(); ++b) {
      const double v = std::abs(eval(bend_waves[b], t));
      p.theta[bends[b].joint][bends[b].axis] += bends[b].sign * std::min(1.0, v) * bends[b].max * opts.amplitude;
    }
    for (auto& th : p.theta)
      if (th.norm() > 1.9) th *= 1.9 / th.norm();
    p.root_rotation = Vec3d(0, opts.root_yaw * eval(yaw, t), 0);
    p.root_translation = Vec3d(opts.root_shift * eval(sx, t), 0, opts.root_shift * eval(sz, t));
    seq.push_back(std::move(p));
  }
  return seq;
}

std::vector<Camera> camera_ring(int n, const RigOptions& o, double azimuth_offset) {
  if (n < 1) throw DataError("camera ring needs at least one camera");
  std::vector<Camera> cams;
  for (int i = 0; i < n; ++i) {
    const double az = azimuth_offset + 2.0 * kPi * i / n;
    const double el = (i % 2 == 0 ? 1.0 : -1.0) * o.elevation;
    const Vec3d eye = o.target + o.distance * Vec3d(std::sin(az) * std::cos(el), std::sin(el), std::cos(az) * std::cos(el));
    cams.push_back(Camera::look_at(eye, o.target, Vec3d::UnitY(), o.focal_factor * o.width, o.width, o.height));
  }
  return cams;
}

// ---- structured text ----

std::string poses_to_json(const std::vector<PoseParams>& poses) {
  json arr = json::array();
  for (const auto& p : poses) {
    json th = json::array();
    for (const auto& t : p.theta) th.push_back(vec_json(t));
    arr.push_back({{"theta", th}, {"beta", p.beta}, {"root_rotation", vec_json(p.root_rotation)},
                   {"root_translation", vec_json(p.root_translation)}});
  }
  return json{{"format", "avatar-poses"}, {"version", 1}, {"frames", arr}}.dump(1);
}

std::vector<PoseParams> poses_from_json(const std::string& text) {
  try {
    const auto j = json::parse(text);
    if (j.at("format") != "avatar-poses") throw DataError("not a pose file");
    std::vector<PoseParams> out;
    for (const auto& f : j.at("frames")) {
      PoseParams p;
      for (const auto& t : f.at("theta")) p.theta.push_back(json_vec(t));
      p.beta = f.at("beta").get<std::vector<double>>();
      p.root_rotation = json_vec(f.at("root_rotation"));
      p.root_translation = json_vec(f.at("root_translation"));
      out.push_back(std::move(p));
    }
    return out;
  } catch (const json::exception& e) {
    throw DataError(std::string("bad pose file: ") + e.what());
  }
}

std::string cameras_to_json(const std::vector<Camera>& cams) {
  json arr = json::array();
  for (const auto& c : cams) {
    json r = json::array();
    for (int i = 0; i < 3; ++i) r.push_back(vec_json(c.rotation.row(i).transpose()));
    arr.push_back({{"fx", c.fx}, {"fy", c.fy}, {"cx", c.cx}, {"cy", c.cy}, {"width", c.width}, {"height", c.height},
                   {"rotation", r}, {"translation", vec_json(c.translation)}});
  }
  return json{{"format", "avatar-cameras"}, {"version", 1}, {"cameras", arr}}.dump(1);
}

std::vector<Camera> cameras_from_json(const std::string& text) {
  try {
    const auto j = json::parse(text);
    if (j.at("format") != "avatar-cameras") throw DataError("not a camera file");
    std::vector<Camera> out;
    for (const auto& c : j.at("cameras")) {
      Camera cam;
      cam.fx = c.at("fx");
      cam.fy = c.at("fy");
      cam.cx = c.at("cx");
      cam.cy = c.at("cy");
      cam.width = c.at("width");
      cam.height = c.at("height");
      for (int i = 0; i < 3; ++i) cam.rotation.row(i) = json_vec(c.at("rotation").at(i)).transpose();
      cam.translation = json_vec(c.at("translation"));
      cam.validate();
      out.push_back(cam);
    }
    return out;
  } catch (const json::exception& e) {
    throw DataError(std::string("bad camera file: ") + e.what());
  }
}

RenderTarget load_rgba(const std::filesystem::path& path) {
  const Image img = read_png(path);
  if (img.channels != 4) throw DataError("expected an RGBA image: " + path.string());
  RenderTarget rt{ImageD(img.width, img.height, 3), ImageD(img.width, img.height, 1)};
  const size_t plane = img.plane();
  for (size_t i = 0; i < 3 * plane; ++i) rt.rgb.data[i] = img.data[i];
  for (size_t i = 0; i < plane; ++i) rt.alpha.data[i] = img.data[3 * plane + i];
  return rt;
}

void save_rgba(const std::filesystem::path& path, const RenderTarget& rt) {
  Image img(rt.rgb.width, rt.rgb.height, 4);
  const size_t plane = img.plane();
  for (size_t i = 0; i < 3 * plane; ++i) img.data[i] = static_cast<float>(rt.rgb.data[i]);
  for (size_t i = 0; i < plane; ++i) img.data[3 * plane + i] = static_cast<float>(rt.alpha.data[i]);
  write_png(path, img);
}

// ---- corpus ----

std::filesystem::path CorpusSubject::gt_path(int cam, int frame) const {
  char name[32];
  std::snprintf(name, sizeof name, "%04d.png", frame);
  return dir / "gt" / ("cam" + std::to_string(cam)) / name;
}

int CorpusIndex::image_count() const {
  int n = 0;
  for (const auto& s : subjects) n += static_cast<int>(s.poses.size() * s.cameras.size());
  return n;
}

namespace {

json options_json(const CorpusOptions& o) {
  return json{{"subjects", o.subjects},
              {"frames", o.frames},
              {"cameras", o.cameras},
              {"map_resolution", o.map_resolution},
              {"seed", o.seed},
              {"supersample", o.supersample},
              {"rig",
               {{"width", o.rig.width},
                {"height", o.rig.height},
                {"distance", o.rig.distance},
                {"focal_factor", o.rig.focal_factor},
                {"elevation", o.rig.elevation},
                {"target", vec_json(o.rig.target)}}},
              {"wrinkles",
               {{"displacement", o.wrinkles.displacement},
                {"shading", o.wrinkles.shading},
                {"wavelength", o.wrinkles.wavelength}}},
              {"motion",
               {{"amplitude", o.motion.amplitude}, {"root_yaw", o.motion.root_yaw}, {"root_shift", o.motion.root_shift}}}};
}

CorpusOptions options_from_json(const json& j) {
  CorpusOptions o;
  o.subjects = j.at("subjects");
  o.frames = j.at("frames");
  o.cameras = j.at("cameras");
  o.map_resolution = j.at("map_resolution");
  o.seed = j.at("seed");
  o.supersample = j.at("supersample");
  const auto& r = j.at("rig");
  o.rig.width = r.at("width");
  o.rig.height = r.at("height");
  o.rig.distance = r.at("distance");
  o.rig.focal_factor = r.at("focal_factor");
  o.rig.elevation = r.at("elevation");
  o.rig.target = json_vec(r.at("target"));
  const auto& w = j.at("wrinkles");
  o.wrinkles.displacement = w.at("displacement");
  o.wrinkles.shading = w.at("shading");
  o.wrinkles.wavelength = w.at("wavelength");
  const auto& m = j.at("motion");
  o.motion.amplitude = m.at("amplitude");
  o.motion.root_yaw = m.at("root_yaw");
  o.motion.root_shift = m.at("root_shift");
  return o;
}

std::string subject_id(int i) {
  char b[16];
  std::snprintf(b, sizeof b, "s%03d", i);
  return b;
}

}  // namespace

CorpusIndex generate_corpus(const CorpusOptions& opts, const std::filesystem::path& out_dir) {
  if (opts.subjects < 1 || opts.frames < 1 || opts.cameras < 1) throw ConfigError("corpus counts must be >= 1");
  namespace fs = std::filesystem;
  fs::create_directories(out_dir / "subjects");
  CorpusIndex index;
  index.root = out_dir;
  index.options = opts;
  json ids = json::array();
  for (int i = 0; i < opts.subjects; ++i) {
    const std::uint64_t sseed = mix_seed(opts.seed, 1000 + i);
    const auto spec = random_body_spec(sseed);
    const auto subj = generate_subject(spec);
    CorpusSubject cs;
    cs.id = subject_id(i);
    cs.dir = out_dir / "subjects" / cs.id;
    cs.skeleton = subj.skeleton;
    cs.beta = spec.beta;
    cs.poses = random_pose_sequence(subj.skeleton, spec.beta, opts.frames, sseed, opts.motion);
    std::mt19937_64 rng(mix_seed(sseed, 77));
    const double az0 = std::uniform_real_distribution<double>(0.0, 2.0 * kPi / opts.cameras)(rng);
    cs.cameras = camera_ring(opts.cameras, opts.rig, az0);
    fs::create_directories(cs.dir / "maps");

    save_template(cs.template_path(), subj.tmpl);
    save_skinning(cs.skinning_path(), subj.skinning);
    save_skeleton(cs.dir / "skeleton.json", subj.skeleton);
    write_text_file(cs.dir / "poses.json", poses_to_json(cs.poses));
    write_text_file(cs.dir / "cameras.json", cameras_to_json(cs.cameras));
    write_text_file(cs.dir / "spec.json",
                    json{{"seed", spec.seed}, {"beta", spec.beta}, {"program", static_cast<int>(spec.program)}}.dump(1));

    const auto norm = normalize_template(subj.tmpl, subj.skeleton);
    save_maps(cs.maps_path(), bake_maps(norm, opts.map_resolution));
    save_skinning(cs.maps_skinning_path(), diffuse_skinning(norm.vertices, subj.skeleton, norm.bone_scale));
    save_maps(cs.raw_maps_path(), bake_maps(subj.tmpl, opts.map_resolution));

    MeshRenderOptions mo;
    mo.supersample = opts.supersample;
    for (int c = 0; c < opts.cameras; ++c) {
      fs::create_directories(cs.gt_path(c, 0).parent_path());
      for (int f = 0; f < opts.frames; ++f)
        save_rgba(cs.gt_path(c, f),
                  render_ground_truth(subj.tmpl, subj.skeleton, subj.skinning, cs.poses[f], cs.cameras[c], opts.wrinkles, mo));
    }
    ids.push_back(cs.id);
    index.subjects.push_back(std::move(cs));
  }
  write_text_file(out_dir / "manifest.json",
                  json{{"format", "avatar-corpus"},
                       {"version", 1},
                       {"options", options_json(opts)},
                       {"subjects", ids},
                       {"layout",
                        "subjects/<id>/{template.avmesh, skinning.avskin, skeleton.json, spec.json, poses.json, "
                        "cameras.json, maps/{normalized.avmaps, normalized.avskin, raw.avmaps}, gt/cam<c>/<frame>.png}"}}
                      .dump(1));
  return index;
}

CorpusIndex load_corpus(const std::filesystem::path& root) {
  namespace fs = std::filesystem;
  CorpusIndex index;
  index.root = root;
  json man;
  try {
    man = json::parse(read_text_file(root / "manifest.json"));
    if (man.at("format") != "avatar-corpus") throw DataError("not a corpus manifest: " + root.string());
    index.options = options_from_json(man.at("options"));
  } catch (const json::exception& e) {
    throw DataError(std::string("bad corpus manifest: ") + e.what());
  }
  for (const auto& id : man.at("subjects")) {
    CorpusSubject cs;
    cs.id = id.get<std::string>();
    cs.dir = root / "subjects" / cs.id;
    cs.skeleton = load_skeleton(cs.dir / "skeleton.json");
    cs.poses = poses_from_json(read_text_file(cs.dir / "poses.json"));
    cs.cameras = cameras_from_json(read_text_file(cs.dir / "cameras.json"));
    if (cs.poses.empty() || cs.cameras.empty()) throw DataError("subject " + cs.id + " has no frames or cameras");
    cs.beta = cs.poses.front().beta;
    for (const auto& p : {cs.template_path(), cs.skinning_path(), cs.maps_path(), cs.maps_skinning_path(),
                          cs.raw_maps_path()})
      if (!fs::exists(p)) throw DataError("corpus file missing: " + p.string());
    for (size_t c = 0; c < cs.cameras.size(); ++c)
      for (size_t f = 0; f < cs.poses.size(); ++f)
        if (!fs::exists(cs.gt_path(static_cast<int>(c), static_cast<int>(f))))
          throw DataError("corpus image missing: " + cs.gt_path(static_cast<int>(c), static_cast<int>(f)).string());
    index.subjects.push_back(std::move(cs));
  }
  if (index.subjects.empty()) throw DataError("corpus has no subjects");
  return index;
}

}  // namespace avatar
