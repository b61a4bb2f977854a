#include "avatar/skeleton.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <nlohmann/json.hpp>
#include <numbers>

#include "avatar/binary_io.hpp"
#include "avatar/geometry.hpp"

namespace avatar {

namespace {

Vec3d segment_world_end(const JointFrames& f, const Skeleton& skel, int j) {
  return f.position[j] + f.scale[j] * (f.rotation[j] * skel.segment(j));
}

double point_segment_distance(const Vec3d& p, const Vec3d& a, const Vec3d& b) {
  const Vec3d ab = b - a;
  const double len2 = ab.squaredNorm();
  double t = len2 > 0 ? (p - a).dot(ab) / len2 : 0.0;
  t = std::clamp(t, 0.0, 1.0);
  return (p - (a + t * ab)).norm();
}

std::vector<double> ones(int n) { return std::vector<double>(n, 1.0); }

}  // namespace

Skeleton::Skeleton(std::vector<Joint> joints, std::vector<Vec3d> canonical_pose)
    : joints_(std::move(joints)), canonical_pose_(std::move(canonical_pose)) {
  if (canonical_pose_.empty()) canonical_pose_.assign(joints_.size(), Vec3d::Zero());
  validate();
  children_.assign(joints_.size(), {});
  for (int j = 0; j < size(); ++j)
    if (joints_[j].parent >= 0) children_[joints_[j].parent].push_back(j);
}

void Skeleton::validate() const {
  if (joints_.empty()) throw DataError("skeleton has no joints");
  if (canonical_pose_.size() != joints_.size()) throw DataError("canonical pose size does not match joint count");
  int roots = 0;
  for (int j = 0; j < size(); ++j) {
    const auto& jt = joints_[j];
    if (jt.parent < 0) {
      if (jt.parent != -1) throw DataError("invalid parent sentinel for joint " + jt.name);
      ++roots;
    } else if (jt.parent >= j) {
      // Parents must precede children; with a single root this also rules out cycles.
      throw DataError("joint " + jt.name + " does not follow its parent");
    }
    if (!jt.offset.allFinite() || !jt.tip.allFinite()) throw DataError("non-finite offset for joint " + jt.name);
  }
  if (roots != 1 || joints_[0].parent != -1) throw DataError("skeleton must have exactly one root at index 0");
}

int Skeleton::find(const std::string& name) const {
  for (int j = 0; j < size(); ++j)
    if (joints_[j].name == name) return j;
  return -1;
}

Vec3d Skeleton::segment(int j) const {
  const auto& ch = children_.at(j);
  if (!ch.empty()) return joints_[ch.front()].offset;
  return joints_[j].tip;
}

Skeleton make_body_skeleton() {
  std::vector<Joint> j = {
      {"pelvis", -1, {0, 0, 0}},
      {"spine", 0, {0, 0.20, 0}},
      {"chest", 1, {0, 0.20, 0}},
      {"neck", 2, {0, 0.16, 0}},
      {"head", 3, {0, 0.08, 0}, {0, 0.22, 0}},
      {"l_shoulder", 2, {0.17, 0.12, 0}},
      {"l_elbow", 5, {0.28, 0, 0}},
      {"l_wrist", 6, {0.25, 0, 0}, {0.09, 0, 0}},
      {"r_shoulder", 2, {-0.17, 0.12, 0}},
      {"r_elbow", 8, {-0.28, 0, 0}},
      {"r_wrist", 9, {-0.25, 0, 0}, {-0.09, 0, 0}},
      {"l_hip", 0, {0.10, -0.06, 0}},
      {"l_knee", 11, {0, -0.42, 0}},
      {"l_ankle", 12, {0, -0.40, 0}, {0, -0.04, 0.09}},
      {"r_hip", 0, {-0.10, -0.06, 0}},
      {"r_knee", 14, {0, -0.42, 0}},
      {"r_ankle", 15, {0, -0.40, 0}, {0, -0.04, 0.09}},
  };
  std::vector<Vec3d> cano(j.size(), Vec3d::Zero());
  constexpr double a = std::numbers::pi / 4.0;  // arms lowered 45 degrees
  cano[5] = Vec3d(0, 0, -a);
  cano[8] = Vec3d(0, 0, a);
  return Skeleton(std::move(j), std::move(cano));
}

PoseParams PoseParams::canonical(const Skeleton& skel) { return canonical(skel, ones(skel.size())); }

PoseParams PoseParams::canonical(const Skeleton& skel, std::vector<double> beta) {
  PoseParams p;
  p.theta = skel.canonical_pose();
  p.beta = std::move(beta);
  return p;
}

void PoseParams::validate(const Skeleton& skel) const {
  if (static_cast<int>(theta.size()) != skel.size() || static_cast<int>(beta.size()) != skel.size())
    throw ShapeError("pose dimensions do not match skeleton with " + std::to_string(skel.size()) + " joints");
  for (double b : beta)
    if (!(b > 0.0) || !std::isfinite(b)) throw DataError("bone scales must be positive and finite");
  for (const auto& t : theta)
    if (!t.allFinite()) throw DataError("non-finite joint rotation");
  if (!root_rotation.allFinite() || !root_translation.allFinite()) throw DataError("non-finite root transform");
}

void PoseParams::canonicalize() {
  for (auto& t : theta) t = canonicalize_axis_angle(t);
  root_rotation = canonicalize_axis_angle(root_rotation);
}

Mat4d JointFrames::make_frame(int j) const { return make_transform(rotation[j], position[j], scale[j]); }

JointFrames forward_kinematics(const Skeleton& skel, const PoseParams& pose) {
  pose.validate(skel);
  const int n = skel.size();
  JointFrames f;
  f.rotation.resize(n);
  f.position.resize(n);
  f.scale = pose.beta;
  const Mat3d root_r = axis_angle_to_matrix(pose.root_rotation);
  for (int j = 0; j < n; ++j) {
    const auto& jt = skel.joint(j);
    const Mat3d local = axis_angle_to_matrix(pose.theta[j]);
    if (jt.parent < 0) {
      f.rotation[j] = root_r * local;
      f.position[j] = pose.root_translation + root_r * jt.offset;
    } else {
      const int p = jt.parent;
      f.rotation[j] = f.rotation[p] * local;
      f.position[j] = f.position[p] + f.rotation[p] * (pose.beta[p] * jt.offset);
    }
  }
  return f;
}

BoneTransforms bone_transforms(const Skeleton& skel, const PoseParams& pose, const std::vector<double>& reference_beta) {
  const auto posed = forward_kinematics(skel, pose);
  const auto ref = forward_kinematics(
      skel, PoseParams::canonical(skel, reference_beta.empty() ? ones(skel.size()) : reference_beta));
  BoneTransforms b(skel.size());
  for (int j = 0; j < skel.size(); ++j) {
    // G_ref^-1 = [R^T / s | -R^T p / s]
    const Mat3d rinv = ref.rotation[j].transpose() / ref.scale[j];
    Mat4d inv = make_transform<double>(rinv, -rinv * ref.position[j]);
    b[j] = posed.frame(j) * inv;
  }
  return b;
}

std::vector<Vec3d> keypoints_3d(const Skeleton& skel, const PoseParams& pose) {
  const auto f = forward_kinematics(skel, pose);
  std::vector<Vec3d> k = f.position;
  for (int j = 0; j < skel.size(); ++j)
    if (skel.children(j).empty()) k.push_back(segment_world_end(f, skel, j));
  return k;
}

std::vector<double> bone_segment_distances(const Skeleton& skel, const std::vector<double>& beta, const Vec3d& p) {
  const auto f = forward_kinematics(skel, PoseParams::canonical(skel, beta));
  std::vector<double> d(skel.size());
  for (int j = 0; j < skel.size(); ++j) d[j] = point_segment_distance(p, f.position[j], segment_world_end(f, skel, j));
  return d;
}

SkinningField diffuse_skinning(const std::vector<Vec3d>& vertices, const Skeleton& skel,
                               const std::vector<double>& beta, const SkinningOptions& opts) {
  if (vertices.empty()) throw DataError("cannot diffuse skinning over an empty template");
  Eigen::AlignedBox3d box;
  for (const auto& v : vertices) box.extend(v);
  if (box.diagonal().norm() < 1e-9) throw DataError("degenerate template: all vertices coincide");

  const int nb = skel.size();
  const auto f = forward_kinematics(skel, PoseParams::canonical(skel, beta.empty() ? ones(nb) : beta));
  std::vector<Vec3d> seg_a(nb), seg_b(nb);
  for (int j = 0; j < nb; ++j) {
    seg_a[j] = f.position[j];
    seg_b[j] = segment_world_end(f, skel, j);
  }

  const auto nv = static_cast<std::int64_t>(vertices.size());
  Eigen::MatrixXd dist(nv, nb);
  parallel_for(nv, [&](std::int64_t b, std::int64_t e) {
    for (auto i = b; i < e; ++i)
      for (int j = 0; j < nb; ++j) dist(i, j) = point_segment_distance(vertices[i], seg_a[j], seg_b[j]);
  });

  // Local bone radius: median distance of the vertices closest to each bone.
  std::vector<std::vector<double>> assigned(nb);
  for (std::int64_t i = 0; i < nv; ++i) {
    Eigen::Index j;
    dist.row(i).minCoeff(&j);
    assigned[j].push_back(dist(i, j));
  }
  std::vector<double> bandwidth(nb);
  for (int j = 0; j < nb; ++j) {
    double r = 0.05;
    auto& a = assigned[j];
    if (!a.empty()) {
      std::nth_element(a.begin(), a.begin() + a.size() / 2, a.end());
      r = std::max(a[a.size() / 2], 1e-3);
    }
    bandwidth[j] = opts.bandwidth_factor * r;
  }

  const int k = std::clamp(opts.nearest_bones, 1, nb);
  SkinningField field;
  field.vertices = vertices;
  field.nearest_vertices = opts.nearest_vertices;
  field.weights = Eigen::MatrixXd::Zero(nv, nb);
  parallel_for(nv, [&](std::int64_t b, std::int64_t e) {
    std::vector<int> idx(nb);
    for (auto i = b; i < e; ++i) {
      for (int j = 0; j < nb; ++j) idx[j] = j;
      std::partial_sort(idx.begin(), idx.begin() + k, idx.end(),
                        [&](int x, int y) { return dist(i, x) < dist(i, y) || (dist(i, x) == dist(i, y) && x < y); });
      double max_log = -std::numeric_limits<double>::infinity();
      std::vector<double> logw(k);
      for (int t = 0; t < k; ++t) {
        const int j = idx[t];
        logw[t] = -dist(i, j) * dist(i, j) / (2.0 * bandwidth[j] * bandwidth[j]);
        max_log = std::max(max_log, logw[t]);
      }
      double total = 0.0;
      for (int t = 0; t < k; ++t) total += std::exp(logw[t] - max_log);
      for (int t = 0; t < k; ++t) field.weights(i, idx[t]) = std::exp(logw[t] - max_log) / total;
    }
  });
  return field;
}

Eigen::VectorXd SkinningField::query(const Vec3d& p) const { return query(std::vector<Vec3d>{p}).row(0).transpose(); }

Eigen::MatrixXd SkinningField::query(const std::vector<Vec3d>& points) const {
  const auto np = static_cast<std::int64_t>(points.size());
  const int nv = static_cast<int>(vertices.size());
  const int k = std::clamp(nearest_vertices, 1, nv);
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(np, bones());
  parallel_for(np, [&](std::int64_t b, std::int64_t e) {
    std::vector<std::pair<double, int>> d(nv);
    for (auto i = b; i < e; ++i) {
      for (int v = 0; v < nv; ++v) d[v] = {(vertices[v] - points[i]).squaredNorm(), v};
      std::partial_sort(d.begin(), d.begin() + k, d.end());
      if (d[0].first < 1e-18) {
        out.row(i) = weights.row(d[0].second);
        continue;
      }
      double total = 0.0;
      for (int t = 0; t < k; ++t) {
        const double w = 1.0 / d[t].first;
        out.row(i) += w * weights.row(d[t].second);
        total += w;
      }
      out.row(i) /= total;
    }
  });
  return out;
}

Mat4d lbs_blend(const Eigen::Ref<const Eigen::VectorXd>& weights, const BoneTransforms& bones) {
  if (weights.size() != static_cast<Eigen::Index>(bones.size()))
    throw ShapeError("skinning weight count does not match bone count");
  Mat4d t = Mat4d::Zero();
  for (size_t i = 0; i < bones.size(); ++i)
    if (weights[i] != 0.0) t += weights[i] * bones[i];
  return t;
}

double pose_distance_to_canonical(const Skeleton& skel, const PoseParams& pose) {
  double d = 0.0;
  for (int j = 0; j < skel.size(); ++j)
    d += rotation_geodesic<double>(axis_angle_to_matrix(pose.theta[j]), axis_angle_to_matrix(skel.canonical_pose()[j]));
  return d;
}

int select_keyframe(const Skeleton& skel, const std::vector<PoseParams>& sequence) {
  if (sequence.empty()) throw DataError("select_keyframe: empty pose sequence");
  int best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (size_t i = 0; i < sequence.size(); ++i) {
    const double d = pose_distance_to_canonical(skel, sequence[i]);
    if (d < best_d) {
      best_d = d;
      best = static_cast<int>(i);
    }
  }
  return best;
}

std::string skeleton_to_json(const Skeleton& skel) {
  nlohmann::json j;
  j["format"] = "avatar-skeleton";
  j["version"] = 1;
  auto vec = [](const Vec3d& v) { return nlohmann::json::array({v.x(), v.y(), v.z()}); };
  for (const auto& jt : skel.joints())
    j["joints"].push_back({{"name", jt.name}, {"parent", jt.parent}, {"offset", vec(jt.offset)}, {"tip", vec(jt.tip)}});
  for (const auto& c : skel.canonical_pose()) j["canonical_pose"].push_back(vec(c));
  return j.dump(2);
}

Skeleton skeleton_from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const std::exception& e) {
    throw DataError(std::string("skeleton file is not valid JSON: ") + e.what());
  }
  if (j.value("format", "") != "avatar-skeleton") throw DataError("not a skeleton description file");
  if (j.value("version", 0) != 1) throw DataError("unsupported skeleton file version");
  auto vec = [](const nlohmann::json& a) {
    if (!a.is_array() || a.size() != 3) throw DataError("expected a 3-vector in skeleton file");
    return Vec3d(a[0].get<double>(), a[1].get<double>(), a[2].get<double>());
  };
  std::vector<Joint> joints;
  for (const auto& e : j.at("joints"))
    joints.push_back({e.at("name").get<std::string>(), e.at("parent").get<int>(), vec(e.at("offset")),
                      e.contains("tip") ? vec(e.at("tip")) : Vec3d::Zero()});
  std::vector<Vec3d> cano;
  if (j.contains("canonical_pose"))
    for (const auto& e : j.at("canonical_pose")) cano.push_back(vec(e));
  return Skeleton(std::move(joints), std::move(cano));
}

void save_skeleton(const std::filesystem::path& path, const Skeleton& skel) {
  write_text_file(path, skeleton_to_json(skel));
}

Skeleton load_skeleton(const std::filesystem::path& path) { return skeleton_from_json(read_text_file(path)); }

}  // namespace avatar
