#pragma once

// Articulated skeleton, pose parameters, forward kinematics, diffused
// skinning and linear blend skinning.
//
// Conventions
//  * Joint j owns the bone segment running from its position towards its
//    first child (or along `tip` for leaves). beta[j] scales that segment:
//    the offsets of j's children and j's tip are multiplied by beta[j], and
//    geometry attached to j is scaled by beta[j] about the joint.
//  * The joint frame G_j = [beta_j R_j | p_j] (world rotation R_j, position
//    p_j). Bone transforms are taken relative to the canonical reference
//    (canonical pose, reference bone scales): B_j = G_j(pose) G_j(ref)^-1.
//    With the default reference (all ones) the canonical pose maps to
//    identities.

#include <filesystem>
#include <string>
#include <vector>

#include "avatar/common.hpp"

namespace avatar {

struct Joint {
  std::string name;
  int parent = -1;
  Vec3d offset = Vec3d::Zero();  // rest offset from parent, meters
  Vec3d tip = Vec3d::Zero();     // segment direction*length for leaves
};

class Skeleton {
 public:
  Skeleton() = default;
  Skeleton(std::vector<Joint> joints, std::vector<Vec3d> canonical_pose);

  int size() const { return static_cast<int>(joints_.size()); }
  const std::vector<Joint>& joints() const { return joints_; }
  const Joint& joint(int j) const { return joints_.at(j); }
  int find(const std::string& name) const;
  const std::vector<Vec3d>& canonical_pose() const { return canonical_pose_; }
  const std::vector<int>& children(int j) const { return children_.at(j); }
  /// Unscaled segment vector of joint j in its local frame.
  Vec3d segment(int j) const;

 private:
  void validate() const;
  std::vector<Joint> joints_;
  std::vector<Vec3d> canonical_pose_;
  std::vector<std::vector<int>> children_;
};

/// The body skeleton used by the synthetic corpus (A-pose canonical pose).
Skeleton make_body_skeleton();

struct PoseParams {
  std::vector<Vec3d> theta;  // per-joint axis-angle, radians
  std::vector<double> beta;  // per-bone length scales, 1 = average
  Vec3d root_rotation = Vec3d::Zero();
  Vec3d root_translation = Vec3d::Zero();

  static PoseParams canonical(const Skeleton& skel);
  /// Canonical pose with the given bone scales.
  static PoseParams canonical(const Skeleton& skel, std::vector<double> beta);
  void validate(const Skeleton& skel) const;
  /// Wraps every axis-angle to magnitude < pi.
  void canonicalize();
};

using BoneTransforms = std::vector<Mat4d>;

struct JointFrames {
  std::vector<Mat3d> rotation;  // world rotation
  std::vector<Vec3d> position;  // world position
  std::vector<double> scale;    // geometry scale (beta)
  Mat4d frame(int j) const { return make_frame(j); }

 private:
  Mat4d make_frame(int j) const;
};

JointFrames forward_kinematics(const Skeleton& skel, const PoseParams& pose);

/// B_j = G_j(pose) G_j(reference)^-1, reference = canonical pose with the
/// given bone scales (empty = all ones).
BoneTransforms bone_transforms(const Skeleton& skel, const PoseParams& pose,
                               const std::vector<double>& reference_beta = {});

/// Joint positions (and leaf tips) used as keypoints.
std::vector<Vec3d> keypoints_3d(const Skeleton& skel, const PoseParams& pose);

struct SkinningOptions {
  int nearest_bones = 8;
  double bandwidth_factor = 1.5;
  int nearest_vertices = 8;
};

/// Per-vertex skinning weights plus the rule to query arbitrary points:
/// inverse-distance interpolation over the K nearest template vertices.
struct SkinningField {
  std::vector<Vec3d> vertices;
  Eigen::MatrixXd weights;  // vertices x bones, rows sum to 1
  int nearest_vertices = 8;

  int bones() const { return static_cast<int>(weights.cols()); }
  Eigen::VectorXd query(const Vec3d& p) const;
  /// Batched query, rows correspond to points.
  Eigen::MatrixXd query(const std::vector<Vec3d>& points) const;
};

/// Gaussian-RBF weights from the K nearest bone segments of the skeleton
/// posed canonically with bone scales `beta`.
SkinningField diffuse_skinning(const std::vector<Vec3d>& vertices, const Skeleton& skel,
                               const std::vector<double>& beta, const SkinningOptions& opts = {});

/// Distances from p to every bone segment (canonical pose, scales `beta`).
std::vector<double> bone_segment_distances(const Skeleton& skel, const std::vector<double>& beta, const Vec3d& p);

/// T = sum_i w_i B_i.
Mat4d lbs_blend(const Eigen::Ref<const Eigen::VectorXd>& weights, const BoneTransforms& bones);

/// Index of the frame whose pose is closest to the canonical pose (sum of
/// per-joint geodesic angles); ties keep the lowest index.
int select_keyframe(const Skeleton& skel, const std::vector<PoseParams>& sequence);
double pose_distance_to_canonical(const Skeleton& skel, const PoseParams& pose);

// Skeleton description file: JSON text
//   {"format": "avatar-skeleton", "version": 1,
//    "joints": [{"name": str, "parent": int, "offset": [x,y,z], "tip": [x,y,z]}, ...],
//    "canonical_pose": [[ax,ay,az], ...]}
std::string skeleton_to_json(const Skeleton& skel);
Skeleton skeleton_from_json(const std::string& text);
void save_skeleton(const std::filesystem::path& path, const Skeleton& skel);
Skeleton load_skeleton(const std::filesystem::path& path);

}  // namespace avatar
