#pragma once

// Canonical Gaussians -> posed splats by linear blend skinning, and the
// reverse chain onto canonical attributes, bone transforms and pose.

#include <vector>

#include "avatar/gaussian.hpp"
#include "avatar/skeleton.hpp"
#include "avatar/splat.hpp"

namespace avatar {

/// weights: one row per Gaussian. mean' = T x, cov' = A cov A^T with
/// T = sum_j w_j B_j and A its linear part.
std::vector<Splat> pose_gaussians(const std::vector<Gaussian3D>& gaussians, const Eigen::MatrixXd& weights,
                                  const BoneTransforms& bones);

struct PosingGrad {
  std::vector<GaussianGrad> gaussians;
  std::vector<Mat4d> bones;  // dL/dB_j, empty unless requested
};

PosingGrad pose_gaussians_backward(const std::vector<Gaussian3D>& gaussians, const Eigen::MatrixXd& weights,
                                   const BoneTransforms& bones, const std::vector<SplatGrad>& grads,
                                   bool want_bones = false);

struct PoseGrad {
  std::vector<Vec3d> theta;
  std::vector<double> beta;
  Vec3d root_rotation = Vec3d::Zero();
  Vec3d root_translation = Vec3d::Zero();
};

/// Chains dL/dB_j (B = bone_transforms(skel, pose, reference_beta)) onto
/// the pose parameters by central differences of the closed-form FK.
PoseGrad bone_grad_to_pose(const Skeleton& skel, const PoseParams& pose, const std::vector<double>& reference_beta,
                           const std::vector<Mat4d>& d_bones, bool with_beta = true, double eps = 1e-6);

}  // namespace avatar
