#pragma once

// The Gaussian primitive and the derivative of its covariance factorization.

#include <vector>

#include "avatar/common.hpp"
#include "avatar/geometry.hpp"

namespace avatar {

struct Gaussian3D {
  Vec3d x = Vec3d::Zero();
  Quatd q = Quatd::Identity();
  Vec3d s = Vec3d::Constant(0.01);
  double o = 0.5;
  Vec3d c = Vec3d::Zero();

  Mat3d covariance() const { return build_covariance<double>(q, s); }
};

/// Throws NumericalError naming the first Gaussian with a non-finite
/// attribute; DataError for a zero quaternion or non-positive scale.
void validate_gaussians(const std::vector<Gaussian3D>& g);

struct GaussianGrad {
  Vec3d x = Vec3d::Zero();
  Eigen::Vector4d q = Eigen::Vector4d::Zero();  // (w, x, y, z), w.r.t. the unnormalized q
  Vec3d s = Vec3d::Zero();
  double o = 0.0;
  Vec3d c = Vec3d::Zero();
};

/// dL/dR for R = rotation(q / |q|) pulled back to the raw quaternion (w,x,y,z).
Eigen::Vector4d rotation_grad_to_quat(const Quatd& q, const Mat3d& dl_dr);

/// Given dL/dSigma (any 3x3; symmetrized internally) for Sigma = R S S^T R^T,
/// accumulates dL/dq and dL/ds.
void covariance_backward(const Quatd& q, const Vec3d& s, const Mat3d& dl_dsigma, Eigen::Vector4d& dq, Vec3d& ds);

}  // namespace avatar
