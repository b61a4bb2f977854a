#pragma once

// Small rigid-body and Gaussian-covariance helpers, templated on the scalar
// type so the same expressions serve float data and double-precision checks.

#include <Eigen/Core>
#include <Eigen/Geometry>
#include <cmath>
#include <numbers>

#include "avatar/common.hpp"

namespace avatar {

/// Rotation matrix of q / |q| (w, x, y, z convention of Eigen::Quaternion).
template <typename Scalar>
Mat3<Scalar> quat_to_rotation(const Eigen::Quaternion<Scalar>& q) {
  return q.normalized().toRotationMatrix();
}

/// Sigma = R diag(s) diag(s)^T R^T.
template <typename Scalar>
Mat3<Scalar> build_covariance(const Eigen::Quaternion<Scalar>& q, const Vec3<Scalar>& s) {
  const Mat3<Scalar> rs = quat_to_rotation(q) * s.asDiagonal();
  return rs * rs.transpose();
}

/// Rotation of an axis-angle vector (angle = norm, radians).
template <typename Scalar>
Mat3<Scalar> axis_angle_to_matrix(const Vec3<Scalar>& v) {
  const Scalar angle = v.norm();
  if (angle < Scalar(1e-12)) return Mat3<Scalar>::Identity();
  return Eigen::AngleAxis<Scalar>(angle, v / angle).toRotationMatrix();
}

template <typename Scalar>
Vec3<Scalar> matrix_to_axis_angle(const Mat3<Scalar>& r) {
  Eigen::AngleAxis<Scalar> aa(r);
  return aa.axis() * aa.angle();
}

/// Equivalent axis-angle with magnitude strictly below pi.
template <typename Scalar>
Vec3<Scalar> canonicalize_axis_angle(const Vec3<Scalar>& v) {
  constexpr Scalar pi = std::numbers::pi_v<Scalar>;
  const Scalar angle = v.norm();
  if (angle < pi) return v;
  Scalar a = std::fmod(angle, Scalar(2) * pi);
  const Vec3<Scalar> axis = v / angle;
  if (a >= pi) return axis * (a - Scalar(2) * pi);
  return axis * a;
}

/// Geodesic angle between two rotations, in [0, pi].
template <typename Scalar>
Scalar rotation_geodesic(const Mat3<Scalar>& a, const Mat3<Scalar>& b) {
  const Eigen::Quaternion<Scalar> qa(a), qb(b);
  const Scalar d = std::min(Scalar(1), std::abs(qa.dot(qb)));
  return Scalar(2) * std::acos(d);
}

/// x_d = T x_c for a homogeneous 4x4 transform.
template <typename Scalar>
Vec3<Scalar> deform_point(const Vec3<Scalar>& x, const Mat4<Scalar>& t) {
  return t.template topLeftCorner<3, 3>() * x + t.template topRightCorner<3, 1>();
}

/// Sigma_d = T_{1:3} Sigma_c T_{1:3}^T.
template <typename Scalar>
Mat3<Scalar> deform_cov(const Mat3<Scalar>& sigma, const Mat4<Scalar>& t) {
  const Mat3<Scalar> a = t.template topLeftCorner<3, 3>();
  return a * sigma * a.transpose();
}

/// Homogeneous transform [s R | p].
template <typename Scalar>
Mat4<Scalar> make_transform(const Mat3<Scalar>& r, const Vec3<Scalar>& p, Scalar scale = Scalar(1)) {
  Mat4<Scalar> t = Mat4<Scalar>::Identity();
  t.template topLeftCorner<3, 3>() = scale * r;
  t.template topRightCorner<3, 1>() = p;
  return t;
}

}  // namespace avatar
