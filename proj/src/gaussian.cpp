#include "avatar/gaussian.hpp"

#include <string>

namespace avatar {

void validate_gaussians(const std::vector<Gaussian3D>& gs) {
  for (size_t i = 0; i < gs.size(); ++i) {
    const auto& g = gs[i];
    if (!g.x.allFinite() || !g.q.coeffs().allFinite() || !g.s.allFinite() || !std::isfinite(g.o) || !g.c.allFinite())
      throw NumericalError("gaussian " + std::to_string(i) + " has a non-finite attribute");
    if (g.q.norm() < 1e-12) throw DataError("gaussian " + std::to_string(i) + " has a zero quaternion");
    if (!(g.s.minCoeff() > 0.0)) throw DataError("gaussian " + std::to_string(i) + " has a non-positive scale");
  }
}

Eigen::Vector4d rotation_grad_to_quat(const Quatd& q, const Mat3d& g) {
  const double n = q.norm();
  const double w = q.w() / n, x = q.x() / n, y = q.y() / n, z = q.z() / n;
  Eigen::Vector4d d;
  d[0] = 2 * (-z * g(0, 1) + y * g(0, 2) + z * g(1, 0) - x * g(1, 2) - y * g(2, 0) + x * g(2, 1));
  d[1] = 2 * (y * g(0, 1) + z * g(0, 2) + y * g(1, 0) - 2 * x * g(1, 1) - w * g(1, 2) + z * g(2, 0) + w * g(2, 1) -
              2 * x * g(2, 2));
  d[2] = 2 * (-2 * y * g(0, 0) + x * g(0, 1) + w * g(0, 2) + x * g(1, 0) + z * g(1, 2) - w * g(2, 0) + z * g(2, 1) -
              2 * y * g(2, 2));
  d[3] = 2 * (-2 * z * g(0, 0) - w * g(0, 1) + x * g(0, 2) + w * g(1, 0) - 2 * z * g(1, 1) + y * g(1, 2) +
              x * g(2, 0) + y * g(2, 1));
  // Through the normalization q -> q/|q|.
  const Eigen::Vector4d u(w, x, y, z);
  return (d - u * u.dot(d)) / n;
}

void covariance_backward(const Quatd& q, const Vec3d& s, const Mat3d& dl_dsigma, Eigen::Vector4d& dq, Vec3d& ds) {
  const Mat3d r = quat_to_rotation(q);
  const Mat3d m = r * s.asDiagonal();
  const Mat3d dm = (dl_dsigma + dl_dsigma.transpose()) * m;
  for (int i = 0; i < 3; ++i) ds[i] += dm.col(i).dot(r.col(i));
  dq += rotation_grad_to_quat(q, dm * s.asDiagonal());
}

}  // namespace avatar
