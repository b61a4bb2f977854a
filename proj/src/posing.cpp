#include "avatar/posing.hpp"

#include "avatar/common.hpp"

namespace avatar {

namespace {

void check_rows(const std::vector<Gaussian3D>& g, const Eigen::MatrixXd& w, const BoneTransforms& bones) {
  if (w.rows() != static_cast<Eigen::Index>(g.size()) || w.cols() != static_cast<Eigen::Index>(bones.size()))
    throw ShapeError("posing: weights must be gaussians x bones");
}

}  // namespace

std::vector<Splat> pose_gaussians(const std::vector<Gaussian3D>& gaussians, const Eigen::MatrixXd& weights,
                                  const BoneTransforms& bones) {
  check_rows(gaussians, weights, bones);
  std::vector<Splat> out(gaussians.size());
  parallel_for(static_cast<std::int64_t>(gaussians.size()), [&](std::int64_t b, std::int64_t e) {
    for (auto i = b; i < e; ++i) {
      const Mat4d t = lbs_blend(weights.row(i).transpose(), bones);
      const Mat3d a = t.topLeftCorner<3, 3>();
      const auto& g = gaussians[i];
      out[i].mean = a * g.x + t.topRightCorner<3, 1>();
      out[i].cov = a * g.covariance() * a.transpose();
      out[i].opacity = g.o;
      out[i].color = g.c;
    }
  });
  return out;
}

PosingGrad pose_gaussians_backward(const std::vector<Gaussian3D>& gaussians, const Eigen::MatrixXd& weights,
                                   const BoneTransforms& bones, const std::vector<SplatGrad>& grads, bool want_bones) {
  check_rows(gaussians, weights, bones);
  if (grads.size() != gaussians.size()) throw ShapeError("posing: one gradient per gaussian required");
  PosingGrad out;
  out.gaussians.resize(gaussians.size());
  const int nb = static_cast<int>(bones.size());
  const int chunks = parallel_chunks(static_cast<std::int64_t>(gaussians.size()));
  std::vector<std::vector<Mat4d>> partial(want_bones ? chunks : 0, std::vector<Mat4d>(nb, Mat4d::Zero()));
  parallel_for_chunks(static_cast<std::int64_t>(gaussians.size()), [&](int chunk, std::int64_t b, std::int64_t e) {
    for (auto i = b; i < e; ++i) {
      const Mat4d t = lbs_blend(weights.row(i).transpose(), bones);
      const Mat3d a = t.topLeftCorner<3, 3>();
      const auto& g = gaussians[i];
      const auto& d = grads[i];
      const Mat3d cov = g.covariance();
      auto& o = out.gaussians[i];
      o.x = a.transpose() * d.mean;
      o.o = d.opacity;
      o.c = d.color;
      const Mat3d dcov = a.transpose() * d.cov * a;
      o.q.setZero();
      o.s.setZero();
      covariance_backward(g.q, g.s, dcov, o.q, o.s);
      if (want_bones) {
        Mat4d dt = Mat4d::Zero();
        dt.topLeftCorner<3, 3>() = d.mean * g.x.transpose() + (d.cov + d.cov.transpose()) * a * cov;
        dt.topRightCorner<3, 1>() = d.mean;
        for (int j = 0; j < nb; ++j)
          if (weights(i, j) != 0.0) partial[chunk][j] += weights(i, j) * dt;
      }
    }
  });
  if (want_bones) {
    out.bones.assign(nb, Mat4d::Zero());
    for (const auto& p : partial)
      for (int j = 0; j < nb; ++j) out.bones[j] += p[j];
  }
  return out;
}

PoseGrad bone_grad_to_pose(const Skeleton& skel, const PoseParams& pose, const std::vector<double>& reference_beta,
                           const std::vector<Mat4d>& d_bones, bool with_beta, double eps) {
  const int n = skel.size();
  if (static_cast<int>(d_bones.size()) != n) throw ShapeError("bone gradient count does not match skeleton");
  auto objective = [&](const PoseParams& p) {
    const auto b = bone_transforms(skel, p, reference_beta);
    double s = 0;
    for (int j = 0; j < n; ++j) s += (b[j].array() * d_bones[j].array()).sum();
    return s;
  };
  auto central = [&](auto&& perturb) {
    PoseParams p = pose, m = pose;
    perturb(p, eps);
    perturb(m, -eps);
    return (objective(p) - objective(m)) / (2 * eps);
  };
  PoseGrad g;
  g.theta.assign(n, Vec3d::Zero());
  for (int j = 0; j < n; ++j)
    for (int k = 0; k < 3; ++k) g.theta[j][k] = central([&](PoseParams& p, double h) { p.theta[j][k] += h; });
  for (int k = 0; k < 3; ++k) {
    g.root_rotation[k] = central([&](PoseParams& p, double h) { p.root_rotation[k] += h; });
    g.root_translation[k] = central([&](PoseParams& p, double h) { p.root_translation[k] += h; });
  }
  if (with_beta) {
    g.beta.assign(n, 0.0);
    for (int j = 0; j < n; ++j) g.beta[j] = central([&](PoseParams& p, double h) { p.beta[j] += h; });
  }
  return g;
}

}  // namespace avatar
