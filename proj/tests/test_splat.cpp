#include <gtest/gtest.h>

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numbers>
#include <random>

#include "avatar/gradcheck.hpp"
#include "avatar/splat.hpp"
#include "support/oracle_render.hpp"

using namespace avatar;

namespace {

Camera axis_camera(int size, double f = 50.0) {
  Camera c;
  c.fx = c.fy = f;
  c.cx = c.cy = 0.5 * size;
  c.width = c.height = size;
  return c;
}

Gaussian3D blob(const Vec3d& x, double s, double o, const Vec3d& c) {
  Gaussian3D g;
  g.x = x;
  g.s = Vec3d::Constant(s);
  g.o = o;
  g.c = c;
  return g;
}

}  // namespace

TEST(Covariance, Examples) {
  const Mat3d a = build_covariance<double>(Quatd::Identity(), Vec3d(1, 2, 3));
  EXPECT_LE((a - Mat3d(Vec3d(1, 4, 9).asDiagonal())).cwiseAbs().maxCoeff(), 1e-15);
  const Quatd rz(Eigen::AngleAxisd(std::numbers::pi / 2, Vec3d::UnitZ()));
  const Mat3d b = build_covariance<double>(rz, Vec3d(1, 2, 1));
  EXPECT_LE((b - Mat3d(Vec3d(4, 1, 1).asDiagonal())).cwiseAbs().maxCoeff(), 1e-12);

  std::mt19937_64 rng(1);
  std::normal_distribution<double> n;
  std::uniform_real_distribution<double> u(0.01, 2.0);
  for (int t = 0; t < 100; ++t) {
    const Quatd q(n(rng), n(rng), n(rng), n(rng));
    Vec3d s(u(rng), u(rng), u(rng));
    Eigen::SelfAdjointEigenSolver<Mat3d> es(build_covariance<double>(q, s));
    Vec3d s2 = s.cwiseAbs2();
    std::sort(s2.data(), s2.data() + 3);
    EXPECT_LE((es.eigenvalues() - s2).cwiseAbs().maxCoeff(), 1e-5);
  }
}

TEST(Covariance, BackwardMatchesFiniteDifferences) {
  std::mt19937_64 rng(2);
  std::normal_distribution<double> n;
  for (int t = 0; t < 20; ++t) {
    const Quatd q(n(rng), n(rng), n(rng), n(rng));
    const Vec3d s(0.5 + std::abs(n(rng)), 0.5 + std::abs(n(rng)), 0.5 + std::abs(n(rng)));
    Mat3d w;
    for (int i = 0; i < 9; ++i) w(i) = n(rng);
    auto f = [&](const Quatd& qq, const Vec3d& ss) { return (w.array() * build_covariance<double>(qq, ss).array()).sum(); };
    Eigen::Vector4d dq = Eigen::Vector4d::Zero();
    Vec3d ds = Vec3d::Zero();
    covariance_backward(q, s, w, dq, ds);
    const double h = 1e-6;
    for (int k = 0; k < 3; ++k) {
      Vec3d sp = s, sm = s;
      sp[k] += h;
      sm[k] -= h;
      EXPECT_NEAR(ds[k], (f(q, sp) - f(q, sm)) / (2 * h), 1e-6);
    }
    for (int k = 0; k < 4; ++k) {
      Eigen::Vector4d v(q.w(), q.x(), q.y(), q.z()), vp = v, vm = v;
      vp[k] += h;
      vm[k] -= h;
      const double num = (f(Quatd(vp[0], vp[1], vp[2], vp[3]), s) - f(Quatd(vm[0], vm[1], vm[2], vm[3]), s)) / (2 * h);
      EXPECT_NEAR(dq[k], num, 1e-6);
    }
  }
}

TEST(Project, OnAxisMeanAndPinholeCovariance) {
  const auto cam = axis_camera(64);
  const double sigma = 0.1, z = 2.0;
  const auto sg = project(to_splat(blob(Vec3d(0, 0, z), sigma, 0.5, Vec3d::Zero())), cam);
  ASSERT_FALSE(sg.culled);
  EXPECT_NEAR(sg.mean.x(), cam.cx, 1e-12);
  EXPECT_NEAR(sg.mean.y(), cam.cy, 1e-12);
  const double e = std::pow(cam.fx * sigma / z, 2);
  EXPECT_NEAR(sg.cov(0, 0), e + 0.3, 1e-10);
  EXPECT_NEAR(sg.cov(1, 1), std::pow(cam.fy * sigma / z, 2) + 0.3, 1e-10);
  EXPECT_NEAR(sg.cov(0, 1), 0.0, 1e-12);

  RenderOptions no_lp;
  no_lp.low_pass = 0.0;
  const auto a = project(to_splat(blob(Vec3d(0, 0, 2), sigma, 0.5, Vec3d::Zero())), cam, no_lp);
  const auto b = project(to_splat(blob(Vec3d(0, 0, 4), sigma, 0.5, Vec3d::Zero())), cam, no_lp);
  EXPECT_NEAR(std::sqrt(b.cov(0, 0)), 0.5 * std::sqrt(a.cov(0, 0)), 1e-12);
}

TEST(Project, BehindCameraIsCulled) {
  const auto cam = axis_camera(32);
  EXPECT_TRUE(project(to_splat(blob(Vec3d(0, 0, -1), 0.1, 0.5, Vec3d::Zero())), cam).culled);
  EXPECT_TRUE(project(to_splat(blob(Vec3d(0, 0, 0.05), 0.1, 0.5, Vec3d::Zero())), cam).culled);
  const auto rt = rasterize({blob(Vec3d(0, 0, -1), 0.5, 0.9, Vec3d::Ones())}, cam);
  for (double v : rt.alpha.data) EXPECT_EQ(v, 0.0);
}

TEST(Rasterize, EmptySceneIsBlack) {
  const auto rt = rasterize({}, axis_camera(20));
  for (double v : rt.rgb.data) EXPECT_EQ(v, 0.0);
  for (double v : rt.alpha.data) EXPECT_EQ(v, 0.0);
}

TEST(Rasterize, TwoLayerCompositing) {
  // Both Gaussians centered on pixel (8,8)'s center, huge so the falloff is
  // ~1 there. Front: o=0.5 red. Back: o=1 green, which the 0.99 alpha clamp
  // turns into 0.99, so the pixel is (0.5, 0.5*0.99, 0) rather than (0.5, 0.5, 0).
  Camera cam = axis_camera(16, 10.0);
  cam.cx = cam.cy = 8.5;
  const auto rt = rasterize({blob(Vec3d(0, 0, 2), 20.0, 0.5, Vec3d(1, 0, 0)), blob(Vec3d(0, 0, 3), 20.0, 1.0, Vec3d(0, 1, 0))},
                            cam);
  EXPECT_NEAR(rt.rgb.at(0, 8, 8), 0.5, 1e-9);
  EXPECT_NEAR(rt.rgb.at(1, 8, 8), 0.5 * 0.99, 1e-9);
  EXPECT_NEAR(rt.rgb.at(2, 8, 8), 0.0, 1e-12);
  EXPECT_NEAR(rt.alpha.at(0, 8, 8), 1.0 - 0.5 * 0.01, 1e-9);
}

TEST(Rasterize, MatchesBruteForceOracle) {
  for (int s = 0; s < 20; ++s) {
    const auto scene = random_splat_scene(100 + s, 50, 32);
    const auto rt = rasterize(scene.gaussians, scene.camera);
    const auto ref = testsupport::oracle_render(scene.gaussians, scene.camera);
    EXPECT_LE(testsupport::max_abs_diff(rt.rgb, ref.rgb), 1e-5) << "scene " << s;
    EXPECT_LE(testsupport::max_abs_diff(rt.alpha, ref.alpha), 1e-5) << "scene " << s;
  }
}

TEST(Rasterize, TileSizeDoesNotChangeOutput) {
  const auto scene = random_splat_scene(7, 80, 45);
  const auto a = rasterize(scene.gaussians, scene.camera);
  for (int tile : {1, 5, 16, 64}) {
    RenderOptions o;
    o.tile = tile;
    const auto b = rasterize(scene.gaussians, scene.camera, o);
    EXPECT_EQ(a.rgb.data, b.rgb.data) << "tile " << tile;
  }
}

TEST(Rasterize, NonFiniteAttributeNamesTheGaussian) {
  auto scene = random_splat_scene(3, 10, 16);
  scene.gaussians[6].c.y() = NAN;
  try {
    rasterize(scene.gaussians, scene.camera);
    FAIL() << "expected an error";
  } catch (const NumericalError& e) {
    EXPECT_NE(std::string(e.what()).find("gaussian 6"), std::string::npos);
  }
}

TEST(RasterizeProperty, AddingAGaussianNeverLowersAlpha) {
  // Up to the early-termination slack: a pixel that stops at T < 1e-4 can
  // stop one Gaussian earlier once another is added.
  for (int s = 0; s < 20; ++s) {
    auto scene = random_splat_scene(200 + s, 30, 24);
    const auto before = rasterize(scene.gaussians, scene.camera);
    scene.gaussians.push_back(random_splat_scene(900 + s, 1, 24).gaussians[0]);
    const auto after = rasterize(scene.gaussians, scene.camera);
    for (size_t i = 0; i < before.alpha.data.size(); ++i) EXPECT_GE(after.alpha.data[i], before.alpha.data[i] - 1e-4);
  }
}

TEST(RasterizeProperty, PermutationInvariantForDistinctDepths) {
  for (int s = 0; s < 10; ++s) {
    auto scene = random_splat_scene(300 + s, 40, 24);
    const auto a = rasterize(scene.gaussians, scene.camera);
    std::mt19937_64 rng(s);
    std::shuffle(scene.gaussians.begin(), scene.gaussians.end(), rng);
    const auto b = rasterize(scene.gaussians, scene.camera);
    EXPECT_EQ(a.rgb.data, b.rgb.data);
    EXPECT_EQ(a.alpha.data, b.alpha.data);
  }
}

TEST(RasterizeProperty, OutputInUnitRange) {
  for (int s = 0; s < 10; ++s) {
    auto scene = random_splat_scene(400 + s, 60, 24);
    for (auto& g : scene.gaussians) g.c = Vec3d::Ones();
    const auto rt = rasterize(scene.gaussians, scene.camera);
    for (size_t i = 0; i < rt.rgb.data.size(); ++i) {
      EXPECT_GE(rt.rgb.data[i], 0.0);
      EXPECT_LE(rt.rgb.data[i], 1.0 + 1e-12);
      EXPECT_LE(rt.rgb.data[i], rt.alpha.data[i % rt.alpha.plane()] + 1e-5);
    }
  }
}

TEST(RasterizeBackward, ColorLinearity) {
  const auto cam = axis_camera(16, 20.0);
  const std::vector<Gaussian3D> g{blob(Vec3d(0, 0, 2), 0.2, 0.6, Vec3d(0.3, 0.3, 0.3))};
  RenderRecord rec;
  rasterize(g, cam, {}, &rec);
  ImageD up(16, 16, 3);
  for (size_t i = 0; i < up.plane(); ++i) up.data[i] = 1.0;  // d(sum red)/d(image)
  const auto grads = rasterize_backward(g, cam, rec, up);
  EXPECT_GT(grads[0].c.x(), 0.0);
  EXPECT_EQ(grads[0].c.y(), 0.0);
  EXPECT_EQ(grads[0].c.z(), 0.0);
}

TEST(RasterizeBackward, FiniteDifferenceSuite) {
  for (const auto& r : splat_gradcheck_suite(10, 3)) EXPECT_LT(r.max_rel_error, r.threshold) << r.name;
}

TEST(RasterizeBackward, OccludedGaussianGetsNoColorGradient) {
  const auto cam = axis_camera(16, 20.0);
  // Front: wide, opacity 1 (clamped to 0.99 alpha) repeated to drive T below the stop threshold.
  std::vector<Gaussian3D> g;
  for (int i = 0; i < 3; ++i) g.push_back(blob(Vec3d(0, 0, 1.0 + 0.01 * i), 5.0, 1.0, Vec3d(1, 0, 0)));
  g.push_back(blob(Vec3d(0, 0, 3), 0.1, 0.8, Vec3d(0, 1, 0)));
  RenderRecord rec;
  rasterize(g, cam, {}, &rec);
  ImageD up(16, 16, 3, 1.0);
  const auto grads = rasterize_backward(g, cam, rec, up);
  EXPECT_LE(grads[3].c.norm(), 1e-12);
  EXPECT_GT(grads[0].c.norm(), 1.0);
}

TEST(RasterizeBackward, RejectsMismatchedScene) {
  auto scene = random_splat_scene(5, 5, 16);
  RenderRecord rec;
  rasterize(scene.gaussians, scene.camera, {}, &rec);
  scene.gaussians[2].x.x() += 1e-3;
  ImageD up(16, 16, 3, 1.0);
  EXPECT_THROW(rasterize_backward(scene.gaussians, scene.camera, rec, up), ContractError);
}

TEST(RasterizeBackward, ThreadCountOnlyReordersSums) {
  const auto scene = random_splat_scene(6, 60, 48);
  RenderRecord rec;
  ImageD up(48, 48, 3);
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(-1, 1);
  for (auto& v : up.data) v = u(rng);
  const int saved = max_threads();
  set_max_threads(1);
  rasterize(scene.gaussians, scene.camera, {}, &rec);
  const auto a = rasterize_backward(scene.gaussians, scene.camera, rec, up);
  set_max_threads(4);
  rasterize(scene.gaussians, scene.camera, {}, &rec);
  const auto b = rasterize_backward(scene.gaussians, scene.camera, rec, up);
  set_max_threads(saved);
  for (size_t i = 0; i < a.size(); ++i) {
    EXPECT_LE((a[i].x - b[i].x).norm(), 1e-6 * std::max(1.0, a[i].x.norm()));
    EXPECT_LE((a[i].c - b[i].c).norm(), 1e-6 * std::max(1.0, a[i].c.norm()));
  }
}

TEST(RasterizeBackward, GradientDescentOnColorConverges) {
  const auto cam = axis_camera(16, 20.0);
  std::vector<Gaussian3D> g{blob(Vec3d(0, 0, 2), 0.3, 0.9, Vec3d(0.1, 0.8, 0.2))};
  const Vec3d target_color(0.7, 0.2, 0.5);
  auto target = g;
  target[0].c = target_color;
  const auto ref = rasterize(target, cam);
  double mse = 1.0;
  int steps = 0;
  for (; steps < 200; ++steps) {
    RenderRecord rec;
    const auto rt = rasterize(g, cam, {}, &rec);
    ImageD up(16, 16, 3);
    mse = 0;
    for (size_t i = 0; i < up.data.size(); ++i) {
      const double d = rt.rgb.data[i] - ref.rgb.data[i];
      mse += d * d;
      up.data[i] = 2 * d / up.data.size();
    }
    mse /= up.data.size();
    if (mse < 1e-4) break;
    const auto gr = rasterize_backward(g, cam, rec, up);
    g[0].c = (g[0].c - 20.0 * gr[0].c).cwiseMax(0.0).cwiseMin(1.0);
  }
  EXPECT_LT(mse, 1e-4);
  EXPECT_LT(steps, 200);
}

TEST(SceneDump, RoundTrip) {
  const auto scene = random_splat_scene(11, 17, 16);
  const auto path = std::filesystem::temp_directory_path() / "avatar_scene_test.bin";
  save_scene(path, scene.gaussians);
  const auto back = load_scene(path);
  ASSERT_EQ(back.size(), scene.gaussians.size());
  for (size_t i = 0; i < back.size(); ++i) {
    EXPECT_EQ(back[i].x, scene.gaussians[i].x);
    EXPECT_EQ(back[i].q.coeffs(), scene.gaussians[i].q.coeffs());
    EXPECT_EQ(back[i].o, scene.gaussians[i].o);
  }
  std::filesystem::remove(path);
}

TEST(Camera, LookAtProjectsTargetToCenter) {
  const auto cam = Camera::look_at(Vec3d(3, 1, 2), Vec3d(0, 0.2, 0), Vec3d::UnitY(), 100, 64, 48);
  cam.validate();
  const Vec2d p = cam.project(Vec3d(0, 0.2, 0));
  EXPECT_NEAR(p.x(), 32, 1e-9);
  EXPECT_NEAR(p.y(), 24, 1e-9);
  // World up maps to image up (smaller row index).
  EXPECT_LT(cam.project(Vec3d(0, 0.5, 0)).y(), 24);
  EXPECT_LE((cam.center() - Vec3d(3, 1, 2)).norm(), 1e-12);
}
