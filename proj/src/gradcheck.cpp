#include "avatar/gradcheck.hpp"

#include <cmath>
#include <random>

#include "avatar/common.hpp"
#include "avatar/ops.hpp"

namespace avatar {

namespace {

double weighted_sum(const Tensor& out, const std::vector<double>& r) {
  double acc = 0.0;
  for (size_t i = 0; i < r.size(); ++i) acc += r[i] * out.values()[i];
  return acc;
}

Tensor random_tensor(Shape shape, std::mt19937_64& rng, float lo = -1.0f, float hi = 1.0f, float min_abs = 0.0f) {
  std::uniform_real_distribution<float> u(lo, hi);
  std::vector<float> v(shape_numel(shape));
  for (auto& x : v) {
    do {
      x = u(rng);
    } while (std::abs(x) < min_abs);
  }
  return Tensor::from(std::move(shape), std::move(v), true);
}

}  // namespace

double tensor_grad_error(const TensorFn& f, const std::vector<Tensor>& inputs, double eps, std::uint64_t seed) {
  std::vector<Tensor> leaves;
  for (const auto& t : inputs) leaves.push_back(Tensor::from(t.shape(), {t.values().begin(), t.values().end()}, true));

  Tensor out = f(leaves);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<double> r(out.numel());
  for (auto& x : r) x = u(rng);
  std::vector<float> rf(r.begin(), r.end());
  for (auto& x : r) x = static_cast<float>(x);  // same weights on both paths
  backward(ops::dot_const(out, rf));

  double worst = 0.0;
  for (size_t k = 0; k < leaves.size(); ++k) {
    const auto analytic = leaves[k].grad();
    double diff2 = 0.0, a2 = 0.0, n2 = 0.0;
    for (std::int64_t i = 0; i < leaves[k].numel(); ++i) {
      auto probe = [&](double delta) {
        std::vector<Tensor> p;
        for (size_t j = 0; j < leaves.size(); ++j) {
          std::vector<float> v(leaves[j].values().begin(), leaves[j].values().end());
          if (j == k) v[i] = static_cast<float>(v[i] + delta);
          p.push_back(Tensor::from(leaves[j].shape(), std::move(v), false));
        }
        const float actual = p[k].values()[i];
        return std::pair<double, double>{weighted_sum(f(p), r), actual};
      };
      const auto [fp, xp] = probe(eps);
      const auto [fm, xm] = probe(-eps);
      const double numeric = (fp - fm) / (xp - xm);
      const double a = analytic[i];
      diff2 += (a - numeric) * (a - numeric);
      a2 += a * a;
      n2 += numeric * numeric;
    }
    const double denom = std::max({std::sqrt(a2), std::sqrt(n2), 1e-12});
    worst = std::max(worst, std::sqrt(diff2) / denom);
  }
  return worst;
}

std::vector<GradCheckResult> tensor_gradcheck_suite(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  constexpr double kTol = 1e-3;
  std::vector<GradCheckResult> results;
  auto check = [&](const std::string& name, const TensorFn& f, const std::vector<Tensor>& in) {
    results.push_back({name, tensor_grad_error(f, in, 1e-3, rng()), kTol});
  };

  check("conv2d", [](const auto& t) { return ops::conv2d(t[0], t[1], 1, 1); },
        {random_tensor({1, 2, 5, 5}, rng), random_tensor({3, 2, 3, 3}, rng)});
  check("conv2d_stride2", [](const auto& t) { return ops::conv2d(t[0], t[1], 2, 1); },
        {random_tensor({1, 2, 6, 6}, rng), random_tensor({2, 2, 3, 3}, rng)});
  check("add_bias", [](const auto& t) { return ops::add_bias(t[0], t[1]); },
        {random_tensor({1, 3, 4, 4}, rng), random_tensor({3}, rng)});
  check("upsample2x", [](const auto& t) { return ops::upsample2x(t[0]); }, {random_tensor({1, 2, 3, 3}, rng)});
  check("avgpool2x", [](const auto& t) { return ops::avgpool2x(t[0]); }, {random_tensor({1, 2, 4, 4}, rng)});
  check("concat_channels", [](const auto& t) { return ops::concat_channels({t[0], t[1]}); },
        {random_tensor({1, 1, 3, 3}, rng), random_tensor({1, 2, 3, 3}, rng)});
  check("leaky_relu", [](const auto& t) { return ops::leaky_relu(t[0]); },
        {random_tensor({1, 2, 4, 4}, rng, -1.0f, 1.0f, 0.01f)});
  check("sigmoid", [](const auto& t) { return ops::sigmoid(t[0]); }, {random_tensor({1, 2, 4, 4}, rng, -3, 3)});
  check("tanh", [](const auto& t) { return ops::tanh(t[0]); }, {random_tensor({1, 2, 4, 4}, rng, -2, 2)});
  check("instance_norm", [](const auto& t) { return ops::instance_norm(t[0]); },
        {random_tensor({1, 2, 4, 4}, rng, -2, 2)});
  check("add", [](const auto& t) { return ops::add(t[0], t[1]); },
        {random_tensor({2, 3}, rng), random_tensor({2, 3}, rng)});
  check("mul", [](const auto& t) { return ops::mul(t[0], t[1]); },
        {random_tensor({2, 3}, rng), random_tensor({2, 3}, rng)});
  check("mse", [](const auto& t) { return ops::mse(t[0], t[1]); },
        {random_tensor({1, 2, 3, 3}, rng), random_tensor({1, 2, 3, 3}, rng)});
  {
    // l1 is kinked at a == b; keep the pair well separated.
    auto a = random_tensor({1, 2, 3, 3}, rng, 0.1f, 1.0f);
    auto b = random_tensor({1, 2, 3, 3}, rng, -1.0f, -0.1f);
    check("l1", [](const auto& t) { return ops::l1(t[0], t[1]); }, {a, b});
  }
  check("conv_net_2layer",
        [](const auto& t) {
          auto h = ops::leaky_relu(ops::add_bias(ops::conv2d(t[0], t[1], 1, 1), t[2]));
          return ops::conv2d(h, t[3], 1, 1);
        },
        {random_tensor({1, 2, 6, 6}, rng), random_tensor({3, 2, 3, 3}, rng), random_tensor({3}, rng),
         random_tensor({2, 3, 3, 3}, rng)});
  return results;
}

SplatScene random_splat_scene(std::uint64_t seed, int n, int size) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::normal_distribution<double> nd;
  SplatScene sc;
  sc.camera.fx = sc.camera.fy = 1.2 * size;
  sc.camera.cx = sc.camera.cy = 0.5 * size;
  sc.camera.width = sc.camera.height = size;
  for (int i = 0; i < n; ++i) {
    Gaussian3D g;
    g.x = Vec3d(-0.5 + u(rng), -0.5 + u(rng), 2.0 + 2.0 * u(rng));
    g.q = Quatd(nd(rng), nd(rng), nd(rng), nd(rng)).normalized();
    g.s = Vec3d(0.04 + 0.2 * u(rng), 0.04 + 0.2 * u(rng), 0.04 + 0.2 * u(rng));
    g.o = 0.2 + 0.6 * u(rng);
    g.c = Vec3d(0.05 + 0.9 * u(rng), 0.05 + 0.9 * u(rng), 0.05 + 0.9 * u(rng));
    sc.gaussians.push_back(g);
  }
  return sc;
}

double splat_grad_error(const SplatScene& scene, std::uint64_t seed, double eps) {
  const auto& cam = scene.camera;
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  ImageD r_rgb(cam.width, cam.height, 3), r_a(cam.width, cam.height, 1);
  for (auto& v : r_rgb.data) v = u(rng);
  for (auto& v : r_a.data) v = u(rng);
  auto loss = [&](const std::vector<Gaussian3D>& g) {
    const auto rt = rasterize(g, cam);
    double l = 0.0;
    for (size_t i = 0; i < r_rgb.data.size(); ++i) l += r_rgb.data[i] * rt.rgb.data[i];
    for (size_t i = 0; i < r_a.data.size(); ++i) l += r_a.data[i] * rt.alpha.data[i];
    return l;
  };
  RenderRecord rec;
  rasterize(scene.gaussians, cam, {}, &rec);
  const auto grads = rasterize_backward(scene.gaussians, cam, rec, r_rgb, &r_a);

  // 14 scalar attributes per Gaussian: x(3) q(4) s(3) o(1) c(3).
  auto attr = [](Gaussian3D& g, int k) -> double& {
    if (k < 3) return g.x[k];
    if (k == 3) return g.q.w();
    if (k < 7) return g.q.coeffs()[k - 4];  // Eigen stores (x, y, z, w)
    if (k < 10) return g.s[k - 7];
    if (k == 10) return g.o;
    return g.c[k - 11];
  };
  auto grad_of = [](const GaussianGrad& g, int k) {
    if (k < 3) return g.x[k];
    if (k < 7) return g.q[k - 3];
    if (k < 10) return g.s[k - 7];
    if (k == 10) return g.o;
    return g.c[k - 11];
  };
  double diff2 = 0, a2 = 0, n2 = 0;
  for (size_t i = 0; i < scene.gaussians.size(); ++i)
    for (int k = 0; k < 14; ++k) {
      auto p = scene.gaussians, m = scene.gaussians;
      attr(p[i], k) += eps;
      attr(m[i], k) -= eps;
      const double numeric = (loss(p) - loss(m)) / (2 * eps);
      const double analytic = grad_of(grads[i], k);
      diff2 += (numeric - analytic) * (numeric - analytic);
      a2 += analytic * analytic;
      n2 += numeric * numeric;
    }
  return std::sqrt(diff2) / std::max({std::sqrt(a2), std::sqrt(n2), 1e-12});
}

std::vector<GradCheckResult> splat_gradcheck_suite(int scenes, std::uint64_t seed) {
  std::vector<GradCheckResult> out;
  for (int s = 0; s < scenes; ++s) {
    const auto scene = random_splat_scene(seed * 1000 + s, 5, 16);
    out.push_back({"rasterize_scene_" + std::to_string(s), splat_grad_error(scene, seed + s), 1e-2});
  }
  return out;
}

}  // namespace avatar
