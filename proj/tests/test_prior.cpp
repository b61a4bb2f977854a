#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <random>

#include "avatar/ops.hpp"
#include "avatar/prior.hpp"
#include "avatar/synth.hpp"

using namespace avatar;

namespace {

UPMConfig small_config() {
  UPMConfig c;
  c.levels = 3;
  c.base_width = 8;
  c.max_width = 32;
  return c;
}

struct Fixture {
  SyntheticSubject subject;
  CanonicalMapSet maps;
  Eigen::MatrixXd weights;
};

const Fixture& fixture() {
  static const Fixture f = [] {
    Fixture x;
    x.subject = generate_subject(random_body_spec(11));
    x.maps = bake_maps(x.subject.tmpl, 32);
    x.weights = pixel_weights(x.maps, x.subject.skinning);
    return x;
  }();
  return f;
}

PosedPositionMaps posed(const PoseParams& p) {
  const auto& f = fixture();
  return pose_maps(f.maps, f.weights, f.subject.skeleton, p, f.subject.tmpl.bone_scale);
}

void randomize_head(UPMWeights& w, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> n(0.0f, 0.1f);
  for (auto& t : w.params)
    if (t.name.rfind("head.", 0) == 0)
      for (auto& v : t.tensor.mutable_values()) v = n(rng);
}

double max_abs_diff(std::span<const float> a, std::span<const float> b) {
  double m = 0;
  for (size_t i = 0; i < a.size(); ++i) m = std::max(m, double(std::abs(a[i] - b[i])));
  return m;
}

// Independent count: two 3x3 convs per encoder level, two per decoder level
// (the first one sees the upsampled features concatenated with the skip),
// and a 1x1 head.
std::int64_t closed_form_count(int in, int out, int levels, int base, int cap) {
  auto wid = [&](int l) { return std::min(cap, base << l); };
  auto conv = [](std::int64_t ci, std::int64_t co, int k) { return ci * co * k * k + co; };
  std::int64_t n = 0;
  for (int l = 0; l < levels; ++l) n += conv(l ? wid(l - 1) : in, wid(l), 3) + conv(wid(l), wid(l), 3);
  for (int l = levels - 2; l >= 0; --l) n += conv(wid(l + 1) + wid(l), wid(l), 3) + conv(wid(l), wid(l), 3);
  return n + conv(wid(0), out, 1);
}

}  // namespace

TEST(UNet, ParameterCountMatchesClosedForm) {
  const auto w = init_upm(1);
  EXPECT_EQ(parameter_count(w.params), closed_form_count(14, 28, 4, 32, 256));
  EXPECT_EQ(parameter_count(w.params), 1950940);
  const auto s = init_upm(1, small_config());
  EXPECT_EQ(parameter_count(s.params), closed_form_count(14, 28, 3, 8, 32));
}

TEST(UNet, SeededInit) {
  const auto a = init_upm(5, small_config()), b = init_upm(5, small_config()), c = init_upm(6, small_config());
  ASSERT_EQ(a.params.size(), b.params.size());
  bool differs = false;
  for (size_t i = 0; i < a.params.size(); ++i) {
    EXPECT_EQ(max_abs_diff(a.params[i].tensor.values(), b.params[i].tensor.values()), 0.0) << a.params[i].name;
    differs |= max_abs_diff(a.params[i].tensor.values(), c.params[i].tensor.values()) > 0;
  }
  EXPECT_TRUE(differs);
}

TEST(UNet, RejectsBadShapesAndConfigs) {
  const auto cfg = small_config().unet();
  const auto p = init_unet(cfg, 1);
  EXPECT_THROW(unet_forward(cfg, p, Tensor::zeros({1, 14, 10, 12})), ShapeError);
  EXPECT_THROW(unet_forward(cfg, p, Tensor::zeros({1, 13, 16, 16})), ShapeError);
  UNetConfig bad = cfg;
  bad.levels = 2;
  EXPECT_THROW(bad.validate(), ConfigError);
  EXPECT_EQ(unet_config_from_json(unet_config_json(cfg)), cfg);
  EXPECT_THROW(unet_config_from_json("{\"levels\": 3}"), DataError);
}

TEST(Prior, ZeroHeadGivesZeroOutput) {
  const auto& f = fixture();
  const auto w = init_upm(3, small_config());
  const auto out = upm_forward(w, f.maps, posed(PoseParams::canonical(f.subject.skeleton)));
  ASSERT_EQ(out.shape(), (Shape{1, kUpmOutputChannels, 32, 32}));
  for (float v : out.values()) ASSERT_EQ(v, 0.0f);
}

TEST(Prior, InputLayout) {
  const auto& f = fixture();
  const auto p = posed(PoseParams::canonical(f.subject.skeleton));
  const auto in = upm_input(f.maps, p);
  ASSERT_EQ(in.shape(), (Shape{1, kUpmInputChannels, 32, 32}));
  const auto v = in.values();
  const size_t plane = 32 * 32;
  for (int side = 0; side < 2; ++side)
    for (int y = 0; y < 32; ++y)
      for (int x = 0; x < 32; ++x) {
        const size_t o = size_t(y) * 32 + x;
        const bool valid = f.maps.valid(side, y, x);
        EXPECT_EQ(v[(side * 7 + 6) * plane + o], valid ? 1.0f : 0.0f);
        if (valid)
          EXPECT_NEAR(v[(side * 7 + 0) * plane + o], f.maps.texture[side].at(0, y, x), 1e-6);
        else
          EXPECT_EQ(v[(side * 7 + 3) * plane + o], 0.0f);
      }
  const auto other = bake_maps(f.subject.tmpl, 16);
  EXPECT_THROW(upm_input(other, p), ShapeError);
}

TEST(Prior, DependsOnPoseAndIdentity) {
  const auto& f = fixture();
  auto w = init_upm(3, small_config());
  randomize_head(w, 9);
  const auto& skel = f.subject.skeleton;
  const auto cano = PoseParams::canonical(skel, f.subject.tmpl.bone_scale);
  auto bent = cano;
  bent.theta[skel.find("l_elbow")] += Vec3d(0, -1.0, 0);
  const auto a = upm_forward(w, f.maps, posed(cano));
  const auto b = upm_forward(w, f.maps, posed(bent));
  EXPECT_GT(max_abs_diff(a.values(), b.values()), 1e-4);
  // Root motion is not part of the conditioning.
  auto moved = cano;
  moved.root_translation = Vec3d(0.3, 0.1, -0.2);
  moved.root_rotation = Vec3d(0, 0.7, 0);
  EXPECT_EQ(max_abs_diff(a.values(), upm_forward(w, f.maps, posed(moved)).values()), 0.0);

  auto repainted = f.maps;
  for (auto& t : repainted.texture)
    for (auto& v : t.data) v = 1.0 - v;
  EXPECT_GT(max_abs_diff(a.values(), upm_forward(w, repainted, posed(cano)).values()), 1e-4);
}

TEST(Prior, ForwardIsPure) {
  const auto& f = fixture();
  auto w = init_upm(4, small_config());
  randomize_head(w, 2);
  const auto p = posed(PoseParams::canonical(f.subject.skeleton));
  const auto a = upm_forward(w, f.maps, p);
  const auto b = upm_forward(w, f.maps, p);
  EXPECT_EQ(max_abs_diff(a.values(), b.values()), 0.0);
}

TEST(Prior, GradientReachesParameters) {
  const auto& f = fixture();
  auto w = init_upm(4, small_config());
  randomize_head(w, 2);
  const auto out = upm_forward(w, f.maps, posed(PoseParams::canonical(f.subject.skeleton)));
  std::mt19937_64 rng(1);
  std::normal_distribution<float> n;
  std::vector<float> g(out.numel());
  for (auto& v : g) v = n(rng);
  backward(ops::dot_const(out, g));
  std::int64_t total = 0, touched = 0;
  for (const auto& t : w.params) {
    const auto gr = t.tensor.grad();
    total += t.tensor.numel();
    for (float v : gr) touched += v != 0.0f;
  }
  EXPECT_GE(double(touched) / total, 0.99) << touched << " of " << total;
}

TEST(Prior, CheckpointRoundTrip) {
  const auto& f = fixture();
  auto w = init_upm(8, small_config());
  randomize_head(w, 3);
  const auto path = std::filesystem::temp_directory_path() / "avatar_test_prior.avckpt";
  save_upm(path, w, "{\"note\":\"x\"}");
  const auto r = load_upm(path);
  std::filesystem::remove(path);
  EXPECT_EQ(r.config.levels, 3);
  EXPECT_EQ(r.config.base_width, 8);
  ASSERT_EQ(r.params.size(), w.params.size());
  for (size_t i = 0; i < w.params.size(); ++i) {
    EXPECT_EQ(r.params[i].name, w.params[i].name);
    EXPECT_EQ(max_abs_diff(r.params[i].tensor.values(), w.params[i].tensor.values()), 0.0);
  }
  const auto p = posed(PoseParams::canonical(f.subject.skeleton));
  EXPECT_EQ(max_abs_diff(upm_forward(w, f.maps, p).values(), upm_forward(r, f.maps, p).values()), 0.0);
}

TEST(Prior, CloneIsDeep) {
  auto w = init_upm(8, small_config());
  auto c = clone_weights(w);
  c.params[0].tensor.mutable_values()[0] += 1.0f;
  EXPECT_NE(c.params[0].tensor.values()[0], w.params[0].tensor.values()[0]);
}
