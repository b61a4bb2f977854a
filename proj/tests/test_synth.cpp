#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iterator>

#include "avatar/mesh_render.hpp"
#include "avatar/synth.hpp"
#include "support/meshes.hpp"

using namespace avatar;

namespace {

Camera front_camera(int size = 64, double f = 32) {
  Camera c;
  c.fx = c.fy = f;
  c.cx = c.cy = size / 2.0;
  c.width = c.height = size;
  return c;
}

// Quad [-1,1]^2 in x/y on the plane z = z0 + slope * x, color from `col`.
template <typename F>
void tilted_quad(std::vector<Vec3d>& v, std::vector<Eigen::Vector3i>& f, std::vector<Vec3d>& c, double z0, double slope,
                 F col) {
  const int b = static_cast<int>(v.size());
  for (auto [x, y] : {std::pair{-1.0, -1.0}, {1.0, -1.0}, {1.0, 1.0}, {-1.0, 1.0}}) {
    v.emplace_back(x, y, z0 + slope * x);
    c.push_back(col(Vec3d(x, y, z0 + slope * x)));
  }
  f.emplace_back(b, b + 1, b + 2);
  f.emplace_back(b, b + 2, b + 3);
}

std::vector<unsigned char> file_bytes(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

std::pair<Vec3d, Vec3d> bbox(const std::vector<Vec3d>& v) {
  Vec3d lo = v[0], hi = v[0];
  for (const auto& p : v) {
    lo = lo.cwiseMin(p);
    hi = hi.cwiseMax(p);
  }
  return {lo, hi};
}

}  // namespace

TEST(MeshRender, EmptySceneIsBlack) {
  const auto rt = render_mesh({}, {}, {}, front_camera());
  for (double v : rt.rgb.data) ASSERT_EQ(v, 0.0);
  for (double v : rt.alpha.data) ASSERT_EQ(v, 0.0);
}

TEST(MeshRender, UniformQuadFillsView) {
  std::vector<Vec3d> v, c;
  std::vector<Eigen::Vector3i> f;
  tilted_quad(v, f, c, 0.5, 0.0, [](const Vec3d&) { return Vec3d(1, 0, 0); });
  const auto rt = render_mesh(v, f, c, front_camera());
  for (int y = 0; y < 64; ++y)
    for (int x = 0; x < 64; ++x) {
      ASSERT_EQ(rt.alpha.at(0, y, x), 1.0);
      ASSERT_NEAR(rt.rgb.at(0, y, x), 1.0, 1e-12);
      ASSERT_NEAR(rt.rgb.at(1, y, x), 0.0, 1e-12);
    }
}

TEST(MeshRender, PerspectiveCorrectInterpolation) {
  // Color is linear in world x on a tilted plane, so every pixel must show
  // the color of the ray's hit point.
  std::vector<Vec3d> v, c;
  std::vector<Eigen::Vector3i> f;
  tilted_quad(v, f, c, 2.0, 0.5, [](const Vec3d& p) { return Vec3d(0.5 * (p.x() + 1), 0.2, 0.7); });
  const auto cam = front_camera();
  MeshRenderOptions mo;
  mo.supersample = 1;
  const auto rt = render_mesh(v, f, c, cam, mo);
  int checked = 0;
  for (int y = 0; y < 64; ++y)
    for (int x = 0; x < 64; ++x) {
      if (rt.alpha.at(0, y, x) < 1.0) continue;
      const double dx = (x + 0.5 - cam.cx) / cam.fx;
      const double t = 2.0 / (1.0 - 0.5 * dx);
      EXPECT_NEAR(rt.rgb.at(0, y, x), 0.5 * (t * dx + 1), 1e-9) << x << "," << y;
      ++checked;
    }
  EXPECT_GT(checked, 500);
}

TEST(MeshRender, NearerSurfaceWins) {
  for (bool red_first : {true, false}) {
    std::vector<Vec3d> v, c;
    std::vector<Eigen::Vector3i> f;
    auto red = [](const Vec3d&) { return Vec3d(1, 0, 0); };
    auto green = [](const Vec3d&) { return Vec3d(0, 1, 0); };
    if (red_first) {
      tilted_quad(v, f, c, 2.0, 0.0, red);
      tilted_quad(v, f, c, 3.0, 0.0, green);
    } else {
      tilted_quad(v, f, c, 3.0, 0.0, green);
      tilted_quad(v, f, c, 2.0, 0.0, red);
    }
    const auto rt = render_mesh(v, f, c, front_camera());
    EXPECT_NEAR(rt.rgb.at(0, 32, 32), 1.0, 1e-12);
    EXPECT_NEAR(rt.rgb.at(1, 32, 32), 0.0, 1e-12);
  }
}

TEST(MeshRender, FaceIds) {
  std::vector<Vec3d> v, c;
  std::vector<Eigen::Vector3i> f;
  tilted_quad(v, f, c, 4.0, 0.0, [](const Vec3d&) { return Vec3d::Ones(); });
  const auto ids = render_face_ids(v, f, front_camera());
  EXPECT_EQ(ids.face[0], -1);  // corner of the view lies outside the quad
  const size_t mid = 32 * 64 + 32;
  ASSERT_GE(ids.face[mid], 0);
  EXPECT_NEAR(ids.bary[mid].sum(), 1.0, 1e-12);
  EXPECT_NEAR(ids.depth[mid], 4.0, 1e-9);
}

TEST(Synth, SubjectIsDeterministic) {
  const auto a = generate_subject(random_body_spec(3)), b = generate_subject(random_body_spec(3));
  EXPECT_EQ(encode_template(a.tmpl), encode_template(b.tmpl));
  const auto c = generate_subject(random_body_spec(4));
  EXPECT_NE(encode_template(a.tmpl), encode_template(c.tmpl));
}

TEST(Synth, DefaultBodyHeight) {
  // Head cap top: 0.20 + 0.20 + 0.16 + 0.08 + 0.6 * 0.22 + 0.095.
  // Foot cap bottom: -0.06 - 0.42 - 0.40 - 0.04 - 0.055.
  const auto s = generate_subject(ProceduralBodySpec{});
  const auto [lo, hi] = bbox(s.tmpl.vertices);
  EXPECT_NEAR(hi.y(), 0.867, 1e-9);
  EXPECT_NEAR(lo.y(), -0.975, 1e-9);
}

TEST(Synth, UniformBoneScaleScalesBody) {
  ProceduralBodySpec a, b;
  b.beta.assign(17, 1.1);
  const auto [alo, ahi] = bbox(generate_subject(a).tmpl.vertices);
  const auto [blo, bhi] = bbox(generate_subject(b).tmpl.vertices);
  EXPECT_NEAR((bhi.y() - blo.y()) / (ahi.y() - alo.y()), 1.1, 1e-9);
  EXPECT_NEAR((bhi.x() - blo.x()) / (ahi.x() - alo.x()), 1.1, 1e-9);
}

TEST(Synth, NoDegenerateTrianglesAcrossSeeds) {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const auto spec = random_body_spec(seed);
    for (double bv : spec.beta) {
      ASSERT_GE(bv, 0.9);
      ASSERT_LE(bv, 1.12);
    }
    const auto s = generate_subject(spec);
    for (const auto& f : s.tmpl.faces)
      ASSERT_GT(triangle_area(s.tmpl.vertices[f[0]], s.tmpl.vertices[f[1]], s.tmpl.vertices[f[2]]), 1e-8)
          << "seed " << seed;
    for (const auto& c : s.tmpl.colors) ASSERT_TRUE(c.minCoeff() >= 0 && c.maxCoeff() <= 1) << "seed " << seed;
  }
}

TEST(Synth, SpecValidation) {
  ProceduralBodySpec s;
  s.beta.resize(3);
  EXPECT_THROW(s.validate(), ShapeError);
  ProceduralBodySpec r;
  r.head_r = -1;
  EXPECT_ANY_THROW(r.validate());
}

TEST(Synth, CanonicalPoseLeavesTemplateInPlace) {
  const auto s = generate_subject(random_body_spec(9));
  std::vector<Vec3d> v, c;
  pose_template(s.tmpl, s.skeleton, s.skinning, PoseParams::canonical(s.skeleton, s.tmpl.bone_scale), {}, v, c);
  for (size_t i = 0; i < v.size(); ++i) {
    ASSERT_LE((v[i] - s.tmpl.vertices[i]).norm(), 1e-9);
    ASSERT_LE((c[i] - s.tmpl.colors[i]).norm(), 1e-12);
  }
}

TEST(Synth, PoseSequences) {
  const auto skel = make_body_skeleton();
  const std::vector<double> beta(17, 1.05);
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto seq = random_pose_sequence(skel, beta, 16, seed);
    ASSERT_EQ(seq.size(), 16u);
    for (int j = 0; j < skel.size(); ++j) EXPECT_LE((seq[0].theta[j] - skel.canonical_pose()[j]).norm(), 1e-12);
    EXPECT_LE(seq[0].root_translation.norm(), 1e-12);
    EXPECT_LE(seq[0].root_rotation.norm(), 1e-12);
    for (const auto& p : seq) {
      EXPECT_EQ(p.beta, beta);
      for (const auto& th : p.theta) ASSERT_LT(th.norm(), 2.0);
    }
  }
  const auto a = random_pose_sequence(skel, beta, 8, 5), b = random_pose_sequence(skel, beta, 8, 5);
  for (int f = 0; f < 8; ++f)
    for (int j = 0; j < skel.size(); ++j) EXPECT_EQ(a[f].theta[j], b[f].theta[j]);
  EXPECT_THROW(random_pose_sequence(skel, beta, 0, 1), DataError);
}

TEST(Synth, CameraRing) {
  RigOptions o;
  const auto cams = camera_ring(8, o);
  ASSERT_EQ(cams.size(), 8u);
  EXPECT_GT(cams[0].center().z(), 2.5);
  for (const auto& c : cams) {
    EXPECT_NEAR((c.center() - o.target).norm(), o.distance, 1e-9);
    const Vec2d p = c.project(o.target);
    EXPECT_NEAR(p.x(), o.width / 2.0, 1e-6);
    EXPECT_NEAR(p.y(), o.height / 2.0, 1e-6);
  }
}

TEST(Synth, GroundTruthCoversBody) {
  const auto s = generate_subject(random_body_spec(2));
  RigOptions o;
  o.width = o.height = 64;
  o.focal_factor = 1.3;
  const auto cam = camera_ring(1, o)[0];
  const auto rt = render_ground_truth(s.tmpl, s.skeleton, s.skinning, PoseParams::canonical(s.skeleton, s.tmpl.bone_scale), cam);
  double cover = 0;
  for (double a : rt.alpha.data) cover += a;
  EXPECT_GT(cover, 64 * 64 * 0.05);
  EXPECT_EQ(rt.alpha.at(0, 0, 0), 0.0);
}

TEST(Corpus, GenerateAndReload) {
  const auto root = std::filesystem::temp_directory_path() / "avatar_test_corpus";
  const auto root2 = std::filesystem::temp_directory_path() / "avatar_test_corpus2";
  std::filesystem::remove_all(root);
  std::filesystem::remove_all(root2);
  CorpusOptions o;
  o.subjects = 2;
  o.frames = 4;
  o.cameras = 4;
  o.map_resolution = 32;
  o.rig.width = o.rig.height = 48;
  o.supersample = 1;
  o.seed = 7;
  const auto idx = generate_corpus(o, root);
  EXPECT_EQ(idx.image_count(), 32);
  const auto re = load_corpus(root);
  ASSERT_EQ(re.subjects.size(), 2u);
  EXPECT_EQ(re.image_count(), 32);
  for (size_t i = 0; i < 2; ++i) {
    EXPECT_EQ(re.subjects[i].id, idx.subjects[i].id);
    EXPECT_EQ(re.subjects[i].beta, idx.subjects[i].beta);
    for (int f = 0; f < 4; ++f) EXPECT_EQ(re.subjects[i].poses[f].theta, idx.subjects[i].poses[f].theta);
    EXPECT_TRUE(std::filesystem::exists(re.subjects[i].maps_path()));
    EXPECT_TRUE(std::filesystem::exists(re.subjects[i].raw_maps_path()));
  }
  const auto gt = load_rgba(re.subjects[1].gt_path(2, 3));
  EXPECT_EQ(gt.rgb.width, 48);

  generate_corpus(o, root2);
  const auto p1 = re.subjects[1].gt_path(3, 2);
  const auto p2 = root2 / std::filesystem::relative(p1, root);
  EXPECT_EQ(file_bytes(p1), file_bytes(p2));
  std::filesystem::remove_all(root);
  std::filesystem::remove_all(root2);
  EXPECT_THROW(load_corpus(root), DataError);
}

TEST(Corpus, JsonRoundTrips) {
  const auto skel = make_body_skeleton();
  const auto seq = random_pose_sequence(skel, std::vector<double>(17, 0.95), 3, 2);
  const auto back = poses_from_json(poses_to_json(seq));
  ASSERT_EQ(back.size(), 3u);
  for (int f = 0; f < 3; ++f) {
    EXPECT_EQ(back[f].theta, seq[f].theta);
    EXPECT_EQ(back[f].root_translation, seq[f].root_translation);
  }
  const auto cams = camera_ring(3);
  const auto cb = cameras_from_json(cameras_to_json(cams));
  ASSERT_EQ(cb.size(), 3u);
  EXPECT_EQ(cb[1].rotation, cams[1].rotation);
  EXPECT_EQ(cb[2].fx, cams[2].fx);
}
