// Acceptance run: one PASS/FAIL line per criterion. `--only 3,5` restricts
// the run; `--work DIR` sets the scratch directory (corpora, checkpoints).

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>

#include "avatar/binary_io.hpp"
#include "avatar/gradcheck.hpp"
#include "avatar/inpainting.hpp"
#include "avatar/personalization.hpp"
#include "avatar/training.hpp"
#include "support/oracle_render.hpp"

using namespace avatar;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

using Clock = std::chrono::steady_clock;
double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

void note(const std::string& s) {
  std::fprintf(stderr, "  .. %s\n", s.c_str());
  std::fflush(stderr);
}

fs::path work_dir;

// ---- 1. tile renderer vs brute force ----

Outcome rasterizer_oracle() {
  const auto t0 = Clock::now();
  double worst = 0;
  for (int s = 0; s < 20; ++s) {
    const auto scene = random_splat_scene(mix_seed(1, s), 100, 64);
    const auto rt = rasterize(scene.gaussians, scene.camera);
    const auto ref = testsupport::oracle_render(scene.gaussians, scene.camera);
    worst = std::max({worst, testsupport::max_abs_diff(rt.rgb, ref.rgb), testsupport::max_abs_diff(rt.alpha, ref.alpha)});
  }
  const double t = seconds_since(t0);
  return {worst <= 1e-5 && t < 60, fmt("20 scenes x 100 Gaussians at 64x64: max diff %.2e (<= 1e-5), %.1f s (< 60 s)", worst, t)};
}

// ---- 2. gradient suite ----

Outcome gradient_suite() {
  const auto t0 = Clock::now();
  const auto tensor = tensor_gradcheck_suite(1);
  const auto splat = splat_gradcheck_suite(10, 1);
  double wt = 0, ws = 0;
  bool ok = true;
  for (const auto& r : tensor) {
    wt = std::max(wt, r.max_rel_error);
    ok = ok && r.max_rel_error < 1e-3;
  }
  for (const auto& r : splat) {
    ws = std::max(ws, r.max_rel_error);
    ok = ok && r.max_rel_error < 1e-2;
  }
  const double t = seconds_since(t0);
  return {ok && t < 300, fmt("%zu tensor ops max rel err %.2e (< 1e-3); %zu splat scenes max %.2e (< 1e-2); %.1f s (< 300 s)",
                             tensor.size(), wt, splat.size(), ws, t)};
}

// ---- 3. LBS / normalization invariants ----

Outcome lbs_invariants() {
  double ident = 0, equiv = 0, idem = 0, unity = 0;
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (int s = 0; s < 6; ++s) {
    const auto subj = generate_subject(random_body_spec(mix_seed(3, s)));
    const auto& skel = subj.skeleton;
    const auto& beta = subj.spec.beta;
    // Identity at the canonical pose, both at unit scale and at the
    // subject's own scale against itself as reference.
    for (const auto& b : bone_transforms(skel, PoseParams::canonical(skel)))
      ident = std::max(ident, (b - Mat4d::Identity()).cwiseAbs().maxCoeff());
    for (const auto& b : bone_transforms(skel, PoseParams::canonical(skel, beta), beta))
      ident = std::max(ident, (b - Mat4d::Identity()).cwiseAbs().maxCoeff());

    // Rigid equivariance of skinned points under a global root motion.
    for (int trial = 0; trial < 5; ++trial) {
      auto pose = PoseParams::canonical(skel, beta);
      for (auto& t : pose.theta) t += Vec3d(u(rng), u(rng), u(rng)) * 0.5;
      const auto local = bone_transforms(skel, pose, beta);
      const Quatd q = Quatd(Eigen::AngleAxisd(kPi * u(rng), Vec3d(u(rng), u(rng), u(rng)).normalized()));
      const Vec3d tr(u(rng), u(rng), u(rng));
      pose.root_rotation = Eigen::AngleAxisd(q).angle() * Eigen::AngleAxisd(q).axis();
      pose.root_translation = tr;
      const auto global = bone_transforms(skel, pose, beta);
      for (size_t i = 0; i < subj.tmpl.vertices.size(); i += 11) {
        const Vec3d x = subj.tmpl.vertices[i];
        const Vec3d a = deform_point<double>(x, lbs_blend(subj.skinning.weights.row(i).transpose(), global));
        const Vec3d b =
            q * deform_point<double>(x, lbs_blend(subj.skinning.weights.row(i).transpose(), local)) + tr;
        equiv = std::max(equiv, (a - b).norm());
      }
    }

    const auto once = normalize_template(subj.tmpl, skel);
    const auto twice = normalize_template(once, skel);
    for (size_t i = 0; i < once.vertices.size(); ++i) idem = std::max(idem, (once.vertices[i] - twice.vertices[i]).norm());

    const auto field = diffuse_skinning(once.vertices, skel, once.bone_scale);
    for (Eigen::Index i = 0; i < field.weights.rows(); ++i) unity = std::max(unity, std::abs(field.weights.row(i).sum() - 1));
    std::vector<Vec3d> qs;
    for (int i = 0; i < 300; ++i) qs.push_back(Vec3d(u(rng), 1.2 * u(rng), 0.5 * u(rng)));
    const auto w = field.query(qs);
    for (Eigen::Index i = 0; i < w.rows(); ++i) unity = std::max(unity, std::abs(w.row(i).sum() - 1));
  }
  const bool ok = ident <= 1e-6 && equiv <= 1e-6 && idem <= 1e-5 && unity <= 1e-6;
  return {ok, fmt("identity %.1e (<= 1e-6), rigid equivariance %.1e (<= 1e-6), normalize idempotence %.1e (<= 1e-5), "
                  "partition of unity %.1e (<= 1e-6)",
                  ident, equiv, idem, unity)};
}

// ---- 4. zero-init reproduction ----

Outcome zero_init() {
  const auto w = init_upm(1);
  const auto cams = camera_ring(8);
  double worst = 1e9, mean = 0;
  const int n = 8;
  for (int s = 0; s < n; ++s) {
    const auto subj = generate_subject(random_body_spec(mix_seed(4, s)));
    const auto norm = normalize_template(subj.tmpl, subj.skeleton);
    const auto ctx = make_context("s", subj.skeleton, bake_maps(norm, 128),
                                  diffuse_skinning(norm.vertices, subj.skeleton, norm.bone_scale));
    const auto pose = PoseParams::canonical(subj.skeleton, subj.spec.beta);
    double p = 0;
    for (const auto& c : cams) {
      const auto img = render_avatar(w, ctx, pose, c);
      const auto gt = render_ground_truth(subj.tmpl, subj.skeleton, subj.skinning, pose, c);
      p += psnr_masked(img.rgb, gt.rgb, gt.alpha);
    }
    p /= cams.size();
    worst = std::min(worst, p);
    mean += p / n;
  }
  return {worst >= 25.0, fmt("%d subjects x 8 views, foreground PSNR: worst subject %.2f dB (>= 25), mean %.2f dB", n,
                             worst, mean)};
}

// ---- 5. prior overfit ----

Outcome overfit() {
  const auto t0 = Clock::now();
  CorpusOptions co;
  co.subjects = 1;
  co.frames = 4;
  co.cameras = 4;
  co.seed = 5;
  const auto corpus = generate_corpus(co, work_dir / "overfit");
  TrainingConfig tc;
  tc.iterations = 2000;
  tc.checkpoint_every = 0;
  const auto r = train_prior(corpus, tc, {}, nullptr, [](int s, const LossTerms& t) {
    if (s % 500 == 0) note(fmt("overfit step %d loss %.4f", s, t.total));
  });
  std::vector<TrainSample> views;
  for (int f = 0; f < 4; ++f)
    for (int c = 0; c < 4; ++c) views.push_back({0, f, c});
  double full = 0, fg = 0;
  for (const auto& m : evaluate_views(r.weights, corpus, views)) {
    full += m.psnr / views.size();
    fg += m.psnr_fg / views.size();
  }
  const double t = seconds_since(t0);
  return {full >= 30.0 && t <= 1800,
          fmt("16 training views at 256x256: PSNR %.2f dB (>= 30), foreground %.2f dB; %.0f s (<= 1800 s)", full, fg, t)};
}

// ---- shared benchmark for 6, 7 and 10 ----

constexpr int kBenchSubjects = 9;  // the last one is the held-out identity
constexpr int kBenchSteps = 2000;

struct Bench {
  CorpusIndex corpus;
  UPMConfig upm;
  std::map<std::string, UPMWeights> priors;
  std::optional<MonocularSequence> seq;
  std::optional<RefineResult> refined;
  std::optional<PersonalizedAvatar> avatar;
  std::optional<FinetuneReport> report;
};

Bench& bench() {
  static std::unique_ptr<Bench> b;
  if (!b) {
    b = std::make_unique<Bench>();
    CorpusOptions co;
    co.subjects = kBenchSubjects;
    co.frames = 16;
    co.cameras = 8;
    co.seed = 6;
    co.map_resolution = 64;
    co.rig.width = co.rig.height = 128;
    note("generating the 9-identity corpus");
    b->corpus = generate_corpus(co, work_dir / "bench");
    b->upm.base_width = 16;
    b->upm.max_width = 128;
  }
  return *b;
}

const UPMWeights& bench_prior(const std::string& which) {
  auto& b = bench();
  auto it = b.priors.find(which);
  if (it != b.priors.end()) return it->second;
  TrainingConfig tc;
  tc.iterations = kBenchSteps;
  tc.checkpoint_every = 0;
  tc.upm = b.upm;
  tc.seed = 6;
  if (which == "one") {
    tc.subject_list = {0};
  } else {
    for (int i = 0; i < kBenchSubjects - 1; ++i) tc.subject_list.push_back(i);
    tc.normalized = which != "raw";
  }
  note("training prior '" + which + "'");
  return b.priors[which] = train_prior(b.corpus, tc).weights;
}

Outcome identity_trend() {
  const auto t0 = Clock::now();
  std::vector<TrainSample> views;
  for (int f = 0; f < 16; f += 2)
    for (int c = 0; c < 8; c += 2) views.push_back({kBenchSubjects - 1, f, c});
  auto score = [&](const UPMWeights& w, double& full, double& fg) {
    full = fg = 0;
    for (const auto& m : evaluate_views(w, bench().corpus, views)) {
      full += m.psnr / views.size();
      fg += m.psnr_fg / views.size();
    }
  };
  double f8, g8, f1, g1;
  score(bench_prior("eight"), f8, g8);
  score(bench_prior("one"), f1, g1);
  return {f8 > f1, fmt("held-out identity, %zu views, %d steps each: 8-subject %.2f dB (fg %.2f) vs 1-subject %.2f dB "
                       "(fg %.2f); %.0f s",
                       views.size(), kBenchSteps, f8, g8, f1, g1, seconds_since(t0))};
}

MonocularSequence& bench_sequence() {
  auto& b = bench();
  if (!b.seq) {
    const auto subject = generate_subject(random_body_spec(mix_seed(6, 5000)));
    MonocularOptions mo;
    mo.frames = 20;
    mo.resolution = 128;
    mo.seed = mix_seed(6, 5001);
    b.seq = make_monocular_sequence(subject, mo);
    RefineOptions ro;
    ro.warn = [](const std::string& m) { note(m); };
    b.refined = refine_poses(*b.seq, ro);
  }
  return *b.seq;
}

FinetuneConfig bench_finetune() {
  FinetuneConfig fc;
  fc.seed = 6;
  return fc;
}

PersonalizedAvatar personalize(const std::string& prior, bool normalize, const FinetuneConfig& fc,
                               FinetuneReport& rep) {
  auto& seq = bench_sequence();
  const auto& poses = bench().refined->poses;
  const auto cond = build_conditioning(seq, poses, 64, nullptr, 6, normalize);
  return finetune(bench_prior(prior), seq, cond, poses, fc, &rep);
}

const PersonalizedAvatar& bench_avatar() {
  auto& b = bench();
  if (!b.avatar) {
    note("fine-tuning the full model");
    FinetuneReport rep;
    b.avatar = personalize("eight", true, bench_finetune(), rep);
    b.report = rep;
  }
  return *b.avatar;
}

Outcome finetune_ablation() {
  const auto t0 = Clock::now();
  bench_avatar();
  const auto& rep = *bench().report;
  const double before = FinetuneReport::mean_psnr(rep.before), after = FinetuneReport::mean_psnr(rep.after);
  note("fine-tuning the no-normalization variant");
  FinetuneReport raw;
  personalize("raw", false, bench_finetune(), raw);
  const double variant = FinetuneReport::mean_psnr(raw.after);
  note("fine-tuning with frozen poses");
  auto frozen_cfg = bench_finetune();
  frozen_cfg.optimize_poses = false;
  FinetuneReport frozen;
  personalize("eight", true, frozen_cfg, frozen);
  const double fz = FinetuneReport::mean_psnr(frozen.after);
  note(fmt("frozen poses %.2f dB vs joint %.2f dB", fz, after));
  return {after - before >= 2.0 && variant < after,
          fmt("%zu held-out frames: prior-only %.2f dB, fine-tuned %.2f dB (gain %.2f >= 2); no-normalization variant "
              "%.2f dB (< full); frozen-pose fine-tune %.2f dB; %.0f s",
              rep.heldout_frames.size(), before, after, after - before, variant, fz, seconds_since(t0))};
}

// ---- 8. inpainting ----

Outcome inpainting() {
  const auto t0 = Clock::now();
  struct Subj {
    CanonicalMapSet maps;
    Eigen::MatrixXd pw;
    TexturedTemplate norm;
    SkinningField skin;
    Skeleton skel;
  };
  auto make = [](std::uint64_t seed) {
    const auto s = generate_subject(random_body_spec(seed));
    Subj o;
    o.norm = normalize_template(s.tmpl, s.skeleton);
    o.skin = diffuse_skinning(o.norm.vertices, s.skeleton, o.norm.bone_scale);
    o.maps = bake_maps(o.norm, 128);
    o.pw = pixel_weights(o.maps, o.skin);
    o.skel = s.skeleton;
    return o;
  };
  std::vector<InpaintExample> data;
  for (int i = 0; i < 8; ++i) {
    const auto s = make(mix_seed(8, i));
    InpaintExample e;
    e.maps = s.maps;
    for (int m = 0; m < 16; ++m) e.masks.push_back(random_visibility(s.maps, s.pw, s.norm, s.skin, s.skel, mix_seed(80, 16 * i + m)));
    data.push_back(std::move(e));
  }
  DDPMConfig dc;
  InpainterTrainConfig tc;
  tc.iterations = 3000;
  tc.seed = 8;
  note("training the inpainter");
  const auto w = train_inpainter(data, dc, tc, nullptr, [](int s, double l) {
    if (s % 1000 == 0) note(fmt("inpainter step %d loss %.4f", s, l));
  }).weights;

  int wins = 0;
  bool exact = true, noop = true;
  for (int c = 0; c < 20; ++c) {
    const auto s = make(mix_seed(800, c));
    const auto vis = random_visibility(s.maps, s.pw, s.norm, s.skin, s.skel, mix_seed(801, c));
    const TexturePair truth{s.maps.texture[0], s.maps.texture[1]};
    auto partial = s.maps;
    for (const auto& p : partial.valid_pixels())
      if (!vis.at(p.side, p.y, p.x))
        for (int k = 0; k < 3; ++k) partial.texture[p.side].at(k, p.y, p.x) = 0.0;
    const auto out = inpaint(partial, vis, w, c);
    for (int side = 0; side < 2; ++side)
      for (const auto& p : s.maps.valid_pixels())
        if (p.side == side && vis.at(side, p.y, p.x))
          for (int k = 0; k < 3; ++k) exact = exact && out[side].at(k, p.y, p.x) == s.maps.texture[side].at(k, p.y, p.x);
    wins += masked_region_mse(out, truth, s.maps, vis) < masked_region_mse(mean_color_fill(partial, vis), truth, s.maps, vis);
    if (c < 3) {
      const auto full = inpaint(s.maps, full_visibility(s.maps), w, c);
      noop = noop && full[0].data == s.maps.texture[0].data && full[1].data == s.maps.texture[1].data;
    }
  }
  return {exact && noop && wins >= 18,
          fmt("20 held-out occlusion cases: DDPM beats mean-color fill on %d (>= 18); visible texels bit-exact: %s; "
              "fully-visible no-op: %s; %.0f s",
              wins, exact ? "yes" : "no", noop ? "yes" : "no", seconds_since(t0))};
}

// ---- 9. end-to-end determinism through the CLI ----

int run_cli(const std::string& args) {
  const std::string cmd = std::string(AVATAR_CLI) + " -q " + args + " > /dev/null 2>&1";
  const int rc = std::system(cmd.c_str());
  return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

Outcome end_to_end_determinism() {
  const auto t0 = Clock::now();
  const auto root = work_dir / "e2e";
  fs::remove_all(root);
  fs::create_directories(root);
  write_text_file(root / "config.json", R"({
  "seed": 9,
  "corpus": {"subjects": 3, "frames": 4, "cameras": 3, "map_resolution": 64,
             "rig": {"width": 96, "height": 96}, "sequences": {"count": 1, "frames": 10}},
  "upm": {"levels": 4, "base_width": 8, "max_width": 64},
  "training": {"iterations": 200, "checkpoint_every": 100},
  "personalize": {"map_resolution": 64, "iterations": 100, "heldout_pose_iterations": 20}
})");
  const std::string cfg = " --config " + (root / "config.json").string();
  std::vector<std::string> metrics;
  for (int run = 0; run < 2; ++run) {
    const auto d = root / ("run" + std::to_string(run));
    const auto seq = d / "corpus" / "sequences" / "heldout_00";
    for (const auto& cmd : {"gen-corpus" + cfg + " --out " + (d / "corpus").string(),
                            "train-prior --corpus " + (d / "corpus").string() + cfg + " --out " + (d / "prior").string(),
                            "personalize --prior " + (d / "prior").string() + " --seq " + seq.string() + cfg +
                                " --out " + (d / "avatar").string() + " --skip-inpaint",
                            "eval --avatar " + (d / "avatar").string() + " --seq " + seq.string()}) {
      const int rc = run_cli(cmd);
      if (rc != 0) return {false, fmt("run %d: `%s` exited with %d", run, cmd.c_str(), rc)};
    }
    metrics.push_back(read_text_file(d / "prior" / "loss.csv") + read_text_file(d / "avatar" / "metrics.csv") +
                      read_text_file(d / "avatar" / "eval" / "metrics.csv"));
  }
  return {metrics[0] == metrics[1],
          fmt("gen-corpus -> train-prior -> personalize -> eval twice: loss and metric files %s; %.0f s",
              metrics[0] == metrics[1] ? "bit-identical" : "DIFFER", seconds_since(t0))};
}

// ---- 10. animation sanity ----

Outcome animation_sanity() {
  const auto& av = bench_avatar();
  const auto& seq = bench_sequence();
  const auto& train = bench().report->train_frames;
  auto coverage = [](const RenderTarget& r) {
    double s = 0;
    for (double a : r.alpha.data) s += a;
    return s;
  };
  double train_cov = 0;
  for (int f : train) train_cov += coverage(render_avatar(av.weights, av.context, av.poses[f], seq.cameras[f])) / train.size();
  const auto novel = random_pose_sequence(av.context.skeleton, av.shape, 51, mix_seed(10, 1));
  const std::vector<PoseParams> poses(novel.begin() + 1, novel.end());
  const auto frames = animate(av, poses, {seq.cameras[0]});
  bool finite = true;
  double lo = 1e9, hi = 0;
  for (const auto& r : frames) {
    for (double v : r.rgb.data) finite = finite && std::isfinite(v) && v >= 0 && v <= 1 + 1e-9;
    for (double v : r.alpha.data) finite = finite && std::isfinite(v);
    const double ratio = coverage(r) / train_cov;
    lo = std::min(lo, ratio);
    hi = std::max(hi, ratio);
  }
  return {finite && lo >= 0.5 && hi <= 2.0,
          fmt("50 novel poses: all pixels finite and in range: %s; alpha coverage / training coverage in [%.2f, %.2f] "
              "(within [0.5, 2])",
              finite ? "yes" : "no", lo, hi)};
}

}  // namespace

int main(int argc, char** argv) {
  std::set<int> only;
  work_dir = fs::temp_directory_path() / "avatar_acceptance";
  for (int i = 1; i < argc; ++i) {
    const std::string a = argv[i];
    if (a == "--only" && i + 1 < argc) {
      std::stringstream ss(argv[++i]);
      for (std::string t; std::getline(ss, t, ',');) only.insert(std::stoi(t));
    } else if (a == "--work" && i + 1 < argc) {
      work_dir = argv[++i];
    } else if (a == "--threads" && i + 1 < argc) {
      set_max_threads(std::stoi(argv[++i]));
    } else {
      std::fprintf(stderr, "usage: %s [--only N[,M...]] [--work DIR] [--threads N]\n", argv[0]);
      return 2;
    }
  }
  fs::create_directories(work_dir);

  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria = {
      {"rasterizer matches brute-force oracle", rasterizer_oracle},
      {"finite-difference gradient suite", gradient_suite},
      {"LBS and normalization invariants", lbs_invariants},
      {"zero-init prior reproduces subjects", zero_init},
      {"prior overfits one subject", overfit},
      {"more identities help held-out identity", identity_trend},
      {"fine-tuning and normalization ablation", finetune_ablation},
      {"texture inpainting", inpainting},
      {"end-to-end determinism", end_to_end_determinism},
      {"animation sanity", animation_sanity},
  };
  int failed = 0;
  for (size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i) + 1;
    if (!only.empty() && !only.count(id)) continue;
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failed += !o.pass;
    std::printf("criterion %2d %s  %s: %s\n", id, o.pass ? "PASS" : "FAIL", criteria[i].first, o.detail.c_str());
    std::fflush(stdout);
  }
  return failed == 0 ? 0 : 1;
}
