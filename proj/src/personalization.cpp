#include "avatar/personalization.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <iostream>
#include <random>
#include <sstream>

#include "avatar/binary_io.hpp"
#include "avatar/common.hpp"
#include "avatar/geometry.hpp"
#include "avatar/optim.hpp"

namespace avatar {

using nlohmann::json;

void MonocularSequence::validate() const {
  const size_t n = frames.size();
  if (n == 0) throw DataError("sequence has no frames");
  if (cameras.size() != n || poses.size() != n || keypoints.size() != n)
    throw ShapeError("sequence: frames, cameras, poses and keypoints must have the same count");
  if (!gt_poses.empty() && gt_poses.size() != n) throw ShapeError("sequence: ground-truth pose count");
  const auto nk = keypoints_3d(skeleton, PoseParams::canonical(skeleton)).size();
  for (size_t i = 0; i < n; ++i) {
    cameras[i].validate();
    poses[i].validate(skeleton);
    if (frames[i].rgb.width != cameras[i].width || frames[i].rgb.height != cameras[i].height)
      throw ShapeError("sequence: frame " + std::to_string(i) + " does not match its camera");
    if (keypoints[i].size() != nk) throw ShapeError("sequence: keypoint count of frame " + std::to_string(i));
  }
  if (static_cast<int>(beta.size()) != skeleton.size()) throw ShapeError("sequence: shape has the wrong length");
  tmpl.validate();
}

PoseParams perturb_pose(const PoseParams& pose, double degrees, std::uint64_t seed) {
  PoseParams out = pose;
  if (degrees == 0.0) return out;
  std::mt19937_64 rng(mix_seed(seed, 0x9E5));
  std::normal_distribution<double> n;
  const double angle = degrees * kPi / 180.0;
  for (auto& t : out.theta) {
    Vec3d axis(n(rng), n(rng), n(rng));
    axis.normalize();
    t = matrix_to_axis_angle<double>(axis_angle_to_matrix<double>(Vec3d(angle * axis)) * axis_angle_to_matrix(t));
  }
  return out;
}

namespace {

RenderTarget quantized(RenderTarget rt) {
  // Same values a PNG round trip gives, so in-memory and on-disk sequences agree.
  for (auto& v : rt.rgb.data) v = quantize8(static_cast<float>(v));
  for (auto& v : rt.alpha.data) v = quantize8(static_cast<float>(v));
  return rt;
}

}  // namespace

MonocularSequence make_monocular_sequence(const SyntheticSubject& subject, const MonocularOptions& opts) {
  if (opts.frames < 1) throw ConfigError("monocular sequence needs at least one frame");
  if (opts.resolution < 16) throw ConfigError("monocular sequence resolution too small");
  MonocularSequence seq;
  seq.skeleton = subject.skeleton;
  seq.tmpl = subject.tmpl;
  const auto& beta = subject.spec.beta;
  seq.gt_poses = random_pose_sequence(subject.skeleton, beta, opts.frames, mix_seed(opts.seed, 1), opts.motion);

  std::mt19937_64 rng(mix_seed(opts.seed, 2));
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::normal_distribution<double> n;
  seq.beta = beta;
  for (auto& b : seq.beta) b *= 1.0 + opts.shape_noise * u(rng);

  RigOptions rig = opts.rig;
  rig.width = rig.height = opts.resolution;
  const Camera cam = camera_ring(1, rig)[0];
  MeshRenderOptions mo;
  mo.supersample = opts.supersample;
  for (int f = 0; f < opts.frames; ++f) {
    const auto& gt = seq.gt_poses[f];
    seq.cameras.push_back(cam);
    seq.frames.push_back(quantized(render_ground_truth(subject.tmpl, subject.skeleton, subject.skinning, gt, cam,
                                                       opts.wrinkles, mo)));
    std::vector<Vec2d> kp;
    for (const auto& x : keypoints_3d(subject.skeleton, gt))
      kp.push_back(cam.project(x) + opts.keypoint_noise_px * Vec2d(n(rng), n(rng)));
    seq.keypoints.push_back(std::move(kp));
    PoseParams init = perturb_pose(gt, opts.pose_noise_deg, mix_seed(opts.seed, 100 + f));
    init.beta = seq.beta;
    seq.poses.push_back(std::move(init));
  }
  return seq;
}

namespace {

std::string frame_name(int f) {
  char b[32];
  std::snprintf(b, sizeof b, "%04d.png", f);
  return b;
}

}  // namespace

void save_sequence(const std::filesystem::path& dir, const MonocularSequence& seq) {
  seq.validate();
  std::filesystem::create_directories(dir / "frames");
  for (int f = 0; f < seq.size(); ++f) save_rgba(dir / "frames" / frame_name(f), seq.frames[f]);
  write_text_file(dir / "cameras.json", cameras_to_json(seq.cameras));
  write_text_file(dir / "poses.json", poses_to_json(seq.poses));
  if (!seq.gt_poses.empty()) write_text_file(dir / "gt_poses.json", poses_to_json(seq.gt_poses));
  json kp = json::array();
  for (const auto& frame : seq.keypoints) {
    json pts = json::array();
    for (const auto& p : frame) pts.push_back({p.x(), p.y()});
    kp.push_back(pts);
  }
  write_text_file(dir / "keypoints.json", kp.dump());
  write_text_file(dir / "shape.json", json(seq.beta).dump());
  save_skeleton(dir / "skeleton.json", seq.skeleton);
  save_template(dir / "template.avmesh", seq.tmpl);
}

MonocularSequence load_sequence(const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(dir)) throw DataError("sequence directory not found: " + dir.string());
  MonocularSequence seq;
  seq.skeleton = load_skeleton(dir / "skeleton.json");
  seq.tmpl = load_template(dir / "template.avmesh");
  seq.cameras = cameras_from_json(read_text_file(dir / "cameras.json"));
  seq.poses = poses_from_json(read_text_file(dir / "poses.json"));
  if (fs::exists(dir / "gt_poses.json")) seq.gt_poses = poses_from_json(read_text_file(dir / "gt_poses.json"));
  try {
    for (const auto& frame : json::parse(read_text_file(dir / "keypoints.json"))) {
      std::vector<Vec2d> pts;
      for (const auto& p : frame) pts.emplace_back(p.at(0).get<double>(), p.at(1).get<double>());
      seq.keypoints.push_back(std::move(pts));
    }
    seq.beta = json::parse(read_text_file(dir / "shape.json")).get<std::vector<double>>();
  } catch (const json::exception& e) {
    throw DataError("bad sequence file in " + dir.string() + ": " + e.what());
  }
  for (size_t f = 0; f < seq.cameras.size(); ++f) {
    const auto path = dir / "frames" / frame_name(static_cast<int>(f));
    if (!fs::exists(path)) throw DataError("sequence frame missing: " + path.string());
    seq.frames.push_back(load_rgba(path));
  }
  seq.validate();
  return seq;
}

// ---- pose refinement ----

double RefineResult::mean_initial() const {
  double s = 0;
  for (double e : initial_error) s += e;
  return initial_error.empty() ? 0.0 : s / initial_error.size();
}

double RefineResult::mean_final() const {
  double s = 0;
  for (double e : final_error) s += e;
  return final_error.empty() ? 0.0 : s / final_error.size();
}

double reprojection_error(const Skeleton& skel, const PoseParams& pose, const Camera& cam,
                          const std::vector<Vec2d>& keypoints) {
  const auto k = keypoints_3d(skel, pose);
  if (k.size() != keypoints.size()) throw ShapeError("reprojection_error: keypoint count");
  double s = 0;
  for (size_t i = 0; i < k.size(); ++i) s += (cam.project(k[i]) - keypoints[i]).norm();
  return s / k.size();
}

namespace {

// Optimized block: joint rotations, then root rotation and translation.
Eigen::VectorXd pack(const PoseParams& p) {
  const int n = static_cast<int>(p.theta.size());
  Eigen::VectorXd x(3 * n + 6);
  for (int j = 0; j < n; ++j) x.segment<3>(3 * j) = p.theta[j];
  x.segment<3>(3 * n) = p.root_rotation;
  x.segment<3>(3 * n + 3) = p.root_translation;
  return x;
}

void unpack(const Eigen::VectorXd& x, PoseParams& p) {
  const int n = static_cast<int>(p.theta.size());
  for (int j = 0; j < n; ++j) p.theta[j] = x.segment<3>(3 * j);
  p.root_rotation = x.segment<3>(3 * n);
  p.root_translation = x.segment<3>(3 * n + 3);
}

Eigen::VectorXd residuals(const Skeleton& skel, const PoseParams& pose, const Camera& cam,
                          const std::vector<Vec2d>& kp) {
  const auto k = keypoints_3d(skel, pose);
  Eigen::VectorXd r(2 * k.size());
  for (size_t i = 0; i < k.size(); ++i) r.segment<2>(2 * i) = cam.project(k[i]) - kp[i];
  return r;
}

struct FrameFit {
  PoseParams pose;
  double initial = 0, final = 0;
  std::vector<double> best;
  bool diverged = false;
};

FrameFit refine_frame(const Skeleton& skel, const PoseParams& start, const Camera& cam, const std::vector<Vec2d>& kp,
                      const RefineOptions& opts) {
  FrameFit fit;
  PoseParams cur = start;
  Eigen::VectorXd x = pack(start);
  const Eigen::VectorXd x0 = x;
  const double nk = static_cast<double>(kp.size()), lambda = opts.prior_weight;
  auto energy = [&](const Eigen::VectorXd& r) { return r.squaredNorm() / nk + lambda * (x - x0).squaredNorm(); };
  auto eval = [&](const Eigen::VectorXd& v) {
    unpack(v, cur);
    return residuals(skel, cur, cam, kp);
  };
  Eigen::VectorXd r = eval(x);
  double e = energy(r);
  fit.initial = reprojection_error(skel, start, cam, kp);
  Eigen::VectorXd best_x = x;
  double best_e = fit.initial;
  double step = opts.initial_step;
  int rising = 0;
  const double h = 1e-6;
  Eigen::MatrixXd J(r.size(), x.size());
  for (int it = 0; it < opts.max_iterations; ++it) {
    for (Eigen::Index i = 0; i < x.size(); ++i) {
      Eigen::VectorXd xp = x, xm = x;
      xp[i] += h;
      xm[i] -= h;
      J.col(i) = (eval(xp) - eval(xm)) / (2 * h);
    }
    const Eigen::VectorXd g = 2.0 / nk * (J.transpose() * r) + 2.0 * lambda * (x - x0);
    // Jacobi (diagonal Gauss-Newton) scaling puts rotations and the root
    // translation on comparable footing.
    const Eigen::VectorXd d = (2.0 / nk * J.colwise().squaredNorm().transpose()).array() + 2.0 * lambda;
    const double damp = 1e-6 * d.maxCoeff() + 1e-12;
    Eigen::VectorXd delta = step * (g.array() / (d.array() + damp)).matrix();
    // Trust region: directions the camera barely sees (depth) have tiny
    // curvature and would otherwise take huge steps into mirrored limbs.
    const double big = delta.cwiseAbs().maxCoeff();
    if (big > opts.max_step) delta *= opts.max_step / big;
    x -= delta;
    const Eigen::VectorXd rn = eval(x);
    const double en = energy(rn);
    const double change = std::abs(en - e);
    if (en > e) {
      step *= 0.5;
      ++rising;
    } else {
      step = std::min(opts.initial_step, step * 1.2);
      rising = 0;
    }
    r = rn;
    e = en;
    // Best iterate by the reported error, not the regularized objective.
    const double err = reprojection_error(skel, cur, cam, kp);
    if (err < best_e) {
      best_e = err;
      best_x = x;
    }
    fit.best.push_back(best_e);
    if (rising >= opts.patience) {
      fit.diverged = true;
      break;
    }
    if (change < opts.tolerance || !std::isfinite(e)) break;
  }
  fit.pose = start;
  unpack(best_x, fit.pose);
  fit.final = reprojection_error(skel, fit.pose, cam, kp);
  return fit;
}

}  // namespace

RefineResult refine_poses(const MonocularSequence& seq, const RefineOptions& opts) {
  seq.validate();
  const int n = seq.size();
  std::vector<FrameFit> fits(n);
  parallel_for(n, [&](std::int64_t b, std::int64_t e) {
    for (auto f = b; f < e; ++f) fits[f] = refine_frame(seq.skeleton, seq.poses[f], seq.cameras[f], seq.keypoints[f], opts);
  });
  RefineResult res;
  for (int f = 0; f < n; ++f) {
    res.poses.push_back(fits[f].pose);
    res.initial_error.push_back(fits[f].initial);
    res.final_error.push_back(fits[f].final);
    res.best_so_far.push_back(std::move(fits[f].best));
    if (fits[f].diverged) {
      res.diverged.push_back(f);
      const std::string msg = "pose refinement diverged on frame " + std::to_string(f) + "; keeping best iterate (" +
                              std::to_string(fits[f].final) + " px)";
      if (opts.warn)
        opts.warn(msg);
      else
        std::cerr << "warning: " << msg << '\n';
    }
  }
  return res;
}

// ---- conditioning ----

Conditioning build_conditioning(const MonocularSequence& seq, const std::vector<PoseParams>& poses, int map_resolution,
                                const DenoiserWeights* denoiser, std::uint64_t seed, bool normalize) {
  seq.validate();
  if (poses.size() != seq.frames.size()) throw ShapeError("build_conditioning: one pose per frame expected");
  Conditioning c;
  c.keyframe = select_keyframe(seq.skeleton, poses);
  c.normalized = normalize ? normalize_template(seq.tmpl, seq.skeleton) : seq.tmpl;
  c.skinning = diffuse_skinning(c.normalized.vertices, seq.skeleton, c.normalized.bone_scale);
  c.observed = bake_maps(c.normalized, map_resolution);
  const auto pw = pixel_weights(c.observed, c.skinning);
  // Raw maps sit at the template's own bone scales, which is the rest pose
  // their bone transforms are taken against.
  std::vector<double> ref;
  if (!normalize) ref = c.normalized.bone_scale;
  c.visibility = visibility_mask(c.observed, pw, c.normalized, c.skinning, seq.skeleton, poses, seq.cameras, ref);
  // Unseen texture is unknown from here on.
  for (const auto& p : c.observed.valid_pixels())
    if (!c.visibility.at(p.side, p.y, p.x))
      for (int k = 0; k < 3; ++k) c.observed.texture[p.side].at(k, p.y, p.x) = 0.0;
  auto maps = c.observed;
  const TexturePair tex = denoiser ? inpaint(c.observed, c.visibility, *denoiser, seed)
                                   : mean_color_fill(c.observed, c.visibility);
  c.inpainted = denoiser != nullptr;
  maps.texture = tex;
  // Map files hold float32; rounding here makes a saved and reloaded avatar
  // render exactly like the in-memory one.
  for (int s = 0; s < 2; ++s)
    for (auto* img : {&maps.position[s], &maps.texture[s], &maps.normal[s]})
      for (auto& v : img->data) v = static_cast<float>(v);
  c.context = make_context("subject", seq.skeleton, std::move(maps), c.skinning, ref);
  return c;
}

// ---- fine-tuning ----

double FinetuneReport::mean_psnr(const std::vector<FrameMetric>& m) {
  double s = 0;
  for (const auto& f : m) s += f.psnr;
  return m.empty() ? 0.0 : s / m.size();
}

void split_frames(int n, double holdout_fraction, std::vector<int>& train, std::vector<int>& heldout) {
  if (n < 1) throw DataError("split_frames: no frames");
  if (!(holdout_fraction >= 0.0 && holdout_fraction < 1.0)) throw ConfigError("holdout fraction must be in [0, 1)");
  const int nh = std::min(n - 1, static_cast<int>(std::floor(n * holdout_fraction + 1e-9)));
  train.clear();
  heldout.clear();
  for (int i = 0; i < n; ++i) (i < n - nh ? train : heldout).push_back(i);
}

std::vector<FrameMetric> evaluate_frames(const PersonalizedAvatar& avatar, const MonocularSequence& seq,
                                         const std::vector<int>& frames, const PipelineOptions& opts) {
  std::vector<FrameMetric> out;
  for (int f : frames) {
    const auto img = render_avatar(avatar.weights, avatar.context, avatar.poses.at(f), seq.cameras.at(f), opts);
    const auto& gt = seq.frames.at(f);
    out.push_back({f, psnr(img.rgb, gt.rgb), psnr_masked(img.rgb, gt.rgb, gt.alpha), ssim(img.rgb, gt.rgb)});
  }
  return out;
}

namespace {

Eigen::VectorXd pose_grad_vector(const PoseGrad& g) {
  const int n = static_cast<int>(g.theta.size());
  Eigen::VectorXd v(3 * n + 6);
  for (int j = 0; j < n; ++j) v.segment<3>(3 * j) = g.theta[j];
  v.segment<3>(3 * n) = g.root_rotation;
  v.segment<3>(3 * n + 3) = g.root_translation;
  return v;
}

}  // namespace

void fit_poses(const PersonalizedAvatar& avatar, const MonocularSequence& seq, const std::vector<int>& frames,
               std::vector<PoseParams>& poses, int iterations, double lr, const LossWeights& loss,
               const PipelineOptions& opts) {
  if (poses.size() != seq.frames.size()) throw ShapeError("fit_poses: one pose per frame expected");
  // Backward also accumulates network gradients; work on a copy so the
  // caller's weights are untouched.
  const UPMWeights w = clone_weights(avatar.weights);
  for (int f : frames) {
    const auto& cam = seq.cameras.at(f);
    AdamState adam;
    AdamConfig pc;
    pc.lr = static_cast<float>(lr);
    for (int it = 0; it < iterations; ++it) {
      auto st = avatar_forward(w, avatar.context, poses[f], cam, opts, true);
      ImageD d_rgb;
      std::vector<float> d_gmap;
      const auto terms = loss_total(st.image, seq.frames[f], st.gmap.values(), avatar.context.maps, loss, &d_rgb, &d_gmap);
      if (!std::isfinite(terms.total)) throw NumericalError("non-finite loss fitting the pose of frame " + std::to_string(f));
      const auto g = avatar_backward(st, avatar.context, cam, d_rgb, d_gmap, opts, true);
      Eigen::VectorXd x = pack(poses[f]);
      const Eigen::VectorXd gx = pose_grad_vector(g.pose);
      adam_step(std::span<double>(x.data(), x.size()), std::span<const double>(gx.data(), gx.size()), adam, pc);
      unpack(x, poses[f]);
    }
  }
}

PersonalizedAvatar finetune(const UPMWeights& prior, const MonocularSequence& seq, const Conditioning& cond,
                            const std::vector<PoseParams>& poses, const FinetuneConfig& cfg, FinetuneReport* report,
                            const std::function<void(int, const LossTerms&)>& progress) {
  seq.validate();
  if (cfg.iterations < 0) throw ConfigError("finetune: iterations must be >= 0");
  if (!(cfg.lr_network > 0 && cfg.lr_pose > 0 && cfg.lr_shape > 0)) throw ConfigError("finetune: learning rates must be > 0");
  if (!(cfg.shape_clamp >= 0)) throw ConfigError("finetune: shape clamp must be >= 0");
  if (poses.size() != seq.frames.size()) throw ShapeError("finetune: one pose per frame expected");
  std::vector<int> train, held;
  split_frames(seq.size(), cfg.holdout_fraction, train, held);

  PersonalizedAvatar av;
  av.weights = clone_weights(prior);
  av.context = cond.context;
  av.skinning = cond.skinning;
  av.shape = seq.beta;
  av.poses = poses;
  for (auto& p : av.poses) p.beta = av.shape;
  const auto shape0 = av.shape;
  if (report) {
    report->train_frames = train;
    report->heldout_frames = held;
    PersonalizedAvatar prior_only = av;
    fit_poses(prior_only, seq, held, prior_only.poses, cfg.heldout_pose_iterations, cfg.lr_pose, cfg.loss, cfg.pipeline);
    report->before = evaluate_frames(prior_only, seq, held, cfg.pipeline);
    report->curve.clear();
  }

  auto params = tensors_of(av.weights.params);
  AdamState net_adam, shape_adam;
  std::vector<AdamState> pose_adam(seq.size());
  std::mt19937_64 rng(mix_seed(cfg.seed, 0xF17E));
  const bool want_pose = cfg.optimize_poses || cfg.optimize_shape;
  for (int step = 0; step < cfg.iterations; ++step) {
    const int f = train[std::uniform_int_distribution<int>(0, static_cast<int>(train.size()) - 1)(rng)];
    const auto& cam = seq.cameras[f];
    auto st = avatar_forward(av.weights, av.context, av.poses[f], cam, cfg.pipeline, want_pose);
    ImageD d_rgb;
    std::vector<float> d_gmap;
    const auto terms = loss_total(st.image, seq.frames[f], st.gmap.values(), av.context.maps, cfg.loss, &d_rgb, &d_gmap);
    if (!std::isfinite(terms.total)) {
      std::ostringstream msg;
      msg << "non-finite fine-tuning loss at step " << step << " (frame " << f << "): l1=" << terms.l1
          << " grad=" << terms.grad << " offset=" << terms.offset;
      throw NumericalError(msg.str());
    }
    zero_grad(params);
    const auto g = avatar_backward(st, av.context, cam, d_rgb, d_gmap, cfg.pipeline, want_pose);
    AdamConfig ac;
    ac.lr = static_cast<float>(cfg.warmup_steps > 0 ? cfg.lr_network * std::min(1.0, (step + 1.0) / cfg.warmup_steps)
                                                    : cfg.lr_network);
    adam_step(params, net_adam, ac);
    if (cfg.optimize_poses) {
      Eigen::VectorXd x = pack(av.poses[f]);
      const Eigen::VectorXd gx = pose_grad_vector(g.pose);
      AdamConfig pc;
      pc.lr = static_cast<float>(cfg.lr_pose);
      adam_step(std::span<double>(x.data(), x.size()), std::span<const double>(gx.data(), gx.size()), pose_adam[f], pc);
      unpack(x, av.poses[f]);
    }
    if (cfg.optimize_shape) {
      AdamConfig sc;
      sc.lr = static_cast<float>(cfg.lr_shape);
      adam_step(av.shape, g.pose.beta, shape_adam, sc);
      for (size_t j = 0; j < av.shape.size(); ++j)
        av.shape[j] = std::clamp(av.shape[j], shape0[j] * (1.0 - cfg.shape_clamp), shape0[j] * (1.0 + cfg.shape_clamp));
      for (auto& p : av.poses) p.beta = av.shape;
    }
    if (report) report->curve.push_back(terms);
    if (progress) progress(step, terms);
  }
  fit_poses(av, seq, held, av.poses, cfg.heldout_pose_iterations, cfg.lr_pose, cfg.loss, cfg.pipeline);
  if (report) report->after = evaluate_frames(av, seq, held, cfg.pipeline);
  return av;
}

std::vector<RenderTarget> animate(const PersonalizedAvatar& avatar, const std::vector<PoseParams>& poses,
                                  const std::vector<Camera>& cameras, const PipelineOptions& opts) {
  if (cameras.empty() || (cameras.size() != 1 && cameras.size() != poses.size()))
    throw ShapeError("animate: need one camera per pose or a single camera");
  std::vector<RenderTarget> out;
  out.reserve(poses.size());
  for (size_t i = 0; i < poses.size(); ++i) {
    PoseParams p = poses[i];
    p.beta = avatar.shape;
    out.push_back(render_avatar(avatar.weights, avatar.context, p, cameras.size() == 1 ? cameras[0] : cameras[i], opts));
  }
  return out;
}

void save_avatar(const std::filesystem::path& dir, const PersonalizedAvatar& avatar) {
  std::filesystem::create_directories(dir);
  save_upm(dir / "avatar.avckpt", avatar.weights);
  save_maps(dir / "maps.avmaps", avatar.context.maps);
  save_skinning(dir / "skinning.avskin", avatar.skinning);
  save_skeleton(dir / "skeleton.json", avatar.context.skeleton);
  write_text_file(dir / "poses.json", poses_to_json(avatar.poses));
  write_text_file(dir / "shape.json", json(avatar.shape).dump());
  // Only avatars built on unnormalized maps have a rest-pose scale.
  if (!avatar.context.reference_beta.empty())
    write_text_file(dir / "reference_beta.json", json(avatar.context.reference_beta).dump());
  export_texture_png(dir / "texture.png", avatar.context.maps);
}

PersonalizedAvatar load_avatar(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw DataError("avatar directory not found: " + dir.string());
  PersonalizedAvatar av;
  av.weights = load_upm(dir / "avatar.avckpt");
  av.skinning = load_skinning(dir / "skinning.avskin");
  std::vector<double> ref;
  try {
    av.shape = json::parse(read_text_file(dir / "shape.json")).get<std::vector<double>>();
    if (std::filesystem::exists(dir / "reference_beta.json"))
      ref = json::parse(read_text_file(dir / "reference_beta.json")).get<std::vector<double>>();
  } catch (const json::exception& e) {
    throw DataError("bad shape.json or reference_beta.json in " + dir.string() + ": " + e.what());
  }
  av.context = make_context("subject", load_skeleton(dir / "skeleton.json"), load_maps(dir / "maps.avmaps"), av.skinning,
                            ref);
  av.poses = poses_from_json(read_text_file(dir / "poses.json"));
  if (static_cast<int>(av.shape.size()) != av.context.skeleton.size()) throw DataError("avatar shape length mismatch");
  return av;
}

}  // namespace avatar
