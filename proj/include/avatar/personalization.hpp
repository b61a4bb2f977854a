#pragma once

// Adapting the prior to one monocular sequence: keypoint pose refinement,
// conditioning maps (normalized template, visibility, inpainted texture),
// joint fine-tuning of network, poses and shape, and animation.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "avatar/inpainting.hpp"
#include "avatar/losses.hpp"
#include "avatar/pipeline.hpp"
#include "avatar/prior.hpp"
#include "avatar/synth.hpp"

namespace avatar {

struct MonocularSequence {
  std::vector<RenderTarget> frames;           // color over black + alpha
  std::vector<Camera> cameras;                // one per frame
  std::vector<PoseParams> poses;              // initial (noisy) estimates
  std::vector<std::vector<Vec2d>> keypoints;  // 2D detections per frame, keypoints_3d order
  Skeleton skeleton;
  TexturedTemplate tmpl;      // canonical-pose template at the subject's scale
  std::vector<double> beta;   // shape estimate
  std::vector<PoseParams> gt_poses;  // synthetic ground truth, may be empty

  int size() const { return static_cast<int>(frames.size()); }
  void validate() const;
};

struct MonocularOptions {
  int frames = 20;
  int resolution = 256;
  double pose_noise_deg = 5.0;  // every joint rotated by this angle about a random axis
  double keypoint_noise_px = 0.5;
  double shape_noise = 0.02;    // multiplicative, uniform
  PoseSequenceOptions motion;
  RigOptions rig;               // camera 0 of this rig films every frame
  WrinkleOptions wrinkles;
  int supersample = 2;
  std::uint64_t seed = 1;
};

/// Renders one fixed camera over a random motion of `subject` and perturbs
/// poses, shape and keypoints the way an external tracker would.
MonocularSequence make_monocular_sequence(const SyntheticSubject& subject, const MonocularOptions& opts);

/// Rotates every joint of `pose` by `degrees` about a random axis.
PoseParams perturb_pose(const PoseParams& pose, double degrees, std::uint64_t seed);

/// Directory layout: frames/<nnnn>.png, cameras.json, poses.json,
/// keypoints.json, skeleton.json, template.avmesh, shape.json and, when
/// known, gt_poses.json.
void save_sequence(const std::filesystem::path& dir, const MonocularSequence& seq);
MonocularSequence load_sequence(const std::filesystem::path& dir);

// ---- pose refinement ----

struct RefineOptions {
  int max_iterations = 300;
  double initial_step = 1.0;  // on the diagonally preconditioned gradient
  double tolerance = 1e-10;   // stop when the error changes less than this (px^2)
  int patience = 3;           // consecutive increases that count as divergence
  // Quadratic pull toward the initial estimate (px^2 per rad^2 or m^2); keeps
  // directions the keypoints cannot see, like twist about a bone, in place.
  double prior_weight = 0.3;
  double max_step = 0.02;  // largest change of any parameter per iteration (rad or m)
  std::function<void(const std::string&)> warn;  // default: stderr
};

struct RefineResult {
  std::vector<PoseParams> poses;
  std::vector<double> initial_error, final_error;  // mean joint error per frame, px
  std::vector<std::vector<double>> best_so_far;    // per frame, per outer iteration, px
  std::vector<int> diverged;                       // frame indices that hit the divergence rule
  double mean_initial() const;
  double mean_final() const;
};

/// Mean 2D distance (px) between projected skeleton keypoints and detections.
double reprojection_error(const Skeleton& skel, const PoseParams& pose, const Camera& cam,
                          const std::vector<Vec2d>& keypoints);

/// Gradient descent on the squared reprojection error (plus the prior term)
/// over joint rotations and root motion; bone scales are left alone. Each
/// frame keeps its best iterate.
RefineResult refine_poses(const MonocularSequence& seq, const RefineOptions& opts = {});

// ---- conditioning ----

struct Conditioning {
  int keyframe = 0;
  TexturedTemplate normalized;  // the template the maps were baked from
  SkinningField skinning;
  CanonicalMapSet observed;  // maps as baked, texture unseen outside `visibility`
  VisibilityMask visibility;
  SubjectContext context;    // final maps (inpainted texture) + pixel weights
  bool inpainted = false;
};

/// denoiser == nullptr skips the learned inpainter: unseen texels get the
/// mean seen color instead. normalize = false bakes the template at the
/// subject's own scale (for priors trained without normalization).
Conditioning build_conditioning(const MonocularSequence& seq, const std::vector<PoseParams>& poses, int map_resolution,
                                const DenoiserWeights* denoiser, std::uint64_t seed = 1, bool normalize = true);

// ---- fine-tuning ----

struct FinetuneConfig {
  int iterations = 2000;
  double lr_network = 1e-4, lr_pose = 1e-3, lr_shape = 1e-4;
  int warmup_steps = 50;
  double shape_clamp = 0.1;  // beta stays within +-10% of its initial estimate
  double holdout_fraction = 0.2;
  bool optimize_poses = true, optimize_shape = true;
  // Held-out frames get this many photometric pose steps (lr_pose, network
  // frozen) before they are scored, for the prior and the fine-tuned model
  // alike. 0 scores them at their input poses.
  int heldout_pose_iterations = 100;
  LossWeights loss;
  PipelineOptions pipeline;
  std::uint64_t seed = 1;
};

struct FrameMetric {
  int frame = 0;
  double psnr = 0, psnr_fg = 0, ssim = 0;
};

struct FinetuneReport {
  std::vector<int> train_frames, heldout_frames;
  std::vector<FrameMetric> before, after;  // held-out frames
  std::vector<LossTerms> curve;
  static double mean_psnr(const std::vector<FrameMetric>& m);
};

struct PersonalizedAvatar {
  UPMWeights weights;
  SubjectContext context;
  SkinningField skinning;
  std::vector<PoseParams> poses;  // per sequence frame; training frames refined jointly
  std::vector<double> shape;
};

/// Train frames come first; the last holdout_fraction of frames (rounded
/// down) is held out. Held-out frames start from their input poses with
/// the fitted shape; the returned avatar carries their fitted poses.
PersonalizedAvatar finetune(const UPMWeights& prior, const MonocularSequence& seq, const Conditioning& cond,
                            const std::vector<PoseParams>& poses, const FinetuneConfig& cfg,
                            FinetuneReport* report = nullptr,
                            const std::function<void(int, const LossTerms&)>& progress = {});

/// Split used by finetune.
void split_frames(int n, double holdout_fraction, std::vector<int>& train, std::vector<int>& heldout);

/// Adam on the rotations and root motion of `frames` against the
/// sequence images with the avatar's network frozen; shape is left alone.
void fit_poses(const PersonalizedAvatar& avatar, const MonocularSequence& seq, const std::vector<int>& frames,
               std::vector<PoseParams>& poses, int iterations, double lr, const LossWeights& loss,
               const PipelineOptions& opts = {});

std::vector<FrameMetric> evaluate_frames(const PersonalizedAvatar& avatar, const MonocularSequence& seq,
                                         const std::vector<int>& frames, const PipelineOptions& opts = {});

/// One render per (pose, camera); a single camera is reused for every pose.
std::vector<RenderTarget> animate(const PersonalizedAvatar& avatar, const std::vector<PoseParams>& poses,
                                  const std::vector<Camera>& cameras, const PipelineOptions& opts = {});

/// avatar.avckpt, maps.avmaps, skinning.avskin, skeleton.json, poses.json,
/// shape.json, texture.png (front | back) and, for avatars on unnormalized
/// maps, reference_beta.json.
void save_avatar(const std::filesystem::path& dir, const PersonalizedAvatar& avatar);
PersonalizedAvatar load_avatar(const std::filesystem::path& dir);

}  // namespace avatar
