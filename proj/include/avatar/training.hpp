#pragma once

// Multi-identity training of the prior over a synthetic corpus.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <vector>

#include "avatar/losses.hpp"
#include "avatar/pipeline.hpp"
#include "avatar/prior.hpp"
#include "avatar/synth.hpp"

namespace avatar {

struct TrainingConfig {
  int iterations = 2000;
  double lr = 1e-3;
  int warmup_steps = 50;  // linear ramp, then constant
  LossWeights loss;
  std::uint64_t seed = 1;
  // Batch policy: one (subject, frame, camera) sample per step, drawn
  // uniformly from the first `subjects` subjects (or `subject_list`), their
  // first `frames` frames and first `cameras` cameras. 0 = all.
  int subjects = 0, frames = 0, cameras = 0;
  std::vector<int> subject_list;
  bool normalized = true;  // train on skeleton-normalized maps
  int checkpoint_every = 500;
  UPMConfig upm;
  PipelineOptions pipeline;
};

struct TrainSample {
  int subject, frame, camera;
};

struct TrainResult {
  UPMWeights weights;
  std::vector<LossTerms> curve;
  std::vector<TrainSample> samples;
};

/// Uses `init` as the starting weights when given, else init_upm(seed).
/// Writes ckpt_<step>.avckpt, final.avckpt and loss.csv into out_dir when
/// it is non-empty. Throws NumericalError on a non-finite loss.
TrainResult train_prior(const CorpusIndex& corpus, const TrainingConfig& cfg, const std::filesystem::path& out_dir = {},
                        const UPMWeights* init = nullptr,
                        const std::function<void(int, const LossTerms&)>& progress = {});

/// Mean foreground PSNR of the prior's renders against the corpus ground
/// truth over the given views.
struct ViewMetric {
  int subject, frame, camera;
  double psnr, psnr_fg, ssim;
};
std::vector<ViewMetric> evaluate_views(const UPMWeights& w, const CorpusIndex& corpus, const std::vector<TrainSample>& views,
                                       bool normalized = true, const PipelineOptions& opts = {});

}  // namespace avatar
