#pragma once

// Run configuration shared by the CLI subcommands. JSON with one section per
// stage; every field has a pinned default except the top-level seed.

#include <cstdint>
#include <filesystem>
#include <string>

#include "avatar/inpainting.hpp"
#include "avatar/personalization.hpp"
#include "avatar/training.hpp"

namespace avatar {

struct SequenceSetOptions {
  int count = 2;  // held-out identities written under sequences/
  int frames = 20;
  double pose_noise_deg = 5.0;
  double keypoint_noise_px = 0.5;
  double shape_noise = 0.02;
};

struct PersonalizeOptions {
  int map_resolution = 128;
  RefineOptions refine;
  FinetuneConfig finetune;
};

struct RunConfig {
  std::uint64_t seed = 0;
  CorpusOptions corpus;
  SequenceSetOptions sequences;
  UPMConfig upm;
  TrainingConfig training;
  DDPMConfig ddpm;
  InpainterTrainConfig inpainter;
  int masks_per_subject = 16;
  PersonalizeOptions personalize;
  PipelineOptions render;

  /// Copies seed, upm and render settings into the per-stage structs.
  void propagate();
};

/// Full effective config (every key, defaults filled in).
std::string config_to_json(const RunConfig& cfg);

/// Throws ConfigError naming the offending key: unknown keys, wrong types,
/// a missing seed, or values that fail validation.
RunConfig config_from_json(const std::string& text);
RunConfig load_config(const std::filesystem::path& path);

MonocularOptions sequence_options(const RunConfig& cfg, std::uint64_t seed);

}  // namespace avatar
