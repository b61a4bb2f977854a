#pragma once

// Procedural capsule bodies with painted vertex colors, smooth random pose
// sequences, camera rings, and the on-disk training corpus built from them.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "avatar/maps.hpp"
#include "avatar/mesh_render.hpp"
#include "avatar/skeleton.hpp"
#include "avatar/splat.hpp"
#include "avatar/template.hpp"

namespace avatar {

enum class TextureProgram : int { kStripes = 0, kChecker = 1, kBlocks = 2, kNoise = 3 };

struct ProceduralBodySpec {
  std::uint64_t seed = 0;
  std::vector<double> beta = std::vector<double>(17, 1.0);
  // Limb radii in meters at beta = 1.
  double torso_rx = 0.15, torso_rz = 0.10;
  double head_r = 0.095;
  double upper_arm_r = 0.050, forearm_r = 0.040;
  double thigh_r = 0.075, shin_r = 0.055;
  TextureProgram program = TextureProgram::kStripes;
  Vec3d skin = Vec3d(0.85, 0.65, 0.5), shirt = Vec3d(0.2, 0.35, 0.7), pants = Vec3d(0.25, 0.25, 0.3);
  Vec3d accent = Vec3d(0.9, 0.9, 0.85);
  double pattern_period = 0.10;  // meters
  double pattern_phase = 0.0;
  int segments = 24;        // vertices around each capsule
  double ring_spacing = 0.02;  // meters between rings along a capsule

  void validate() const;
};

/// Seeded random spec: bone scales in [0.9, 1.12] (left/right symmetric),
/// radii within +-15%, random palette and texture program.
ProceduralBodySpec random_body_spec(std::uint64_t seed);

struct SyntheticSubject {
  ProceduralBodySpec spec;
  Skeleton skeleton;
  TexturedTemplate tmpl;  // canonical pose, subject bone scales
  SkinningField skinning;
};

SyntheticSubject generate_subject(const ProceduralBodySpec& spec);

struct WrinkleOptions {
  double displacement = 0.006;  // meters at a full bend
  double shading = 0.25;        // darkening at a full bend
  double wavelength = 0.05;
};

/// Posed template vertices and colors for one frame, including the
/// pose-dependent wrinkle displacement/shading around elbows and knees.
void pose_template(const TexturedTemplate& tmpl, const Skeleton& skel, const SkinningField& skinning,
                   const PoseParams& pose, const WrinkleOptions& wr, std::vector<Vec3d>& vertices,
                   std::vector<Vec3d>& colors);

RenderTarget render_ground_truth(const TexturedTemplate& tmpl, const Skeleton& skel, const SkinningField& skinning,
                                 const PoseParams& pose, const Camera& cam, const WrinkleOptions& wr = {},
                                 const MeshRenderOptions& mo = {});

struct PoseSequenceOptions {
  double amplitude = 1.0;   // scales every joint's range
  double root_yaw = 0.5;    // radians
  double root_shift = 0.05; // meters
};

/// Band-limited joint trajectories; frame 0 is the canonical pose. Every
/// frame carries the given bone scales.
std::vector<PoseParams> random_pose_sequence(const Skeleton& skel, const std::vector<double>& beta, int frames,
                                             std::uint64_t seed, const PoseSequenceOptions& opts = {});

struct RigOptions {
  int width = 256, height = 256;
  double distance = 3.0;
  double focal_factor = 1.3;  // focal length = factor * width
  double elevation = 0.15;    // radians, alternating sign around the ring
  Vec3d target = Vec3d(0.0, -0.05, 0.0);
};

/// n cameras evenly spaced in azimuth around the target; camera 0 looks at
/// the body's front (+z side).
std::vector<Camera> camera_ring(int n, const RigOptions& opts = {}, double azimuth_offset = 0.0);

// ---- corpus ----

struct CorpusOptions {
  int subjects = 8, frames = 32, cameras = 8;
  int map_resolution = 128;
  std::uint64_t seed = 1;
  RigOptions rig;
  WrinkleOptions wrinkles;
  PoseSequenceOptions motion;
  int supersample = 2;
};

struct CorpusSubject {
  std::string id;
  std::filesystem::path dir;
  Skeleton skeleton;
  std::vector<double> beta;
  std::vector<PoseParams> poses;
  std::vector<Camera> cameras;

  std::filesystem::path template_path() const { return dir / "template.avmesh"; }
  std::filesystem::path skinning_path() const { return dir / "skinning.avskin"; }
  /// Maps of the normalized (average-scale) template and their skinning.
  std::filesystem::path maps_path() const { return dir / "maps" / "normalized.avmaps"; }
  std::filesystem::path maps_skinning_path() const { return dir / "maps" / "normalized.avskin"; }
  /// Maps baked from the subject template without normalization.
  std::filesystem::path raw_maps_path() const { return dir / "maps" / "raw.avmaps"; }
  std::filesystem::path gt_path(int cam, int frame) const;
};

struct CorpusIndex {
  std::filesystem::path root;
  CorpusOptions options;
  std::vector<CorpusSubject> subjects;
  int image_count() const;
};

/// Writes subjects/<id>/{template, skinning, skeleton.json, spec.json,
/// poses.json, cameras.json, maps/, gt/<cam>/<frame>.png} and manifest.json.
CorpusIndex generate_corpus(const CorpusOptions& opts, const std::filesystem::path& out_dir);
CorpusIndex load_corpus(const std::filesystem::path& root);

// Structured-text helpers shared with the CLI.
std::string poses_to_json(const std::vector<PoseParams>& poses);
std::vector<PoseParams> poses_from_json(const std::string& text);
std::string cameras_to_json(const std::vector<Camera>& cams);
std::vector<Camera> cameras_from_json(const std::string& text);

/// Loads an RGBA ground-truth PNG as (color over black, alpha).
RenderTarget load_rgba(const std::filesystem::path& path);
void save_rgba(const std::filesystem::path& path, const RenderTarget& rt);

}  // namespace avatar
