#pragma once

// One avatar render: posed maps -> prior network -> Gaussian decode -> LBS
// (with root motion) -> splatting, and the reverse chain back onto network
// weights and, optionally, pose and shape.

#include <vector>

#include "avatar/losses.hpp"
#include "avatar/maps.hpp"
#include "avatar/posing.hpp"
#include "avatar/prior.hpp"
#include "avatar/splat.hpp"
#include "avatar/synth.hpp"

namespace avatar {

/// Canonical conditioning of one subject plus what posing needs.
struct SubjectContext {
  std::string id;
  Skeleton skeleton;
  CanonicalMapSet maps;
  Eigen::MatrixXd weights;             // skinning weights per valid pixel
  std::vector<double> reference_beta;  // scales the maps were baked at; empty = all ones
};

SubjectContext make_context(std::string id, const Skeleton& skel, CanonicalMapSet maps, const SkinningField& skinning,
                            std::vector<double> reference_beta = {});
/// normalized = true uses the average-scale maps, false the raw subject maps.
SubjectContext load_context(const CorpusSubject& subject, bool normalized = true);

struct PipelineOptions {
  DecodeOptions decode;
  RenderOptions render;
};

struct ForwardState {
  PoseParams pose;
  Tensor input;  // network input (requires grad when pose gradients are wanted)
  Tensor gmap;
  std::vector<Gaussian3D> gaussians;
  BoneTransforms bones;
  std::vector<Splat> splats;
  RenderRecord record;
  RenderTarget image;
};

ForwardState avatar_forward(const UPMWeights& w, const SubjectContext& ctx, const PoseParams& pose, const Camera& cam,
                            const PipelineOptions& opts = {}, bool input_grad = false);

struct AvatarGrad {
  PoseGrad pose;  // filled only when requested
};

/// Backpropagates dL/dimage (and any extra dL/dgmap, e.g. the offset term)
/// into the network parameters' gradients. With want_pose, also returns
/// dL/d(pose, shape) through both the Gaussian LBS and the posed-map input
/// (the forward must have been run with input_grad).
AvatarGrad avatar_backward(ForwardState& st, const SubjectContext& ctx, const Camera& cam, const ImageD& d_rgb,
                           const std::vector<float>& d_gmap_extra, const PipelineOptions& opts = {},
                           bool want_pose = false);

/// Forward only.
RenderTarget render_avatar(const UPMWeights& w, const SubjectContext& ctx, const PoseParams& pose, const Camera& cam,
                           const PipelineOptions& opts = {});

}  // namespace avatar
