#include "avatar/pipeline.hpp"

#include "avatar/common.hpp"
#include "avatar/ops.hpp"

namespace avatar {

SubjectContext make_context(std::string id, const Skeleton& skel, CanonicalMapSet maps, const SkinningField& skinning,
                            std::vector<double> reference_beta) {
  SubjectContext c;
  c.id = std::move(id);
  c.skeleton = skel;
  c.weights = pixel_weights(maps, skinning);
  c.maps = std::move(maps);
  c.reference_beta = std::move(reference_beta);
  return c;
}

SubjectContext load_context(const CorpusSubject& s, bool normalized) {
  if (normalized) return make_context(s.id, s.skeleton, load_maps(s.maps_path()), load_skinning(s.maps_skinning_path()));
  return make_context(s.id, s.skeleton, load_maps(s.raw_maps_path()), load_skinning(s.skinning_path()), s.beta);
}

ForwardState avatar_forward(const UPMWeights& w, const SubjectContext& ctx, const PoseParams& pose, const Camera& cam,
                            const PipelineOptions& opts, bool input_grad) {
  ForwardState st;
  st.pose = pose;
  const auto posed = pose_maps(ctx.maps, ctx.weights, ctx.skeleton, pose, ctx.reference_beta);
  st.input = upm_input(ctx.maps, posed);
  if (input_grad) {
    const auto v = st.input.values();
    st.input = Tensor::from(st.input.shape(), {v.begin(), v.end()}, true);
  }
  st.gmap = unet_forward(w.config.unet(), w.params, st.input);
  check_finite(st.gmap, "prior network output");
  st.gaussians = extract_gaussians(st.gmap.values(), ctx.maps, opts.decode);
  st.bones = bone_transforms(ctx.skeleton, pose, ctx.reference_beta);
  st.splats = pose_gaussians(st.gaussians, ctx.weights, st.bones);
  st.image = render(st.splats, cam, opts.render, &st.record);
  return st;
}

AvatarGrad avatar_backward(ForwardState& st, const SubjectContext& ctx, const Camera& cam, const ImageD& d_rgb,
                           const std::vector<float>& d_gmap_extra, const PipelineOptions& opts, bool want_pose) {
  AvatarGrad out;
  const auto sg = render_backward(st.splats, cam, st.record, d_rgb, nullptr, opts.render);
  const auto pg = pose_gaussians_backward(st.gaussians, ctx.weights, st.bones, sg, want_pose);
  auto dg = extract_gaussians_backward(st.gmap.values(), ctx.maps, pg.gaussians, opts.decode);
  if (!d_gmap_extra.empty()) {
    if (d_gmap_extra.size() != dg.size()) throw ShapeError("extra gaussian-map gradient has the wrong size");
    for (size_t i = 0; i < dg.size(); ++i) dg[i] += d_gmap_extra[i];
  }
  backward(ops::dot_const(st.gmap, dg));
  if (!want_pose) return out;

  out.pose = bone_grad_to_pose(ctx.skeleton, st.pose, ctx.reference_beta, pg.bones);
  if (!st.input.requires_grad()) return out;
  // Network input path: P_d = sum_j w_j B_j(local pose) x for every valid pixel.
  const int r = ctx.maps.resolution, nb = ctx.skeleton.size();
  const size_t plane = size_t(r) * r;
  const auto gin = st.input.grad();
  const auto px = ctx.maps.valid_pixels();
  std::vector<Mat4d> db(nb, Mat4d::Zero());
  for (size_t i = 0; i < px.size(); ++i) {
    const auto& p = px[i];
    const size_t off = size_t(p.y) * r + p.x;
    Vec3d d;
    for (int k = 0; k < 3; ++k) d[k] = gin[(size_t(p.side) * 7 + 3 + k) * plane + off];
    if (d.isZero()) continue;
    Mat4d outer = Mat4d::Zero();
    outer.topRows<3>() = d * ctx.maps.pos(p).homogeneous().transpose();
    for (int j = 0; j < nb; ++j)
      if (ctx.weights(i, j) != 0.0) db[j] += ctx.weights(i, j) * outer;
  }
  PoseParams local = st.pose;
  local.root_rotation.setZero();
  local.root_translation.setZero();
  const auto g2 = bone_grad_to_pose(ctx.skeleton, local, ctx.reference_beta, db);
  for (int j = 0; j < nb; ++j) {
    out.pose.theta[j] += g2.theta[j];
    out.pose.beta[j] += g2.beta[j];
  }
  return out;
}

RenderTarget render_avatar(const UPMWeights& w, const SubjectContext& ctx, const PoseParams& pose, const Camera& cam,
                           const PipelineOptions& opts) {
  return avatar_forward(w, ctx, pose, cam, opts).image;
}

}  // namespace avatar
