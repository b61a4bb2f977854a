#include "avatar/training.hpp"

#include <cmath>
#include <fstream>
#include <map>
#include <random>
#include <sstream>

#include "avatar/common.hpp"
#include "avatar/optim.hpp"

namespace avatar {

namespace {

std::vector<int> chosen_subjects(const CorpusIndex& corpus, const TrainingConfig& cfg) {
  std::vector<int> ids = cfg.subject_list;
  if (ids.empty()) {
    const int n = cfg.subjects > 0 ? std::min<int>(cfg.subjects, corpus.subjects.size()) : corpus.subjects.size();
    for (int i = 0; i < n; ++i) ids.push_back(i);
  }
  for (int i : ids)
    if (i < 0 || i >= static_cast<int>(corpus.subjects.size()))
      throw ConfigError("training: subject index " + std::to_string(i) + " out of range");
  if (ids.empty()) throw DataError("training: corpus is empty");
  return ids;
}

}  // namespace

TrainResult train_prior(const CorpusIndex& corpus, const TrainingConfig& cfg, const std::filesystem::path& out_dir,
                        const UPMWeights* init, const std::function<void(int, const LossTerms&)>& progress) {
  if (cfg.iterations < 0 || !(cfg.lr > 0)) throw ConfigError("training: iterations must be >= 0 and lr > 0");
  const auto ids = chosen_subjects(corpus, cfg);
  TrainResult res;
  res.weights = init ? clone_weights(*init) : init_upm(cfg.seed, cfg.upm);

  std::map<int, SubjectContext> ctx;
  for (int i : ids) ctx.emplace(i, load_context(corpus.subjects[i], cfg.normalized));

  std::ofstream log;
  if (!out_dir.empty()) {
    std::filesystem::create_directories(out_dir);
    log.open(out_dir / "loss.csv");
    if (!log) throw DataError("cannot write " + (out_dir / "loss.csv").string());
    log << "step,total,l1,grad,offset,lr\n";
    log.precision(9);
  }

  std::mt19937_64 rng(cfg.seed ^ 0x7A11u);
  AdamState adam;
  auto params = tensors_of(res.weights.params);
  for (int step = 0; step < cfg.iterations; ++step) {
    const int si = ids[std::uniform_int_distribution<int>(0, static_cast<int>(ids.size()) - 1)(rng)];
    const auto& subj = corpus.subjects[si];
    const int nf = cfg.frames > 0 ? std::min<int>(cfg.frames, subj.poses.size()) : subj.poses.size();
    const int nc = cfg.cameras > 0 ? std::min<int>(cfg.cameras, subj.cameras.size()) : subj.cameras.size();
    const int fi = std::uniform_int_distribution<int>(0, nf - 1)(rng);
    const int ci = std::uniform_int_distribution<int>(0, nc - 1)(rng);
    res.samples.push_back({si, fi, ci});

    const auto& c = ctx.at(si);
    const auto& cam = subj.cameras[ci];
    auto st = avatar_forward(res.weights, c, subj.poses[fi], cam, cfg.pipeline);
    const auto gt = load_rgba(subj.gt_path(ci, fi));
    ImageD d_rgb;
    std::vector<float> d_gmap;
    const auto terms = loss_total(st.image, gt, st.gmap.values(), c.maps, cfg.loss, &d_rgb, &d_gmap);
    if (!std::isfinite(terms.total)) {
      std::ostringstream msg;
      msg << "non-finite training loss at step " << step << " (subject " << subj.id << ", frame " << fi << ", camera "
          << ci << "): l1=" << terms.l1 << " grad=" << terms.grad << " offset=" << terms.offset;
      throw NumericalError(msg.str());
    }
    zero_grad(params);
    avatar_backward(st, c, cam, d_rgb, d_gmap, cfg.pipeline);
    AdamConfig ac;
    ac.lr = static_cast<float>(cfg.warmup_steps > 0 ? cfg.lr * std::min(1.0, (step + 1.0) / cfg.warmup_steps) : cfg.lr);
    adam_step(params, adam, ac);
    res.curve.push_back(terms);
    if (log) log << step << ',' << terms.total << ',' << terms.l1 << ',' << terms.grad << ',' << terms.offset << ','
                 << ac.lr << '\n';
    if (progress) progress(step, terms);
    if (!out_dir.empty() && cfg.checkpoint_every > 0 && (step + 1) % cfg.checkpoint_every == 0)
      save_upm(out_dir / ("ckpt_" + std::to_string(step + 1) + ".avckpt"), res.weights);
  }
  if (!out_dir.empty()) save_upm(out_dir / "final.avckpt", res.weights);
  return res;
}

std::vector<ViewMetric> evaluate_views(const UPMWeights& w, const CorpusIndex& corpus, const std::vector<TrainSample>& views,
                                       bool normalized, const PipelineOptions& opts) {
  std::map<int, SubjectContext> ctx;
  std::vector<ViewMetric> out;
  for (const auto& v : views) {
    if (!ctx.count(v.subject)) ctx.emplace(v.subject, load_context(corpus.subjects.at(v.subject), normalized));
    const auto& subj = corpus.subjects[v.subject];
    const auto img = render_avatar(w, ctx.at(v.subject), subj.poses.at(v.frame), subj.cameras.at(v.camera), opts);
    const auto gt = load_rgba(subj.gt_path(v.camera, v.frame));
    out.push_back({v.subject, v.frame, v.camera, psnr(img.rgb, gt.rgb), psnr_masked(img.rgb, gt.rgb, gt.alpha),
                   ssim(img.rgb, gt.rgb)});
  }
  return out;
}

}  // namespace avatar
