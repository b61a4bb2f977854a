// avatar: command-line driver for corpus generation, prior and inpainter
// training, personalization, animation and evaluation.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <random>
#include <sstream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "avatar/binary_io.hpp"
#include "avatar/config.hpp"
#include "avatar/gradcheck.hpp"
#include "avatar/image.hpp"
#include "avatar/inpainting.hpp"
#include "avatar/personalization.hpp"
#include "avatar/training.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace avatar;

namespace {

enum Exit { kOk = 0, kOther = 1, kConfig = 2, kData = 3, kNumerical = 4 };

const auto t_start = std::chrono::steady_clock::now();
bool quiet = false;

template <typename... A>
void log(const char* fmt, A... args) {
  if (quiet) return;
  const double t = std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
  std::fprintf(stderr, "[%8.1fs] ", t);
  if constexpr (sizeof...(A) == 0)
    std::fputs(fmt, stderr);
  else
    std::fprintf(stderr, fmt, args...);
  std::fputc('\n', stderr);
}

// Output directory that stays marked INCOMPLETE until finish() runs.
class RunDir {
 public:
  explicit RunDir(fs::path dir) : dir_(std::move(dir)) {
    fs::create_directories(dir_);
    write_text_file(dir_ / "INCOMPLETE", "run did not finish\n");
  }
  const fs::path& path() const { return dir_; }
  fs::path operator/(const std::string& name) const { return dir_ / name; }
  void finish() { fs::remove(dir_ / "INCOMPLETE"); }

 private:
  fs::path dir_;
};

void echo_config(const RunDir& dir, const RunConfig& cfg) { write_text_file(dir / "config.json", config_to_json(cfg) + "\n"); }

std::string g17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

void write_loss_csv(const fs::path& p, const std::vector<LossTerms>& curve) {
  std::ostringstream s;
  s << "step,total,l1,grad,offset\n";
  for (size_t i = 0; i < curve.size(); ++i)
    s << i << ',' << g17(curve[i].total) << ',' << g17(curve[i].l1) << ',' << g17(curve[i].grad) << ','
      << g17(curve[i].offset) << '\n';
  write_text_file(p, s.str());
}

void write_metrics(const fs::path& dir, const std::vector<std::pair<std::string, std::vector<FrameMetric>>>& sets) {
  std::ostringstream csv, sum;
  csv << "stage,frame,psnr,psnr_fg,ssim\n";
  for (const auto& [stage, ms] : sets) {
    double p = 0, pf = 0, s = 0;
    for (const auto& m : ms) {
      csv << stage << ',' << m.frame << ',' << g17(m.psnr) << ',' << g17(m.psnr_fg) << ',' << g17(m.ssim) << '\n';
      p += m.psnr;
      pf += m.psnr_fg;
      s += m.ssim;
    }
    const double n = std::max<size_t>(1, ms.size());
    char line[200];
    std::snprintf(line, sizeof line, "%-8s %3zu frames  PSNR %6.2f dB  fg PSNR %6.2f dB  SSIM %.4f\n", stage.c_str(),
                  ms.size(), p / n, pf / n, s / n);
    sum << line;
  }
  write_text_file(dir / "metrics.csv", csv.str());
  write_text_file(dir / "summary.txt", sum.str());
  if (!quiet) std::cout << sum.str();
}

fs::path prior_file(const fs::path& p) {
  if (fs::is_directory(p)) return p / "final.avckpt";
  return p;
}

// ---- subcommands ----

int gen_corpus(const RunConfig& cfg, const fs::path& out) {
  RunDir dir(out);
  echo_config(dir, cfg);
  log("generating %d subjects x %d frames x %d cameras", cfg.corpus.subjects, cfg.corpus.frames, cfg.corpus.cameras);
  generate_corpus(cfg.corpus, out);
  for (int i = 0; i < cfg.sequences.count; ++i) {
    // Identities disjoint from the corpus subjects.
    const std::uint64_t sseed = mix_seed(cfg.seed, 5000 + i);
    const auto subject = generate_subject(random_body_spec(sseed));
    char id[32];
    std::snprintf(id, sizeof id, "heldout_%02d", i);
    log("sequence %s (%d frames)", id, cfg.sequences.frames);
    save_sequence(out / "sequences" / id, make_monocular_sequence(subject, sequence_options(cfg, mix_seed(sseed, 1))));
  }
  dir.finish();
  return kOk;
}

int train_prior_cmd(const RunConfig& cfg, const fs::path& corpus_dir, const fs::path& out) {
  const auto corpus = load_corpus(corpus_dir);
  RunDir dir(out);
  echo_config(dir, cfg);
  log("training prior: %d iterations, %s maps", cfg.training.iterations,
      cfg.training.normalized ? "normalized" : "raw");
  const auto r = train_prior(corpus, cfg.training, out, nullptr, [](int step, const LossTerms& t) {
    if (step % 100 == 0) log("step %5d  loss %.5f  l1 %.5f", step, t.total, t.l1);
  });
  std::ostringstream s;
  s << "iterations " << r.curve.size() << "\n";
  if (!r.curve.empty()) s << "final loss " << r.curve.back().total << "\n";
  write_text_file(dir / "summary.txt", s.str());
  dir.finish();
  return kOk;
}

int train_inpainter_cmd(const RunConfig& cfg, const fs::path& corpus_dir, const fs::path& out) {
  const auto corpus = load_corpus(corpus_dir);
  RunDir dir(out);
  echo_config(dir, cfg);
  std::vector<InpaintExample> data;
  for (size_t i = 0; i < corpus.subjects.size(); ++i) {
    const auto& s = corpus.subjects[i];
    const auto norm = normalize_template(load_template(s.template_path()), s.skeleton);
    const auto skin = load_skinning(s.maps_skinning_path());
    InpaintExample e;
    e.maps = load_maps(s.maps_path());
    const auto pw = pixel_weights(e.maps, skin);
    for (int m = 0; m < cfg.masks_per_subject; ++m)
      e.masks.push_back(random_visibility(e.maps, pw, norm, skin, s.skeleton, mix_seed(cfg.seed, 1000 * i + m)));
    data.push_back(std::move(e));
  }
  log("training inpainter on %zu identities, %d iterations", data.size(), cfg.inpainter.iterations);
  const auto r = train_inpainter(data, cfg.ddpm, cfg.inpainter, nullptr, [](int step, double l) {
    if (step % 250 == 0) log("step %5d  eps-mse %.5f", step, l);
  });
  save_denoiser(dir / "denoiser.avckpt", r.weights);
  std::ostringstream s;
  s << "step,eps_mse\n";
  for (size_t i = 0; i < r.curve.size(); ++i) s << i << ',' << g17(r.curve[i]) << '\n';
  write_text_file(dir / "loss.csv", s.str());
  dir.finish();
  return kOk;
}

int personalize_cmd(const RunConfig& cfg, const fs::path& prior_path, const fs::path& seq_dir, const fs::path& out,
                    const std::optional<fs::path>& inpainter, bool skip_inpaint) {
  const auto prior = load_upm(prior_file(prior_path));
  const auto seq = load_sequence(seq_dir);
  RunDir dir(out);
  echo_config(dir, cfg);

  auto ro = cfg.personalize.refine;
  ro.warn = [](const std::string& m) { log("warning: %s", m.c_str()); };
  const auto rr = refine_poses(seq, ro);
  log("pose refinement: %.3f -> %.3f px mean keypoint error", rr.mean_initial(), rr.mean_final());
  {
    std::ostringstream s;
    s << "frame,initial_px,final_px,diverged\n";
    for (int f = 0; f < seq.size(); ++f)
      s << f << ',' << g17(rr.initial_error[f]) << ',' << g17(rr.final_error[f]) << ','
        << (std::find(rr.diverged.begin(), rr.diverged.end(), f) != rr.diverged.end()) << '\n';
    write_text_file(dir / "refine.csv", s.str());
  }

  std::optional<DenoiserWeights> den;
  if (!skip_inpaint) {
    if (inpainter)
      den = load_denoiser(fs::is_directory(*inpainter) ? *inpainter / "denoiser.avckpt" : *inpainter);
    else
      log("no --inpainter given; unseen texels get the mean seen color");
  }
  const auto cond = build_conditioning(seq, rr.poses, cfg.personalize.map_resolution, den ? &*den : nullptr, cfg.seed,
                                       cfg.training.normalized);
  log("conditioning: keyframe %d, %.1f%% of texels seen", cond.keyframe,
      100.0 * cond.visibility.count() / std::max(1, cond.observed.valid_count()));

  FinetuneReport rep;
  const auto av = finetune(prior, seq, cond, rr.poses, cfg.personalize.finetune, &rep, [](int step, const LossTerms& t) {
    if (step % 100 == 0) log("finetune step %5d  loss %.5f", step, t.total);
  });
  save_avatar(out, av);
  write_loss_csv(dir / "loss.csv", rep.curve);
  write_metrics(out, {{"before", rep.before}, {"after", rep.after}});
  dir.finish();
  return kOk;
}

int eval_cmd(const fs::path& avatar_dir, const fs::path& seq_dir, const fs::path& out) {
  const auto av = load_avatar(avatar_dir);
  if (!fs::exists(avatar_dir / "config.json")) throw DataError("avatar directory has no config.json");
  const auto cfg = load_config(avatar_dir / "config.json");
  const auto seq = load_sequence(seq_dir);
  if (static_cast<int>(av.poses.size()) != seq.size())
    throw DataError("avatar has " + std::to_string(av.poses.size()) + " poses but the sequence has " +
                    std::to_string(seq.size()) + " frames");
  std::vector<int> train, held;
  split_frames(seq.size(), cfg.personalize.finetune.holdout_fraction, train, held);
  RunDir dir(out);
  write_metrics(out, {{"after", evaluate_frames(av, seq, held, cfg.render)}});
  dir.finish();
  return kOk;
}

// Script: {"poses": <pose file>, "cameras": <camera file>} or, instead of
// poses, {"random": {"count": n, "seed": s, "amplitude": a}}. Without
// cameras one front camera of the given "width" (default 256) is used.
int animate_cmd(const fs::path& avatar_dir, const fs::path& script, const fs::path& out) {
  const auto av = load_avatar(avatar_dir);
  const auto cfg = fs::exists(avatar_dir / "config.json") ? std::optional(load_config(avatar_dir / "config.json"))
                                                          : std::nullopt;
  json s;
  try {
    s = json::parse(read_text_file(script));
  } catch (const json::exception& e) {
    throw DataError("bad animation script: " + std::string(e.what()));
  }
  std::vector<PoseParams> poses;
  std::vector<Camera> cams;
  try {
    for (auto it = s.begin(); it != s.end(); ++it)
      if (it.key() != "poses" && it.key() != "random" && it.key() != "cameras" && it.key() != "width")
        throw DataError("unknown script key: " + it.key());
    if (s.contains("poses")) {
      poses = poses_from_json(s["poses"].dump());
    } else if (s.contains("random")) {
      const auto& r = s["random"];
      PoseSequenceOptions po;
      po.amplitude = r.value("amplitude", 1.0);
      poses = random_pose_sequence(av.context.skeleton, av.shape, r.value("count", 50), r.value("seed", 1), po);
    } else {
      throw DataError("animation script needs \"poses\" or \"random\"");
    }
    if (s.contains("cameras")) {
      cams = cameras_from_json(s["cameras"].dump());
    } else {
      RigOptions rig;
      rig.width = rig.height = s.value("width", 256);
      cams = camera_ring(1, rig);
    }
  } catch (const json::exception& e) {
    throw DataError("bad animation script: " + std::string(e.what()));
  }
  if (cams.size() != 1 && cams.size() != poses.size()) throw DataError("script needs one camera or one per pose");
  RunDir dir(out);
  const auto frames = animate(av, poses, cams, cfg ? cfg->render : PipelineOptions{});
  for (size_t i = 0; i < frames.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "%04zu.png", i);
    write_png(dir / name, to_rgba(frames[i]));
  }
  log("wrote %zu frames", frames.size());
  dir.finish();
  return kOk;
}

int grad_check_cmd(int scenes, std::uint64_t seed) {
  auto results = tensor_gradcheck_suite(seed);
  const auto splat = splat_gradcheck_suite(scenes, seed);
  results.insert(results.end(), splat.begin(), splat.end());
  bool ok = true;
  for (const auto& r : results) {
    std::printf("%-32s max rel err %.3e  (< %.0e)  %s\n", r.name.c_str(), r.max_rel_error, r.threshold,
                r.passed() ? "ok" : "FAIL");
    ok = ok && r.passed();
  }
  return ok ? kOk : kNumerical;
}

int bench_cmd(int gaussians, int size, int frames, std::uint64_t seed) {
  const auto scene = random_splat_scene(seed, gaussians, size);
  std::vector<Splat> splats;
  for (const auto& g : scene.gaussians) splats.push_back(to_splat(g));
  render(splats, scene.camera);  // warm-up
  const auto t0 = std::chrono::steady_clock::now();
  double checksum = 0;
  for (int i = 0; i < frames; ++i) checksum += render(splats, scene.camera).alpha.data[0];
  const double ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count() / frames;
  std::printf("%d gaussians, %dx%d, %d threads: %.3f ms/frame (checksum %.6f)\n", gaussians, size, size, max_threads(),
              ms, checksum);
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Gaussian avatar toolkit: corpus, prior, inpainter, personalization, animation"};
  app.require_subcommand(1);
  int threads = 0;
  app.add_option("--threads", threads, "Cap on worker threads (0 = all cores)")->check(CLI::NonNegativeNumber);
  app.add_flag("-q,--quiet", quiet, "No progress logging");

  std::string config, out, corpus, prior, seq, avatar_dir, script, inpainter;
  bool skip_inpaint = false;
  int scenes = 10, gaussians = 10000, size = 256, frames = 20;
  std::uint64_t seed = 1;

  auto* gen = app.add_subcommand("gen-corpus", "Synthetic multi-view corpus and held-out monocular sequences");
  gen->add_option("--config", config)->required();
  gen->add_option("--out", out)->required();

  auto* tp = app.add_subcommand("train-prior", "Train the prior over a corpus");
  tp->add_option("--corpus", corpus)->required();
  tp->add_option("--config", config)->required();
  tp->add_option("--out", out)->required();

  auto* ti = app.add_subcommand("train-inpainter", "Train the texture-inpainting denoiser over a corpus");
  ti->add_option("--corpus", corpus)->required();
  ti->add_option("--config", config)->required();
  ti->add_option("--out", out)->required();

  auto* pe = app.add_subcommand("personalize", "Refine poses, build conditioning maps and fine-tune on a sequence");
  pe->add_option("--prior", prior, "Prior checkpoint or train-prior output directory")->required();
  pe->add_option("--seq", seq)->required();
  pe->add_option("--config", config)->required();
  pe->add_option("--out", out)->required();
  pe->add_option("--inpainter", inpainter, "Denoiser checkpoint or train-inpainter output directory");
  pe->add_flag("--skip-inpaint", skip_inpaint, "Fill unseen texture with the mean seen color");

  auto* an = app.add_subcommand("animate", "Render an avatar under a pose script");
  an->add_option("--avatar", avatar_dir)->required();
  an->add_option("--script", script)->required();
  an->add_option("--out", out)->required();

  auto* ev = app.add_subcommand("eval", "Held-out metrics of an avatar on its sequence");
  ev->add_option("--avatar", avatar_dir)->required();
  ev->add_option("--seq", seq)->required();
  ev->add_option("--out", out, "Report directory (default <avatar>/eval)");

  auto* gc = app.add_subcommand("grad-check", "Finite-difference gradient suites");
  gc->add_option("--scenes", scenes, "Random splat scenes");
  gc->add_option("--seed", seed);

  auto* be = app.add_subcommand("bench", "Renderer timing on a fixed random scene");
  be->add_option("--gaussians", gaussians);
  be->add_option("--size", size);
  be->add_option("--frames", frames);
  be->add_option("--seed", seed);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kConfig;
  }
  set_max_threads(threads);

  try {
    if (gen->parsed()) return gen_corpus(load_config(config), out);
    if (tp->parsed()) return train_prior_cmd(load_config(config), corpus, out);
    if (ti->parsed()) return train_inpainter_cmd(load_config(config), corpus, out);
    if (pe->parsed())
      return personalize_cmd(load_config(config), prior, seq, out,
                             inpainter.empty() ? std::nullopt : std::optional<fs::path>(inpainter), skip_inpaint);
    if (an->parsed()) return animate_cmd(avatar_dir, script, out);
    if (ev->parsed()) return eval_cmd(avatar_dir, seq, out.empty() ? fs::path(avatar_dir) / "eval" : fs::path(out));
    if (gc->parsed()) return grad_check_cmd(scenes, seed);
    if (be->parsed()) return bench_cmd(gaussians, size, frames, seed);
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return kConfig;
  } catch (const DataError& e) {
    std::fprintf(stderr, "data error: %s\n", e.what());
    return kData;
  } catch (const ShapeError& e) {
    std::fprintf(stderr, "data error: %s\n", e.what());
    return kData;
  } catch (const NumericalError& e) {
    std::fprintf(stderr, "numerical error: %s\n", e.what());
    return kNumerical;
  } catch (const fs::filesystem_error& e) {
    std::fprintf(stderr, "data error: %s\n", e.what());
    return kData;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kOther;
  }
  return kOther;
}
