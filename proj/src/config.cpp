#include "avatar/config.hpp"

#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

namespace avatar {

using json = nlohmann::json;

namespace {

// One field list drives both directions: Writer fills a json tree, Reader
// pulls values out of one (keys it does not find keep their defaults).
struct Writer {
  json root = json::object();
  json* cur = &root;

  template <typename T>
  void operator()(const char* key, T& v) {
    (*cur)[key] = v;
  }
  template <typename F>
  void section(const char* key, F&& fn) {
    json* outer = cur;
    (*cur)[key] = json::object();
    cur = &(*cur)[key];
    fn();
    cur = outer;
  }
};

struct Reader {
  const json* cur;
  std::string path;

  std::string name(const char* key) const { return path.empty() ? key : path + "." + key; }

  template <typename T>
  void operator()(const char* key, T& v) {
    if (!cur->contains(key)) return;
    const json& j = (*cur)[key];
    if constexpr (std::is_same_v<T, bool>) {
      if (!j.is_boolean()) throw ConfigError("config key " + name(key) + ": expected true/false");
    } else if constexpr (std::is_integral_v<T>) {
      if (!j.is_number_integer()) throw ConfigError("config key " + name(key) + ": expected an integer");
      if (std::is_unsigned_v<T> && j.get<std::int64_t>() < 0)
        throw ConfigError("config key " + name(key) + ": expected a non-negative integer");
    } else {
      if (!j.is_number()) throw ConfigError("config key " + name(key) + ": expected a number");
    }
    v = j.get<T>();
  }
  template <typename F>
  void section(const char* key, F&& fn) {
    if (!cur->contains(key)) return;
    const json* outer = cur;
    const std::string outer_path = path;
    cur = &(*cur)[key];
    path = name(key);
    fn();
    cur = outer;
    path = outer_path;
  }
};

template <typename IO>
void fields(IO& io, RunConfig& c) {
  io("seed", c.seed);
  io.section("corpus", [&] {
    auto& o = c.corpus;
    io("subjects", o.subjects);
    io("frames", o.frames);
    io("cameras", o.cameras);
    io("map_resolution", o.map_resolution);
    io("supersample", o.supersample);
    io.section("rig", [&] {
      io("width", o.rig.width);
      io("height", o.rig.height);
      io("distance", o.rig.distance);
      io("focal_factor", o.rig.focal_factor);
      io("elevation", o.rig.elevation);
    });
    io.section("motion", [&] {
      io("amplitude", o.motion.amplitude);
      io("root_yaw", o.motion.root_yaw);
      io("root_shift", o.motion.root_shift);
    });
    io.section("wrinkles", [&] {
      io("displacement", o.wrinkles.displacement);
      io("shading", o.wrinkles.shading);
      io("wavelength", o.wrinkles.wavelength);
    });
    io.section("sequences", [&] {
      auto& s = c.sequences;
      io("count", s.count);
      io("frames", s.frames);
      io("pose_noise_deg", s.pose_noise_deg);
      io("keypoint_noise_px", s.keypoint_noise_px);
      io("shape_noise", s.shape_noise);
    });
  });
  io.section("upm", [&] {
    io("levels", c.upm.levels);
    io("base_width", c.upm.base_width);
    io("max_width", c.upm.max_width);
  });
  io.section("training", [&] {
    auto& t = c.training;
    io("iterations", t.iterations);
    io("lr", t.lr);
    io("warmup_steps", t.warmup_steps);
    io("subjects", t.subjects);
    io("frames", t.frames);
    io("cameras", t.cameras);
    io("normalized", t.normalized);
    io("checkpoint_every", t.checkpoint_every);
    io.section("loss", [&] {
      io("grad", t.loss.grad);
      io("offset", t.loss.offset);
    });
  });
  io.section("ddpm", [&] {
    auto& d = c.ddpm;
    io("timesteps", d.timesteps);
    io("beta_start", d.beta_start);
    io("beta_end", d.beta_end);
    io("resolution", d.resolution);
    io("levels", d.levels);
    io("base_width", d.base_width);
    io("max_width", d.max_width);
    io("iterations", c.inpainter.iterations);
    io("lr", c.inpainter.lr);
    io("warmup_steps", c.inpainter.warmup_steps);
    io("grad_clip", c.inpainter.grad_clip);
    io("masks_per_subject", c.masks_per_subject);
  });
  io.section("personalize", [&] {
    auto& p = c.personalize;
    io("map_resolution", p.map_resolution);
    io.section("refine", [&] {
      io("max_iterations", p.refine.max_iterations);
      io("initial_step", p.refine.initial_step);
      io("tolerance", p.refine.tolerance);
      io("patience", p.refine.patience);
      io("prior_weight", p.refine.prior_weight);
      io("max_step", p.refine.max_step);
    });
    auto& f = p.finetune;
    io("iterations", f.iterations);
    io("lr_network", f.lr_network);
    io("lr_pose", f.lr_pose);
    io("lr_shape", f.lr_shape);
    io("warmup_steps", f.warmup_steps);
    io("shape_clamp", f.shape_clamp);
    io("holdout_fraction", f.holdout_fraction);
    io("optimize_poses", f.optimize_poses);
    io("optimize_shape", f.optimize_shape);
    io("heldout_pose_iterations", f.heldout_pose_iterations);
  });
  io.section("render", [&] {
    auto& r = c.render.render;
    io("low_pass", r.low_pass);
    io("near", r.near);
    io("alpha_max", r.alpha_max);
    io("min_transmittance", r.min_transmittance);
    io("cutoff_sigma", r.cutoff_sigma);
    io("tile", r.tile);
    auto& d = c.render.decode;
    io("scale_factor", d.scale_factor);
    io("thin_factor", d.thin_factor);
    io("grazing_floor", d.grazing_floor);
    io("min_scale", d.min_scale);
    io("max_scale", d.max_scale);
  });
}

void reject_unknown(const json& user, const json& known, const std::string& path) {
  for (auto it = user.begin(); it != user.end(); ++it) {
    const std::string key = path.empty() ? it.key() : path + "." + it.key();
    if (!known.contains(it.key())) throw ConfigError("unknown config key: " + key);
    const json& k = known[it.key()];
    if (k.is_object()) {
      if (!it->is_object()) throw ConfigError("config key " + key + ": expected a section");
      reject_unknown(*it, k, key);
    }
  }
}

void require(bool ok, const std::string& what) {
  if (!ok) throw ConfigError("invalid config: " + what);
}

void validate(const RunConfig& c) {
  require(c.corpus.subjects >= 1 && c.corpus.frames >= 1 && c.corpus.cameras >= 1, "corpus counts must be >= 1");
  require(c.corpus.rig.width >= 16 && c.corpus.rig.height >= 16, "corpus.rig size must be >= 16");
  require(c.corpus.supersample >= 1, "corpus.supersample must be >= 1");
  require(c.sequences.count >= 0 && c.sequences.frames >= 2, "corpus.sequences: count >= 0, frames >= 2");
  require(c.upm.levels >= 3 && c.upm.base_width >= 1 && c.upm.max_width >= c.upm.base_width,
          "upm: levels >= 3 and 1 <= base_width <= max_width");
  const int step = 1 << (c.upm.levels - 1);
  require(c.corpus.map_resolution >= step && c.corpus.map_resolution % step == 0,
          "corpus.map_resolution must be a multiple of 2^(upm.levels-1)");
  require(c.personalize.map_resolution >= step && c.personalize.map_resolution % step == 0,
          "personalize.map_resolution must be a multiple of 2^(upm.levels-1)");
  require(c.training.iterations >= 0 && c.training.lr > 0 && c.training.warmup_steps >= 0, "training schedule");
  require(c.training.checkpoint_every >= 0, "training.checkpoint_every must be >= 0");
  c.ddpm.validate();
  require(c.inpainter.iterations >= 0 && c.inpainter.lr > 0 && c.masks_per_subject >= 1, "ddpm training schedule");
  const auto& f = c.personalize.finetune;
  require(f.iterations >= 0 && f.lr_network >= 0 && f.lr_pose >= 0 && f.lr_shape >= 0, "personalize learning rates");
  require(f.holdout_fraction >= 0 && f.holdout_fraction < 1, "personalize.holdout_fraction must be in [0, 1)");
  require(f.shape_clamp >= 0, "personalize.shape_clamp must be >= 0");
  require(f.heldout_pose_iterations >= 0, "personalize.heldout_pose_iterations must be >= 0");
  require(c.personalize.refine.max_iterations >= 0 && c.personalize.refine.patience >= 1, "personalize.refine");
  require(c.render.render.tile >= 1 && c.render.render.alpha_max > 0 && c.render.render.alpha_max <= 1, "render");
}

}  // namespace

void RunConfig::propagate() {
  corpus.seed = seed;
  training.seed = seed;
  training.upm = upm;
  training.pipeline = render;
  inpainter.seed = seed;
  personalize.finetune.seed = seed;
  personalize.finetune.loss = training.loss;
  personalize.finetune.pipeline = render;
}

std::string config_to_json(const RunConfig& cfg) {
  Writer w;
  RunConfig c = cfg;
  fields(w, c);
  return w.root.dump(2);
}

RunConfig config_from_json(const std::string& text) {
  json user;
  try {
    user = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  if (!user.is_object()) throw ConfigError("config must be a JSON object");
  if (!user.contains("seed")) throw ConfigError("missing config key: seed (no default)");

  RunConfig defaults;
  Writer w;
  fields(w, defaults);
  reject_unknown(user, w.root, "");

  RunConfig cfg;
  Reader r{&user, ""};
  fields(r, cfg);
  validate(cfg);
  cfg.propagate();
  return cfg;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return config_from_json(ss.str());
}

MonocularOptions sequence_options(const RunConfig& cfg, std::uint64_t seed) {
  MonocularOptions m;
  m.frames = cfg.sequences.frames;
  m.resolution = cfg.corpus.rig.width;
  m.pose_noise_deg = cfg.sequences.pose_noise_deg;
  m.keypoint_noise_px = cfg.sequences.keypoint_noise_px;
  m.shape_noise = cfg.sequences.shape_noise;
  m.motion = cfg.corpus.motion;
  m.rig = cfg.corpus.rig;
  m.wrinkles = cfg.corpus.wrinkles;
  m.supersample = cfg.corpus.supersample;
  m.seed = seed;
  return m;
}

}  // namespace avatar
