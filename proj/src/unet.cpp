#include "avatar/unet.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <map>
#include <random>

#include "avatar/common.hpp"
#include "avatar/ops.hpp"

namespace avatar {

int UNetConfig::width(int level) const { return std::min(max_width, base_width << level); }

void UNetConfig::validate() const {
  if (in_channels < 1 || out_channels < 1) throw ConfigError("unet: channel counts must be positive");
  if (levels < 3 || levels > 7) throw ConfigError("unet: levels must be in [3, 7]");
  if (base_width < 1 || max_width < base_width) throw ConfigError("unet: bad widths");
}

namespace {

void add_conv(ParameterList& p, const std::string& name, int out, int in, int k, std::mt19937_64& rng, bool zero) {
  std::vector<float> w(size_t(out) * in * k * k, 0.0f);
  if (!zero) {
    // He init for leaky ReLU(0.2).
    const double sd = std::sqrt(2.0 / (1.0 + 0.04) / (in * k * k));
    std::normal_distribution<double> n(0.0, sd);
    for (auto& v : w) v = static_cast<float>(n(rng));
  }
  p.push_back({name + ".w", Tensor::from({out, in, k, k}, std::move(w), true)});
  p.push_back({name + ".b", Tensor::zeros({out}, true)});
}

struct Lookup {
  std::map<std::string, const Tensor*> by_name;
  explicit Lookup(const ParameterList& p) {
    for (const auto& t : p) by_name[t.name] = &t.tensor;
  }
  const Tensor& operator()(const std::string& n) const {
    auto it = by_name.find(n);
    if (it == by_name.end()) throw ContractError("unet: missing parameter " + n);
    return *it->second;
  }
};

Tensor conv_block(const Lookup& p, const std::string& name, const Tensor& x, int k) {
  return ops::add_bias(ops::conv2d(x, p(name + ".w"), 1, k / 2), p(name + ".b"));
}

}  // namespace

ParameterList init_unet(const UNetConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  std::mt19937_64 rng(seed);
  ParameterList p;
  int in = cfg.in_channels;
  for (int l = 0; l < cfg.levels; ++l) {
    const int w = cfg.width(l);
    add_conv(p, "enc" + std::to_string(l) + ".a", w, in, 3, rng, false);
    add_conv(p, "enc" + std::to_string(l) + ".b", w, w, 3, rng, false);
    in = w;
  }
  for (int l = cfg.levels - 2; l >= 0; --l) {
    const int w = cfg.width(l);
    add_conv(p, "dec" + std::to_string(l) + ".a", w, in + w, 3, rng, false);
    add_conv(p, "dec" + std::to_string(l) + ".b", w, w, 3, rng, false);
    in = w;
  }
  add_conv(p, "head", cfg.out_channels, in, 1, rng, true);
  return p;
}

Tensor unet_forward(const UNetConfig& cfg, const ParameterList& params, const Tensor& x) {
  if (x.rank() != 4 || x.dim(0) != 1 || x.dim(1) != cfg.in_channels)
    throw ShapeError("unet: expected input 1 x " + std::to_string(cfg.in_channels) + " x H x W");
  const std::int64_t div = std::int64_t(1) << (cfg.levels - 1);
  if (x.dim(2) % div != 0 || x.dim(3) % div != 0)
    throw ShapeError("unet: spatial size must be divisible by " + std::to_string(div));
  const Lookup p(params);
  std::vector<Tensor> skips;
  Tensor h = x;
  for (int l = 0; l < cfg.levels; ++l) {
    if (l > 0) h = ops::avgpool2x(h);
    const std::string n = "enc" + std::to_string(l);
    h = ops::leaky_relu(conv_block(p, n + ".a", h, 3));
    h = ops::leaky_relu(conv_block(p, n + ".b", h, 3));
    skips.push_back(h);
  }
  for (int l = cfg.levels - 2; l >= 0; --l) {
    const std::string n = "dec" + std::to_string(l);
    h = ops::concat_channels({ops::upsample2x(h), skips[l]});
    h = ops::leaky_relu(conv_block(p, n + ".a", h, 3));
    h = ops::leaky_relu(conv_block(p, n + ".b", h, 3));
  }
  return conv_block(p, "head", h, 1);
}

std::int64_t parameter_count(const ParameterList& params) {
  std::int64_t n = 0;
  for (const auto& t : params) n += t.tensor.numel();
  return n;
}

std::string unet_config_json(const UNetConfig& cfg) {
  nlohmann::json j{{"in_channels", cfg.in_channels},
                   {"out_channels", cfg.out_channels},
                   {"levels", cfg.levels},
                   {"base_width", cfg.base_width},
                   {"max_width", cfg.max_width}};
  return j.dump();
}

UNetConfig unet_config_from_json(const std::string& text) {
  try {
    const auto j = nlohmann::json::parse(text);
    UNetConfig c;
    c.in_channels = j.at("in_channels").get<int>();
    c.out_channels = j.at("out_channels").get<int>();
    c.levels = j.at("levels").get<int>();
    c.base_width = j.at("base_width").get<int>();
    c.max_width = j.at("max_width").get<int>();
    c.validate();
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("bad network config block: ") + e.what());
  }
}

}  // namespace avatar
