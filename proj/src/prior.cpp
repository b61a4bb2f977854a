#include "avatar/prior.hpp"

#include <nlohmann/json.hpp>

#include "avatar/common.hpp"

namespace avatar {

UNetConfig UPMConfig::unet() const {
  UNetConfig c;
  c.in_channels = kUpmInputChannels;
  c.out_channels = kUpmOutputChannels;
  c.levels = levels;
  c.base_width = base_width;
  c.max_width = max_width;
  return c;
}

UPMWeights init_upm(std::uint64_t seed, const UPMConfig& config) { return {config, init_unet(config.unet(), seed)}; }

Tensor upm_input(const CanonicalMapSet& maps, const PosedPositionMaps& posed) {
  const int r = maps.resolution;
  for (int s = 0; s < 2; ++s)
    if (posed.position[s].width != r || posed.position[s].height != r || posed.position[s].channels != 3)
      throw ShapeError("upm: posed position map resolution does not match the canonical maps");
  const size_t plane = size_t(r) * r;
  std::vector<float> x(kUpmInputChannels * plane);
  for (int s = 0; s < 2; ++s) {
    float* base = x.data() + size_t(s) * 7 * plane;
    for (int c = 0; c < 3; ++c)
      for (size_t i = 0; i < plane; ++i) {
        base[c * plane + i] = static_cast<float>(maps.texture[s].data[c * plane + i]);
        base[(3 + c) * plane + i] = static_cast<float>(posed.position[s].data[c * plane + i]);
      }
    for (size_t i = 0; i < plane; ++i) base[6 * plane + i] = maps.mask[s].data[i] ? 1.0f : 0.0f;
  }
  return Tensor::from({1, kUpmInputChannels, r, r}, std::move(x));
}

Tensor upm_forward(const UPMWeights& weights, const CanonicalMapSet& maps, const PosedPositionMaps& posed) {
  return unet_forward(weights.config.unet(), weights.params, upm_input(maps, posed));
}

UPMWeights clone_weights(const UPMWeights& w) {
  UPMWeights out{w.config, {}};
  for (const auto& t : w.params) {
    const auto v = t.tensor.values();
    out.params.push_back({t.name, Tensor::from(t.tensor.shape(), {v.begin(), v.end()}, true)});
  }
  return out;
}

void save_upm(const std::filesystem::path& path, const UPMWeights& w, const std::string& extra_meta) {
  nlohmann::json meta{{"kind", "upm"},
                      {"levels", w.config.levels},
                      {"base_width", w.config.base_width},
                      {"max_width", w.config.max_width}};
  if (!extra_meta.empty()) meta["extra"] = nlohmann::json::parse(extra_meta);
  save_checkpoint(path, {meta.dump(), w.params});
}

UPMWeights load_upm(const std::filesystem::path& path) {
  auto ck = load_checkpoint(path);
  UPMConfig c;
  try {
    const auto meta = nlohmann::json::parse(ck.metadata);
    if (meta.at("kind") != "upm") throw DataError("checkpoint " + path.string() + " is not a prior model");
    c.levels = meta.at("levels").get<int>();
    c.base_width = meta.at("base_width").get<int>();
    c.max_width = meta.at("max_width").get<int>();
  } catch (const nlohmann::json::exception& e) {
    throw DataError("bad prior checkpoint metadata in " + path.string() + ": " + e.what());
  }
  // Rebuild the expected layout and check names and shapes against it.
  UPMWeights w = init_upm(0, c);
  if (w.params.size() != ck.tensors.size()) throw DataError("prior checkpoint has the wrong parameter count");
  assign_parameters(w.params, ck.tensors);
  return w;
}

}  // namespace avatar
