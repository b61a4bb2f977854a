#pragma once

// Universal prior: texture maps + posed position maps + masks of both sides
// in, Gaussian maps of both sides out.

#include <cstdint>
#include <filesystem>
#include <vector>

#include "avatar/maps.hpp"
#include "avatar/unet.hpp"

namespace avatar {

constexpr int kUpmInputChannels = 14;  // per side: texture 3, posed position 3, mask 1
constexpr int kUpmOutputChannels = 2 * kGaussianChannels;

struct UPMConfig {
  int levels = 4;
  int base_width = 32;
  int max_width = 256;

  UNetConfig unet() const;
};

struct UPMWeights {
  UPMConfig config;
  ParameterList params;
};

UPMWeights init_upm(std::uint64_t seed, const UPMConfig& config = {});

/// 1 x 14 x R x R input tensor, front side channels first.
Tensor upm_input(const CanonicalMapSet& maps, const PosedPositionMaps& posed);

/// 1 x 28 x R x R Gaussian maps, on the tape.
Tensor upm_forward(const UPMWeights& weights, const CanonicalMapSet& maps, const PosedPositionMaps& posed);

UPMWeights clone_weights(const UPMWeights& w);

void save_upm(const std::filesystem::path& path, const UPMWeights& w, const std::string& extra_meta = {});
UPMWeights load_upm(const std::filesystem::path& path);

}  // namespace avatar
