#pragma once

// Plain convolutional U-Net on the tape: two 3x3 conv + leaky ReLU blocks
// per level, average-pool down, nearest up, skip concatenation, 1x1 head.
// Shared by the prior model and the inpainting denoiser.

#include <cstdint>
#include <string>

#include "avatar/checkpoint.hpp"
#include "avatar/tensor.hpp"

namespace avatar {

struct UNetConfig {
  int in_channels = 14;
  int out_channels = 28;
  int levels = 4;
  int base_width = 32;
  int max_width = 256;

  int width(int level) const;
  void validate() const;
  bool operator==(const UNetConfig&) const = default;
};

/// Parameters named "<block>.<conv>.w" / ".b"; the head is "head.w"/"head.b"
/// and starts at zero.
ParameterList init_unet(const UNetConfig& cfg, std::uint64_t seed);

/// x: 1 x in_channels x H x W with H, W divisible by 2^(levels-1).
Tensor unet_forward(const UNetConfig& cfg, const ParameterList& params, const Tensor& x);

std::int64_t parameter_count(const ParameterList& params);

std::string unet_config_json(const UNetConfig& cfg);
UNetConfig unet_config_from_json(const std::string& text);

}  // namespace avatar
