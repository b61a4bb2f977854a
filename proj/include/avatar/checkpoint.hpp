#pragma once

// Checkpoint container (little-endian):
//
//   magic     8 bytes  "AVCKPT\r\n"
//   version   u32      = 1
//   meta_len  u32, then meta_len bytes of UTF-8 metadata (JSON text, may be empty)
//   count     u32
//   count × { name_len u32, name bytes, rank u32, dims u32[rank], payload f32[prod(dims)] }
//
// Round trips are bit-exact: payload floats are copied as raw IEEE-754 words.

#include <filesystem>
#include <string>
#include <vector>

#include "avatar/tensor.hpp"

namespace avatar {

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

using ParameterList = std::vector<NamedTensor>;

struct Checkpoint {
  std::string metadata;
  ParameterList tensors;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

std::vector<unsigned char> encode_checkpoint(const Checkpoint& ckpt);
Checkpoint decode_checkpoint(const std::vector<unsigned char>& bytes);

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

std::vector<Tensor> tensors_of(const ParameterList& params);

/// Copies values of `src` into identically named/shaped tensors of `dst`.
void assign_parameters(ParameterList& dst, const ParameterList& src);

}  // namespace avatar
