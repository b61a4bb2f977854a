#include "avatar/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <iterator>

#include "avatar/binary_io.hpp"
#include "avatar/common.hpp"

namespace avatar {

namespace {
constexpr char kMagic[8] = {'A', 'V', 'C', 'K', 'P', 'T', '\r', '\n'};
}

std::vector<unsigned char> encode_checkpoint(const Checkpoint& ckpt) {
  ByteWriter w;
  w.raw(kMagic, 8);
  w.u32(kCheckpointVersion);
  w.str(ckpt.metadata);
  w.u32(static_cast<std::uint32_t>(ckpt.tensors.size()));
  for (const auto& nt : ckpt.tensors) {
    w.str(nt.name);
    const auto& shape = nt.tensor.shape();
    w.u32(static_cast<std::uint32_t>(shape.size()));
    for (auto d : shape) w.u32(static_cast<std::uint32_t>(d));
    for (float v : nt.tensor.values()) w.f32(v);
  }
  return std::move(w.bytes);
}

Checkpoint decode_checkpoint(const std::vector<unsigned char>& bytes) {
  ByteReader r(bytes);
  char magic[8];
  r.raw(magic, 8);
  if (std::memcmp(magic, kMagic, 8) != 0) throw DataError("not a checkpoint file (bad magic)");
  const auto version = r.u32();
  if (version != kCheckpointVersion) throw DataError("unsupported checkpoint version " + std::to_string(version));
  Checkpoint ckpt;
  ckpt.metadata = r.str();
  const auto count = r.u32();
  for (std::uint32_t i = 0; i < count; ++i) {
    NamedTensor nt;
    nt.name = r.str();
    const auto rank = r.u32();
    Shape shape(rank);
    for (auto& d : shape) d = r.u32();
    std::vector<float> values(shape_numel(shape));
    for (auto& v : values) v = r.f32();
    nt.tensor = Tensor::from(std::move(shape), std::move(values));
    ckpt.tensors.push_back(std::move(nt));
  }
  if (!r.done()) throw DataError("trailing bytes after checkpoint payload");
  return ckpt;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  write_file_bytes(path, encode_checkpoint(ckpt));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) { return decode_checkpoint(read_file_bytes(path)); }

std::vector<Tensor> tensors_of(const ParameterList& params) {
  std::vector<Tensor> out;
  out.reserve(params.size());
  for (const auto& p : params) out.push_back(p.tensor);
  return out;
}

void assign_parameters(ParameterList& dst, const ParameterList& src) {
  if (dst.size() != src.size()) throw DataError("parameter count mismatch while loading weights");
  for (size_t i = 0; i < dst.size(); ++i) {
    if (dst[i].name != src[i].name || dst[i].tensor.shape() != src[i].tensor.shape())
      throw DataError("parameter mismatch at '" + dst[i].name + "'");
    auto v = dst[i].tensor.mutable_values();
    auto s = src[i].tensor.values();
    std::copy(s.begin(), s.end(), v.begin());
  }
}

}  // namespace avatar
