#pragma once

// Planar (channel-major) images and 8-bit PNG I/O.

#include <algorithm>
#include <filesystem>
#include <vector>

#include "avatar/common.hpp"

namespace avatar {

template <typename T>
struct PlanarImage {
  int width = 0;
  int height = 0;
  int channels = 0;
  std::vector<T> data;  // c * H * W + y * W + x

  PlanarImage() = default;
  PlanarImage(int w, int h, int c, T fill = T(0)) : width(w), height(h), channels(c), data(size_t(w) * h * c, fill) {}

  T& at(int c, int y, int x) { return data[(size_t(c) * height + y) * width + x]; }
  T at(int c, int y, int x) const { return data[(size_t(c) * height + y) * width + x]; }
  size_t plane() const { return size_t(width) * height; }
  bool same_size(const PlanarImage& o) const {
    return width == o.width && height == o.height && channels == o.channels;
  }
  template <typename U>
  PlanarImage<U> cast() const {
    PlanarImage<U> out(width, height, channels);
    std::transform(data.begin(), data.end(), out.data.begin(), [](T v) { return static_cast<U>(v); });
    return out;
  }
};

using Image = PlanarImage<float>;
using ImageD = PlanarImage<double>;

/// Reads an 8-bit PNG (gray, RGB or RGBA; palettes expanded) into [0,1].
Image read_png(const std::filesystem::path& path);
/// Writes 1, 3 or 4 channels as 8-bit PNG, values clamped to [0,1] and rounded.
void write_png(const std::filesystem::path& path, const Image& img);

/// 8-bit quantization used by write_png, exposed so in-memory data can
/// match what a round trip through disk would give.
inline float quantize8(float v) {
  const float c = std::clamp(v, 0.0f, 1.0f);
  return static_cast<float>(static_cast<int>(c * 255.0f + 0.5f)) / 255.0f;
}

}  // namespace avatar
