#include "avatar/ops.hpp"

#include <Eigen/Core>
#include <cmath>

#include "avatar/common.hpp"

namespace avatar::ops {

namespace {

using RowMat = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapR = Eigen::Map<RowMat>;
using CMapR = Eigen::Map<const RowMat>;

struct Dims4 {
  std::int64_t n, c, h, w;
};

Dims4 dims4(const Tensor& t, const char* what) {
  if (t.rank() != 4) throw ShapeError(std::string(what) + ": expected NCHW tensor, got " + shape_str(t.shape()));
  return {t.dim(0), t.dim(1), t.dim(2), t.dim(3)};
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* what) {
  if (a.shape() != b.shape())
    throw ShapeError(std::string(what) + ": shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

// cols is (C*k*k) x (Ho*Wo), row-major.
void im2col(const float* x, std::int64_t c, std::int64_t h, std::int64_t w, int k, int stride, int pad,
            std::int64_t ho, std::int64_t wo, float* cols) {
  for (std::int64_t ch = 0; ch < c; ++ch)
    for (int ki = 0; ki < k; ++ki)
      for (int kj = 0; kj < k; ++kj) {
        float* row = cols + ((ch * k + ki) * k + kj) * ho * wo;
        const float* plane = x + ch * h * w;
        for (std::int64_t oy = 0; oy < ho; ++oy) {
          const std::int64_t iy = oy * stride - pad + ki;
          float* dst = row + oy * wo;
          if (iy < 0 || iy >= h) {
            std::fill(dst, dst + wo, 0.0f);
            continue;
          }
          for (std::int64_t ox = 0; ox < wo; ++ox) {
            const std::int64_t ix = ox * stride - pad + kj;
            dst[ox] = (ix < 0 || ix >= w) ? 0.0f : plane[iy * w + ix];
          }
        }
      }
}

void col2im(const float* cols, std::int64_t c, std::int64_t h, std::int64_t w, int k, int stride, int pad,
            std::int64_t ho, std::int64_t wo, float* x) {
  for (std::int64_t ch = 0; ch < c; ++ch)
    for (int ki = 0; ki < k; ++ki)
      for (int kj = 0; kj < k; ++kj) {
        const float* row = cols + ((ch * k + ki) * k + kj) * ho * wo;
        float* plane = x + ch * h * w;
        for (std::int64_t oy = 0; oy < ho; ++oy) {
          const std::int64_t iy = oy * stride - pad + ki;
          if (iy < 0 || iy >= h) continue;
          for (std::int64_t ox = 0; ox < wo; ++ox) {
            const std::int64_t ix = ox * stride - pad + kj;
            if (ix >= 0 && ix < w) plane[iy * w + ix] += row[oy * wo + ox];
          }
        }
      }
}

template <typename Fwd, typename Deriv>
Tensor unary(const Tensor& x, Fwd fwd, Deriv deriv) {
  auto xv = x.values();
  std::vector<float> out(xv.size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = fwd(xv[i]);
  std::vector<float> saved = out;
  return Tensor::make_result(x.shape(), std::move(out), {x},
                             [deriv, saved = std::move(saved)](detail::Node& self) {
                               auto& px = *self.parents[0];
                               if (!px.requires_grad) return;
                               for (size_t i = 0; i < self.grad.size(); ++i)
                                 px.grad[i] += self.grad[i] * deriv(px.values[i], saved[i]);
                             });
}

}  // namespace

Tensor conv2d(const Tensor& input, const Tensor& kernel, int stride, int pad) {
  const auto in = dims4(input, "conv2d input");
  const auto kd = dims4(kernel, "conv2d kernel");
  if (stride < 1 || pad < 0) throw ShapeError("conv2d: stride must be >= 1 and pad >= 0");
  if (kd.c != in.c)
    throw ShapeError("conv2d: input has " + std::to_string(in.c) + " channels, kernel expects " +
                     std::to_string(kd.c));
  if (kd.h != kd.w) throw ShapeError("conv2d: kernel must be square");
  const int k = static_cast<int>(kd.h);
  const std::int64_t ho = (in.h + 2 * pad - k) / stride + 1;
  const std::int64_t wo = (in.w + 2 * pad - k) / stride + 1;
  if (ho <= 0 || wo <= 0) throw ShapeError("conv2d: kernel larger than padded input");
  const std::int64_t kk = in.c * k * k, hw = ho * wo;
  const bool direct = (k == 1 && stride == 1 && pad == 0);

  std::vector<float> out(in.n * kd.n * hw);
  std::vector<float> cols(direct ? 0 : kk * hw);
  CMapR wmat(kernel.values().data(), kd.n, kk);
  for (std::int64_t b = 0; b < in.n; ++b) {
    const float* xb = input.values().data() + b * in.c * in.h * in.w;
    const float* colp = xb;
    if (!direct) {
      im2col(xb, in.c, in.h, in.w, k, stride, pad, ho, wo, cols.data());
      colp = cols.data();
    }
    MapR(out.data() + b * kd.n * hw, kd.n, hw).noalias() = wmat * CMapR(colp, kk, hw);
  }

  return Tensor::make_result(
      {in.n, kd.n, ho, wo}, std::move(out), {input, kernel},
      [in, kd, k, stride, pad, ho, wo, kk, hw, direct](detail::Node& self) {
        auto& px = *self.parents[0];
        auto& pw = *self.parents[1];
        std::vector<float> cols(direct ? 0 : kk * hw);
        std::vector<float> dcols(direct ? 0 : kk * hw);
        CMapR wmat(pw.values.data(), kd.n, kk);
        for (std::int64_t b = 0; b < in.n; ++b) {
          CMapR gout(self.grad.data() + b * kd.n * hw, kd.n, hw);
          const float* xb = px.values.data() + b * in.c * in.h * in.w;
          if (pw.requires_grad) {
            const float* colp = xb;
            if (!direct) {
              im2col(xb, in.c, in.h, in.w, k, stride, pad, ho, wo, cols.data());
              colp = cols.data();
            }
            MapR(pw.grad.data(), kd.n, kk).noalias() += gout * CMapR(colp, kk, hw).transpose();
          }
          if (px.requires_grad) {
            float* gx = px.grad.data() + b * in.c * in.h * in.w;
            if (direct) {
              MapR(gx, kk, hw).noalias() += wmat.transpose() * gout;
            } else {
              MapR(dcols.data(), kk, hw).noalias() = wmat.transpose() * gout;
              col2im(dcols.data(), in.c, in.h, in.w, k, stride, pad, ho, wo, gx);
            }
          }
        }
      });
}

Tensor add_bias(const Tensor& input, const Tensor& bias) {
  const auto d = dims4(input, "add_bias");
  if (bias.numel() != d.c) throw ShapeError("add_bias: bias length does not match channel count");
  std::vector<float> out(input.values().begin(), input.values().end());
  const std::int64_t hw = d.h * d.w;
  for (std::int64_t b = 0; b < d.n; ++b)
    for (std::int64_t c = 0; c < d.c; ++c) {
      float* p = out.data() + (b * d.c + c) * hw;
      const float bv = bias.values()[c];
      for (std::int64_t i = 0; i < hw; ++i) p[i] += bv;
    }
  return Tensor::make_result(input.shape(), std::move(out), {input, bias}, [d, hw](detail::Node& self) {
    auto& px = *self.parents[0];
    auto& pb = *self.parents[1];
    if (px.requires_grad)
      for (size_t i = 0; i < self.grad.size(); ++i) px.grad[i] += self.grad[i];
    if (pb.requires_grad)
      for (std::int64_t b = 0; b < d.n; ++b)
        for (std::int64_t c = 0; c < d.c; ++c) {
          double acc = 0.0;
          const float* g = self.grad.data() + (b * d.c + c) * hw;
          for (std::int64_t i = 0; i < hw; ++i) acc += g[i];
          pb.grad[c] += static_cast<float>(acc);
        }
  });
}

Tensor upsample2x(const Tensor& input) {
  const auto d = dims4(input, "upsample2x");
  const std::int64_t h2 = d.h * 2, w2 = d.w * 2;
  std::vector<float> out(d.n * d.c * h2 * w2);
  const auto xv = input.values();
  for (std::int64_t p = 0; p < d.n * d.c; ++p)
    for (std::int64_t y = 0; y < h2; ++y)
      for (std::int64_t x = 0; x < w2; ++x)
        out[(p * h2 + y) * w2 + x] = xv[(p * d.h + y / 2) * d.w + x / 2];
  return Tensor::make_result({d.n, d.c, h2, w2}, std::move(out), {input}, [d, h2, w2](detail::Node& self) {
    auto& px = *self.parents[0];
    for (std::int64_t p = 0; p < d.n * d.c; ++p)
      for (std::int64_t y = 0; y < h2; ++y)
        for (std::int64_t x = 0; x < w2; ++x)
          px.grad[(p * d.h + y / 2) * d.w + x / 2] += self.grad[(p * h2 + y) * w2 + x];
  });
}

Tensor avgpool2x(const Tensor& input) {
  const auto d = dims4(input, "avgpool2x");
  if (d.h % 2 || d.w % 2) throw ShapeError("avgpool2x: spatial dims must be even, got " + shape_str(input.shape()));
  const std::int64_t h2 = d.h / 2, w2 = d.w / 2;
  std::vector<float> out(d.n * d.c * h2 * w2);
  const auto xv = input.values();
  for (std::int64_t p = 0; p < d.n * d.c; ++p)
    for (std::int64_t y = 0; y < h2; ++y)
      for (std::int64_t x = 0; x < w2; ++x) {
        const float* r0 = xv.data() + (p * d.h + 2 * y) * d.w + 2 * x;
        const float* r1 = r0 + d.w;
        out[(p * h2 + y) * w2 + x] = 0.25f * (r0[0] + r0[1] + r1[0] + r1[1]);
      }
  return Tensor::make_result({d.n, d.c, h2, w2}, std::move(out), {input}, [d, h2, w2](detail::Node& self) {
    auto& px = *self.parents[0];
    for (std::int64_t p = 0; p < d.n * d.c; ++p)
      for (std::int64_t y = 0; y < d.h; ++y)
        for (std::int64_t x = 0; x < d.w; ++x)
          px.grad[(p * d.h + y) * d.w + x] += 0.25f * self.grad[(p * h2 + y / 2) * w2 + x / 2];
  });
}

Tensor concat_channels(const std::vector<Tensor>& inputs) {
  if (inputs.empty()) throw ShapeError("concat_channels: no inputs");
  const auto d0 = dims4(inputs[0], "concat_channels");
  std::int64_t total_c = 0;
  std::vector<std::int64_t> chans;
  for (const auto& t : inputs) {
    const auto d = dims4(t, "concat_channels");
    if (d.n != d0.n || d.h != d0.h || d.w != d0.w)
      throw ShapeError("concat_channels: batch/spatial mismatch " + shape_str(t.shape()) + " vs " +
                       shape_str(inputs[0].shape()));
    chans.push_back(d.c);
    total_c += d.c;
  }
  const std::int64_t hw = d0.h * d0.w;
  std::vector<float> out(d0.n * total_c * hw);
  for (std::int64_t b = 0; b < d0.n; ++b) {
    std::int64_t off = 0;
    for (size_t i = 0; i < inputs.size(); ++i) {
      const float* src = inputs[i].values().data() + b * chans[i] * hw;
      std::copy(src, src + chans[i] * hw, out.data() + (b * total_c + off) * hw);
      off += chans[i];
    }
  }
  return Tensor::make_result({d0.n, total_c, d0.h, d0.w}, std::move(out), inputs,
                             [d0, chans, total_c, hw](detail::Node& self) {
                               for (std::int64_t b = 0; b < d0.n; ++b) {
                                 std::int64_t off = 0;
                                 for (size_t i = 0; i < chans.size(); ++i) {
                                   auto& p = *self.parents[i];
                                   if (p.requires_grad) {
                                     const float* g = self.grad.data() + (b * total_c + off) * hw;
                                     float* dst = p.grad.data() + b * chans[i] * hw;
                                     for (std::int64_t j = 0; j < chans[i] * hw; ++j) dst[j] += g[j];
                                   }
                                   off += chans[i];
                                 }
                               }
                             });
}

Tensor leaky_relu(const Tensor& x, float slope) {
  return unary(
      x, [slope](float v) { return v > 0.0f ? v : slope * v; },
      [slope](float in, float) { return in > 0.0f ? 1.0f : slope; });
}

Tensor sigmoid(const Tensor& x) {
  return unary(
      x, [](float v) { return 1.0f / (1.0f + std::exp(-v)); }, [](float, float y) { return y * (1.0f - y); });
}

Tensor tanh(const Tensor& x) {
  return unary(
      x, [](float v) { return std::tanh(v); }, [](float, float y) { return 1.0f - y * y; });
}

Tensor instance_norm(const Tensor& x, float eps) {
  const auto d = dims4(x, "instance_norm");
  const std::int64_t hw = d.h * d.w;
  std::vector<float> out(x.numel());
  std::vector<float> inv_std(d.n * d.c);
  const auto xv = x.values();
  for (std::int64_t p = 0; p < d.n * d.c; ++p) {
    const float* src = xv.data() + p * hw;
    double m = 0.0;
    for (std::int64_t i = 0; i < hw; ++i) m += src[i];
    m /= static_cast<double>(hw);
    double var = 0.0;
    for (std::int64_t i = 0; i < hw; ++i) var += (src[i] - m) * (src[i] - m);
    var /= static_cast<double>(hw);
    const double is = 1.0 / std::sqrt(var + eps);
    inv_std[p] = static_cast<float>(is);
    for (std::int64_t i = 0; i < hw; ++i) out[p * hw + i] = static_cast<float>((src[i] - m) * is);
  }
  std::vector<float> normed = out;
  return Tensor::make_result(x.shape(), std::move(out), {x},
                             [d, hw, inv_std = std::move(inv_std), normed = std::move(normed)](detail::Node& self) {
                               auto& px = *self.parents[0];
                               for (std::int64_t p = 0; p < d.n * d.c; ++p) {
                                 const float* g = self.grad.data() + p * hw;
                                 const float* y = normed.data() + p * hw;
                                 double mg = 0.0, mgy = 0.0;
                                 for (std::int64_t i = 0; i < hw; ++i) {
                                   mg += g[i];
                                   mgy += static_cast<double>(g[i]) * y[i];
                                 }
                                 mg /= static_cast<double>(hw);
                                 mgy /= static_cast<double>(hw);
                                 float* dst = px.grad.data() + p * hw;
                                 for (std::int64_t i = 0; i < hw; ++i)
                                   dst[i] += static_cast<float>(inv_std[p] * (g[i] - mg - y[i] * mgy));
                               }
                             });
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  std::vector<float> out(a.numel());
  for (size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] + b.values()[i];
  return Tensor::make_result(a.shape(), std::move(out), {a, b}, [](detail::Node& self) {
    for (int k = 0; k < 2; ++k) {
      auto& p = *self.parents[k];
      if (p.requires_grad)
        for (size_t i = 0; i < self.grad.size(); ++i) p.grad[i] += self.grad[i];
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  std::vector<float> out(a.numel());
  for (size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] - b.values()[i];
  return Tensor::make_result(a.shape(), std::move(out), {a, b}, [](detail::Node& self) {
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    if (pa.requires_grad)
      for (size_t i = 0; i < self.grad.size(); ++i) pa.grad[i] += self.grad[i];
    if (pb.requires_grad)
      for (size_t i = 0; i < self.grad.size(); ++i) pb.grad[i] -= self.grad[i];
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  std::vector<float> out(a.numel());
  for (size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] * b.values()[i];
  return Tensor::make_result(a.shape(), std::move(out), {a, b}, [](detail::Node& self) {
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    if (pa.requires_grad)
      for (size_t i = 0; i < self.grad.size(); ++i) pa.grad[i] += self.grad[i] * pb.values[i];
    if (pb.requires_grad)
      for (size_t i = 0; i < self.grad.size(); ++i) pb.grad[i] += self.grad[i] * pa.values[i];
  });
}

Tensor scale(const Tensor& x, float s) {
  std::vector<float> out(x.numel());
  for (size_t i = 0; i < out.size(); ++i) out[i] = x.values()[i] * s;
  return Tensor::make_result(x.shape(), std::move(out), {x}, [s](detail::Node& self) {
    auto& p = *self.parents[0];
    for (size_t i = 0; i < self.grad.size(); ++i) p.grad[i] += self.grad[i] * s;
  });
}

Tensor sum(const Tensor& x) {
  double acc = 0.0;
  for (float v : x.values()) acc += v;
  return Tensor::make_result({1}, {static_cast<float>(acc)}, {x}, [](detail::Node& self) {
    auto& p = *self.parents[0];
    const float g = self.grad[0];
    for (auto& v : p.grad) v += g;
  });
}

Tensor mean(const Tensor& x) {
  if (x.numel() == 0) throw ShapeError("mean of empty tensor");
  return scale(sum(x), 1.0f / static_cast<float>(x.numel()));
}

Tensor mse(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mse");
  const auto n = a.numel();
  if (n == 0) throw ShapeError("mse of empty tensors");
  double acc = 0.0;
  for (std::int64_t i = 0; i < n; ++i) {
    const double d = static_cast<double>(a.values()[i]) - b.values()[i];
    acc += d * d;
  }
  return Tensor::make_result({1}, {static_cast<float>(acc / n)}, {a, b}, [n](detail::Node& self) {
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    const float k = 2.0f * self.grad[0] / static_cast<float>(n);
    for (std::int64_t i = 0; i < n; ++i) {
      const float d = pa.values[i] - pb.values[i];
      if (pa.requires_grad) pa.grad[i] += k * d;
      if (pb.requires_grad) pb.grad[i] -= k * d;
    }
  });
}

Tensor l1(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "l1");
  const auto n = a.numel();
  if (n == 0) throw ShapeError("l1 of empty tensors");
  double acc = 0.0;
  for (std::int64_t i = 0; i < n; ++i) acc += std::abs(static_cast<double>(a.values()[i]) - b.values()[i]);
  return Tensor::make_result({1}, {static_cast<float>(acc / n)}, {a, b}, [n](detail::Node& self) {
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    const float k = self.grad[0] / static_cast<float>(n);
    for (std::int64_t i = 0; i < n; ++i) {
      const float d = pa.values[i] - pb.values[i];
      const float s = d > 0.0f ? k : (d < 0.0f ? -k : 0.0f);
      if (pa.requires_grad) pa.grad[i] += s;
      if (pb.requires_grad) pb.grad[i] -= s;
    }
  });
}

Tensor dot_const(const Tensor& x, std::span<const float> g) {
  if (static_cast<std::int64_t>(g.size()) != x.numel())
    throw ShapeError("dot_const: gradient length does not match tensor " + shape_str(x.shape()));
  double acc = 0.0;
  for (size_t i = 0; i < g.size(); ++i) acc += static_cast<double>(x.values()[i]) * g[i];
  std::vector<float> gc(g.begin(), g.end());
  return Tensor::make_result({1}, {static_cast<float>(acc)}, {x}, [gc = std::move(gc)](detail::Node& self) {
    auto& p = *self.parents[0];
    const float s = self.grad[0];
    for (size_t i = 0; i < gc.size(); ++i) p.grad[i] += s * gc[i];
  });
}

}  // namespace avatar::ops
