#include "avatar/losses.hpp"

#include <algorithm>
#include <cmath>

#include "avatar/common.hpp"

namespace avatar {

namespace {

void check_same(const ImageD& a, const ImageD& b, const char* what) {
  if (!a.same_size(b)) throw ShapeError(std::string(what) + ": image sizes differ");
}

double sgn(double v) { return (v > 0) - (v < 0); }

ImageD down2(const ImageD& x) {
  ImageD out(x.width / 2, x.height / 2, x.channels);
  for (int c = 0; c < x.channels; ++c)
    for (int y = 0; y < out.height; ++y)
      for (int xx = 0; xx < out.width; ++xx)
        out.at(c, y, xx) = 0.25 * (x.at(c, 2 * y, 2 * xx) + x.at(c, 2 * y, 2 * xx + 1) + x.at(c, 2 * y + 1, 2 * xx) +
                                   x.at(c, 2 * y + 1, 2 * xx + 1));
  return out;
}

// Adjoint of down2, accumulated into `fine`.
void down2_adjoint(const ImageD& coarse, ImageD& fine) {
  for (int c = 0; c < coarse.channels; ++c)
    for (int y = 0; y < coarse.height; ++y)
      for (int x = 0; x < coarse.width; ++x) {
        const double g = 0.25 * coarse.at(c, y, x);
        fine.at(c, 2 * y, 2 * x) += g;
        fine.at(c, 2 * y, 2 * x + 1) += g;
        fine.at(c, 2 * y + 1, 2 * x) += g;
        fine.at(c, 2 * y + 1, 2 * x + 1) += g;
      }
}

// Mean |Dx r - Dx g| + mean |Dy r - Dy g| at one scale; gradient into d.
double grad_term(const ImageD& r, const ImageD& g, ImageD* d, double weight) {
  double sx = 0, sy = 0;
  const double nx = double(r.channels) * r.height * std::max(0, r.width - 1);
  const double ny = double(r.channels) * std::max(0, r.height - 1) * r.width;
  for (int c = 0; c < r.channels; ++c)
    for (int y = 0; y < r.height; ++y)
      for (int x = 0; x < r.width; ++x) {
        if (x + 1 < r.width) {
          const double e = (r.at(c, y, x + 1) - r.at(c, y, x)) - (g.at(c, y, x + 1) - g.at(c, y, x));
          sx += std::abs(e);
          if (d) {
            const double k = weight * sgn(e) / nx;
            d->at(c, y, x + 1) += k;
            d->at(c, y, x) -= k;
          }
        }
        if (y + 1 < r.height) {
          const double e = (r.at(c, y + 1, x) - r.at(c, y, x)) - (g.at(c, y + 1, x) - g.at(c, y, x));
          sy += std::abs(e);
          if (d) {
            const double k = weight * sgn(e) / ny;
            d->at(c, y + 1, x) += k;
            d->at(c, y, x) -= k;
          }
        }
      }
  return (nx > 0 ? sx / nx : 0.0) + (ny > 0 ? sy / ny : 0.0);
}

}  // namespace

double l1_loss(const ImageD& render, const ImageD& gt, ImageD* d_out, double weight) {
  check_same(render, gt, "l1_loss");
  const double n = static_cast<double>(render.data.size());
  double s = 0;
  for (size_t i = 0; i < render.data.size(); ++i) {
    const double e = render.data[i] - gt.data[i];
    s += std::abs(e);
    if (d_out) d_out->data[i] += weight * sgn(e) / n;
  }
  return s / n;
}

double gradient_loss(const ImageD& render, const ImageD& gt, ImageD* d_out, double weight, int scales) {
  check_same(render, gt, "gradient_loss");
  if (scales < 1) throw ConfigError("gradient_loss: scales must be >= 1");
  std::vector<ImageD> rs{render}, gs{gt};
  for (int s = 1; s < scales; ++s) {
    if (rs.back().width < 2 || rs.back().height < 2) break;
    rs.push_back(down2(rs.back()));
    gs.push_back(down2(gs.back()));
  }
  const int n = static_cast<int>(rs.size());
  double total = 0;
  std::vector<ImageD> ds;
  if (d_out)
    for (const auto& r : rs) ds.emplace_back(r.width, r.height, r.channels);
  for (int s = 0; s < n; ++s) total += grad_term(rs[s], gs[s], d_out ? &ds[s] : nullptr, weight / n);
  if (d_out) {
    for (int s = n - 1; s > 0; --s) down2_adjoint(ds[s], ds[s - 1]);
    for (size_t i = 0; i < d_out->data.size(); ++i) d_out->data[i] += ds[0].data[i];
  }
  return total / n;
}

double offset_loss(std::span<const float> gmap, const CanonicalMapSet& maps, std::vector<float>* d_gmap, double weight) {
  const int r = maps.resolution;
  const size_t plane = size_t(r) * r;
  if (gmap.size() != 2 * kGaussianChannels * plane) throw ShapeError("offset_loss: gaussian map size mismatch");
  const auto px = maps.valid_pixels();
  if (px.empty()) return 0.0;
  double s = 0;
  const double m = static_cast<double>(px.size());
  for (const auto& p : px) {
    for (int k = 0; k < 3; ++k) {
      const size_t at = (size_t(p.side) * kGaussianChannels + kChDx + k) * plane + size_t(p.y) * r + p.x;
      const double v = gmap[at];
      s += v * v;
      if (d_gmap) (*d_gmap)[at] += static_cast<float>(weight * 2.0 * v / m);
    }
  }
  return s / m;
}

LossTerms loss_total(const RenderTarget& render, const RenderTarget& gt, std::span<const float> gmap,
                     const CanonicalMapSet& maps, const LossWeights& w, ImageD* d_rgb, std::vector<float>* d_gmap) {
  check_same(render.rgb, gt.rgb, "loss_total");
  if (!gt.alpha.same_size(ImageD(gt.rgb.width, gt.rgb.height, 1))) throw ShapeError("loss_total: gt alpha size");
  ImageD target = gt.rgb;
  const size_t plane = target.plane();
  for (size_t i = 0; i < plane; ++i)
    if (gt.alpha.data[i] <= 0.0)
      for (int c = 0; c < target.channels; ++c) target.data[c * plane + i] = 0.0;
  if (d_rgb) *d_rgb = ImageD(render.rgb.width, render.rgb.height, render.rgb.channels);
  if (d_gmap) d_gmap->assign(gmap.size(), 0.0f);
  LossTerms t;
  t.l1 = l1_loss(render.rgb, target, d_rgb, 1.0);
  t.grad = gradient_loss(render.rgb, target, d_rgb, w.grad);
  t.offset = offset_loss(gmap, maps, d_gmap, w.offset);
  t.total = t.l1 + w.grad * t.grad + w.offset * t.offset;
  return t;
}

double psnr(const ImageD& a, const ImageD& b) {
  check_same(a, b, "psnr");
  double s = 0;
  for (size_t i = 0; i < a.data.size(); ++i) s += (a.data[i] - b.data[i]) * (a.data[i] - b.data[i]);
  const double mse = s / a.data.size();
  return mse < 1e-10 ? 99.0 : 10.0 * std::log10(1.0 / mse);
}

double psnr_masked(const ImageD& a, const ImageD& b, const ImageD& mask, double threshold) {
  check_same(a, b, "psnr_masked");
  if (mask.width != a.width || mask.height != a.height) throw ShapeError("psnr_masked: mask size differs");
  const size_t plane = a.plane();
  double s = 0;
  size_t n = 0;
  for (size_t i = 0; i < plane; ++i) {
    if (!(mask.data[i] > threshold)) continue;
    for (int c = 0; c < a.channels; ++c) {
      const double d = a.data[c * plane + i] - b.data[c * plane + i];
      s += d * d;
    }
    n += a.channels;
  }
  if (n == 0) throw DataError("psnr_masked: empty mask");
  const double mse = s / n;
  return mse < 1e-10 ? 99.0 : 10.0 * std::log10(1.0 / mse);
}

double ssim(const ImageD& a, const ImageD& b) {
  check_same(a, b, "ssim");
  constexpr int kWin = 11;
  if (a.width < kWin || a.height < kWin) throw ShapeError("ssim: image smaller than the 11x11 window");
  double g[kWin], gs = 0;
  for (int i = 0; i < kWin; ++i) gs += g[i] = std::exp(-0.5 * (i - 5) * (i - 5) / (1.5 * 1.5));
  for (double& v : g) v /= gs;
  const double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
  const int ow = a.width - kWin + 1, oh = a.height - kWin + 1;
  // Separable filtering of x, y, x^2, y^2, xy: rows first, then columns.
  auto filt = [&](auto&& f, int c) {
    std::vector<double> tmp(size_t(a.height) * ow), out(size_t(oh) * ow);
    for (int y = 0; y < a.height; ++y)
      for (int x = 0; x < ow; ++x) {
        double s = 0;
        for (int k = 0; k < kWin; ++k) s += g[k] * f(c, y, x + k);
        tmp[size_t(y) * ow + x] = s;
      }
    for (int y = 0; y < oh; ++y)
      for (int x = 0; x < ow; ++x) {
        double s = 0;
        for (int k = 0; k < kWin; ++k) s += g[k] * tmp[size_t(y + k) * ow + x];
        out[size_t(y) * ow + x] = s;
      }
    return out;
  };
  double total = 0;
  for (int c = 0; c < a.channels; ++c) {
    const auto mx = filt([&](int cc, int y, int x) { return a.at(cc, y, x); }, c);
    const auto my = filt([&](int cc, int y, int x) { return b.at(cc, y, x); }, c);
    const auto xx = filt([&](int cc, int y, int x) { return a.at(cc, y, x) * a.at(cc, y, x); }, c);
    const auto yy = filt([&](int cc, int y, int x) { return b.at(cc, y, x) * b.at(cc, y, x); }, c);
    const auto xy = filt([&](int cc, int y, int x) { return a.at(cc, y, x) * b.at(cc, y, x); }, c);
    double s = 0;
    for (size_t i = 0; i < mx.size(); ++i) {
      const double vx = xx[i] - mx[i] * mx[i], vy = yy[i] - my[i] * my[i], cxy = xy[i] - mx[i] * my[i];
      s += ((2 * mx[i] * my[i] + c1) * (2 * cxy + c2)) / ((mx[i] * mx[i] + my[i] * my[i] + c1) * (vx + vy + c2));
    }
    total += s / mx.size();
  }
  return total / a.channels;
}

}  // namespace avatar
