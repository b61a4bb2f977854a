#pragma once

// Image losses with explicit gradients (the renderer lives off the tape)
// and the evaluation metrics.

#include <span>
#include <vector>

#include "avatar/image.hpp"
#include "avatar/maps.hpp"
#include "avatar/splat.hpp"

namespace avatar {

struct LossWeights {
  double grad = 0.2;     // multi-scale gradient L1 (perceptual stand-in)
  double offset = 10.0;  // mean squared offset norm, offsets in meters
};

struct LossTerms {
  double total = 0, l1 = 0, grad = 0, offset = 0;
};

/// Mean absolute error over all pixels and channels; d_out (same shape, may
/// be null) receives dL1/drender scaled by `weight` and is accumulated into.
double l1_loss(const ImageD& render, const ImageD& gt, ImageD* d_out = nullptr, double weight = 1.0);

/// Average over 3 dyadic scales of mean |Dx r - Dx g| + mean |Dy r - Dy g|,
/// with forward differences and 2x2 box downsampling between scales.
double gradient_loss(const ImageD& render, const ImageD& gt, ImageD* d_out = nullptr, double weight = 1.0,
                     int scales = 3);

/// Mean over valid pixels of |dx|^2, dx read from the Gaussian-map offset
/// channels. d_gmap (may be null) accumulates weight * gradient.
double offset_loss(std::span<const float> gmap, const CanonicalMapSet& maps, std::vector<float>* d_gmap = nullptr,
                   double weight = 1.0);

/// Full objective. gt rgb is zeroed wherever gt alpha is zero. d_rgb is
/// resized and overwritten; d_gmap is resized and overwritten with the
/// offset-term gradient only.
LossTerms loss_total(const RenderTarget& render, const RenderTarget& gt, std::span<const float> gmap,
                     const CanonicalMapSet& maps, const LossWeights& w, ImageD* d_rgb, std::vector<float>* d_gmap);

/// 10 log10(1 / MSE) over all channels, capped at 99 dB when MSE < 1e-10.
double psnr(const ImageD& a, const ImageD& b);
/// Same, over pixels where mask > threshold.
double psnr_masked(const ImageD& a, const ImageD& b, const ImageD& mask, double threshold = 0.999);
/// Mean SSIM over channels and all window positions that fit inside the
/// image; 11x11 Gaussian window, sigma 1.5, K1 = 0.01, K2 = 0.03, L = 1.
double ssim(const ImageD& a, const ImageD& b);

}  // namespace avatar
