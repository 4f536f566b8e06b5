#pragma once

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "dualsr/image.hpp"

namespace dualsr {

/// ITU-R BT.601 luma with studio offset:
/// Y = (65.481 R + 128.553 G + 24.966 B + 16) / 255, inputs in [0,1].
inline Image rgb_to_y(const Image& img) {
  if (img.channels != 3)
    throw std::invalid_argument("rgb_to_y: expected 3 channels, got " +
                                std::to_string(img.channels));
  Image y(img.height, img.width, 1, ColorSpace::luma);
  const double* r = img.plane(0);
  const double* g = img.plane(1);
  const double* b = img.plane(2);
  double* out = y.plane(0);
  const std::int64_t n = img.pixels();
  for (std::int64_t i = 0; i < n; ++i)
    out[i] = (65.481 * r[i] + 128.553 * g[i] + 24.966 * b[i] + 16.0) / 255.0;
  return y;
}

namespace detail {

inline Image luma_of(const Image& img) {
  return img.channels == 1 ? img : rgb_to_y(img);
}

inline void check_metric_pair(const Image& a, const Image& b, const char* op) {
  if (a.height != b.height || a.width != b.width || a.channels != b.channels)
    throw std::invalid_argument(
        std::string(op) + ": extent mismatch " + std::to_string(a.height) +
        "x" + std::to_string(a.width) + "x" + std::to_string(a.channels) +
        " vs " + std::to_string(b.height) + "x" + std::to_string(b.width) +
        "x" + std::to_string(b.channels));
}

}  // namespace detail

inline constexpr double kPsnrCap = 99.0;

/// Y-channel PSNR in dB with a `crop`-pixel border excluded; dynamic range 1.
inline double psnr_y(const Image& sr, const Image& hr, int crop) {
  detail::check_metric_pair(sr, hr, "psnr_y");
  if (sr.height <= 2 * crop || sr.width <= 2 * crop)
    throw std::invalid_argument("psnr_y: nothing left after crop " +
                                std::to_string(crop));
  const Image ys = detail::luma_of(sr);
  const Image yh = detail::luma_of(hr);
  double se = 0.0;
  std::int64_t n = 0;
  for (int y = crop; y < ys.height - crop; ++y)
    for (int x = crop; x < ys.width - crop; ++x) {
      const double d = ys.at(0, y, x) - yh.at(0, y, x);
      se += d * d;
      ++n;
    }
  const double mse = se / static_cast<double>(n);
  if (mse <= 0.0) return kPsnrCap;
  return std::min(kPsnrCap, 10.0 * std::log10(1.0 / mse));
}

/// Single-scale SSIM on the Y channel: 11x11 Gaussian window sigma 1.5,
/// K1 = 0.01, K2 = 0.03, dynamic range 1, mean over valid windows.
inline double ssim_y(const Image& sr, const Image& hr, int crop) {
  detail::check_metric_pair(sr, hr, "ssim_y");
  constexpr int kWin = 11;
  const int h = sr.height - 2 * crop;
  const int w = sr.width - 2 * crop;
  if (h < kWin || w < kWin)
    throw std::invalid_argument("ssim_y: extents after crop " +
                                std::to_string(h) + "x" + std::to_string(w) +
                                " below window size 11");
  const Image ys = detail::luma_of(sr);
  const Image yh = detail::luma_of(hr);

  // Normalized 11x11 Gaussian window, sigma = 1.5.
  double win[kWin * kWin];
  double total = 0.0;
  for (int y = 0; y < kWin; ++y)
    for (int x = 0; x < kWin; ++x) {
      const double dy = y - 5, dx = x - 5;
      win[y * kWin + x] = std::exp(-(dx * dx + dy * dy) / (2.0 * 1.5 * 1.5));
      total += win[y * kWin + x];
    }
  for (double& v : win) v /= total;

  constexpr double c1 = 0.01 * 0.01;
  constexpr double c2 = 0.03 * 0.03;
  double acc = 0.0;
  std::int64_t count = 0;
  for (int y0 = crop; y0 + kWin <= sr.height - crop; ++y0) {
    for (int x0 = crop; x0 + kWin <= sr.width - crop; ++x0) {
      double mx = 0, my = 0, xx = 0, yy = 0, xy = 0;
      for (int dy = 0; dy < kWin; ++dy)
        for (int dx = 0; dx < kWin; ++dx) {
          const double wv = win[dy * kWin + dx];
          const double a = ys.at(0, y0 + dy, x0 + dx);
          const double b = yh.at(0, y0 + dy, x0 + dx);
          mx += wv * a;
          my += wv * b;
          xx += wv * a * a;
          yy += wv * b * b;
          xy += wv * a * b;
        }
      const double vx = xx - mx * mx;
      const double vy = yy - my * my;
      const double cov = xy - mx * my;
      acc += ((2 * mx * my + c1) * (2 * cov + c2)) /
             ((mx * mx + my * my + c1) * (vx + vy + c2));
      ++count;
    }
  }
  return acc / static_cast<double>(count);
}

}  // namespace dualsr
