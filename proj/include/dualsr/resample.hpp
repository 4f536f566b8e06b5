#pragma once

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "dualsr/image.hpp"

namespace dualsr {

namespace detail {

// Catmull-Rom style cubic with a = -0.5.
inline double cubic_weight(double t) {
  constexpr double a = -0.5;
  t = std::fabs(t);
  if (t <= 1.0) return ((a + 2.0) * t - (a + 3.0)) * t * t + 1.0;
  if (t < 2.0) return (((t - 5.0) * t + 8.0) * t - 4.0) * a;
  return 0.0;
}

struct CubicTaps {
  int index[4];
  double weight[4];
};

// Per-output-coordinate taps under the align-to-center convention
// x_in = (x_out + 0.5) * (in/out) - 0.5, with edge-clamped sampling.
inline std::vector<CubicTaps> cubic_taps(int in_n, int out_n) {
  std::vector<CubicTaps> taps(static_cast<std::size_t>(out_n));
  const double ratio = static_cast<double>(in_n) / out_n;
  for (int o = 0; o < out_n; ++o) {
    const double src = (o + 0.5) * ratio - 0.5;
    const int base = static_cast<int>(std::floor(src));
    const double frac = src - base;
    auto& t = taps[static_cast<std::size_t>(o)];
    for (int k = 0; k < 4; ++k) {
      const int idx = base - 1 + k;
      t.index[k] = std::clamp(idx, 0, in_n - 1);
      t.weight[k] = cubic_weight(frac - (k - 1));
    }
  }
  return taps;
}

}  // namespace detail

/// Separable bicubic interpolation (Catmull-Rom, a = -0.5), edge-clamped.
inline Image bicubic_resample(const Image& img, int out_h, int out_w) {
  if (out_h < 1 || out_w < 1)
    throw std::invalid_argument("bicubic_resample: target extents must be >= 1");
  if (img.empty())
    throw std::invalid_argument("bicubic_resample: empty input");
  const auto xtaps = detail::cubic_taps(img.width, out_w);
  const auto ytaps = detail::cubic_taps(img.height, out_h);

  Image out(out_h, out_w, img.channels, img.space);
  std::vector<double> tmp(static_cast<std::size_t>(img.height) * out_w);
  for (int c = 0; c < img.channels; ++c) {
    const double* in = img.plane(c);
    // Horizontal pass.
    for (int y = 0; y < img.height; ++y) {
      const double* row = in + static_cast<std::size_t>(y) * img.width;
      double* trow = tmp.data() + static_cast<std::size_t>(y) * out_w;
      for (int x = 0; x < out_w; ++x) {
        const auto& t = xtaps[static_cast<std::size_t>(x)];
        trow[x] = t.weight[0] * row[t.index[0]] + t.weight[1] * row[t.index[1]] +
                  t.weight[2] * row[t.index[2]] + t.weight[3] * row[t.index[3]];
      }
    }
    // Vertical pass.
    double* op = out.plane(c);
    for (int y = 0; y < out_h; ++y) {
      const auto& t = ytaps[static_cast<std::size_t>(y)];
      const double* r0 = tmp.data() + static_cast<std::size_t>(t.index[0]) * out_w;
      const double* r1 = tmp.data() + static_cast<std::size_t>(t.index[1]) * out_w;
      const double* r2 = tmp.data() + static_cast<std::size_t>(t.index[2]) * out_w;
      const double* r3 = tmp.data() + static_cast<std::size_t>(t.index[3]) * out_w;
      double* orow = op + static_cast<std::size_t>(y) * out_w;
      for (int x = 0; x < out_w; ++x)
        orow[x] = t.weight[0] * r0[x] + t.weight[1] * r1[x] +
                  t.weight[2] * r2[x] + t.weight[3] * r3[x];
    }
  }
  return out;
}

}  // namespace dualsr
