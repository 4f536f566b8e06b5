#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "dualsr/image.hpp"

namespace dualsr {

/// Square blur kernel; weights are nonnegative and sum to 1.
struct BlurKernel {
  int size = 0;
  std::vector<double> weights;

  double at(int y, int x) const {
    return weights[static_cast<std::size_t>(y) * size + x];
  }
};

/// Anisotropic Gaussian on the integer grid centered at the kernel center:
/// w(x) ~ exp(-0.5 x^T Sigma^-1 x) with Sigma = R(theta) diag(l1^2, l2^2) R^T.
inline BlurKernel make_aniso_gaussian_kernel(double lambda1, double lambda2,
                                             double theta, int size = 21) {
  if (lambda1 <= 0.0 || lambda2 <= 0.0)
    throw std::invalid_argument("make_aniso_gaussian_kernel: widths must be positive");
  if (size < 1 || size % 2 == 0)
    throw std::invalid_argument("make_aniso_gaussian_kernel: size must be odd, got " +
                                std::to_string(size));
  const double c = std::cos(theta), s = std::sin(theta);
  // Sigma^-1 = R diag(1/l1^2, 1/l2^2) R^T, expanded to its three entries.
  const double i1 = 1.0 / (lambda1 * lambda1);
  const double i2 = 1.0 / (lambda2 * lambda2);
  const double a = c * c * i1 + s * s * i2;   // xx
  const double b = c * s * (i1 - i2);         // xy
  const double d = s * s * i1 + c * c * i2;   // yy

  BlurKernel k;
  k.size = size;
  k.weights.resize(static_cast<std::size_t>(size) * size);
  const int r = size / 2;
  double total = 0.0;
  for (int y = -r; y <= r; ++y) {
    for (int x = -r; x <= r; ++x) {
      const double q = a * x * x + 2.0 * b * x * y + d * y * y;
      const double w = std::exp(-0.5 * q);
      k.weights[static_cast<std::size_t>(y + r) * size + (x + r)] = w;
      total += w;
    }
  }
  for (auto& w : k.weights) w /= total;
  return k;
}

/// Per-channel 2-D correlation with reflect-padded borders (mirror including
/// the edge pixel); output extents equal input extents.
inline Image blur(const Image& img, const BlurKernel& k) {
  if (k.size > img.height || k.size > img.width)
    throw std::invalid_argument("blur: kernel size " + std::to_string(k.size) +
                                " exceeds image " + std::to_string(img.height) +
                                "x" + std::to_string(img.width));
  const int h = img.height, w = img.width, r = k.size / 2;
  auto reflect = [](int i, int n) {
    // ... c b a | a b c ... (symmetric, edge pixel included)
    while (i < 0 || i >= n) {
      if (i < 0) i = -i - 1;
      if (i >= n) i = 2 * n - 1 - i;
    }
    return i;
  };
  const int ph = h + 2 * r, pw = w + 2 * r;
  std::vector<double> padded(static_cast<std::size_t>(ph) * pw);
  Image out(h, w, img.channels, img.space);
  for (int c = 0; c < img.channels; ++c) {
    const double* in = img.plane(c);
    for (int y = 0; y < ph; ++y) {
      const double* row = in + static_cast<std::size_t>(reflect(y - r, h)) * w;
      double* prow = padded.data() + static_cast<std::size_t>(y) * pw;
      for (int x = 0; x < pw; ++x) prow[x] = row[reflect(x - r, w)];
    }
    double* op = out.plane(c);
    for (int y = 0; y < h; ++y) {
      double* orow = op + static_cast<std::size_t>(y) * w;
      std::fill(orow, orow + w, 0.0);
      for (int ky = 0; ky < k.size; ++ky) {
        const double* prow = padded.data() + static_cast<std::size_t>(y + ky) * pw;
        const double* krow =
            k.weights.data() + static_cast<std::size_t>(ky) * k.size;
        for (int kx = 0; kx < k.size; ++kx) {
          const double wv = krow[kx];
          const double* src = prow + kx;
          for (int x = 0; x < w; ++x) orow[x] += wv * src[x];
        }
      }
    }
  }
  return out;
}

}  // namespace dualsr
