#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "dualsr/image.hpp"
#include "dualsr/rng.hpp"

namespace dualsr {

/// Procedural test image: smooth gradient base plus oriented gratings,
/// sharp-edged rectangles and disks. Gives the broad-band high-frequency
/// content that blur/noise discrimination needs.
inline Image synth_image(int h, int w, Rng& rng) {
  Image img(h, w, 3);

  // Smooth per-channel gradient base.
  for (int c = 0; c < 3; ++c) {
    const double gx = rng.uniform(-0.3, 0.3);
    const double gy = rng.uniform(-0.3, 0.3);
    const double base = rng.uniform(0.3, 0.7);
    double* p = img.plane(c);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        p[static_cast<std::size_t>(y) * w + x] =
            base + gx * (static_cast<double>(x) / w - 0.5) +
            gy * (static_cast<double>(y) / h - 0.5);
  }

  // Oriented sinusoid gratings over soft windows. Amplitudes are kept high
  // so the clean image carries broad-band detail comparable to heavy noise;
  // blur signatures must stay visible on top of sigma <= 25 degradations.
  const int n_gratings = 4 + rng.uniform_int(4);
  for (int g = 0; g < n_gratings; ++g) {
    const double ang = rng.uniform(0.0, 3.14159265358979323846);
    const double freq = rng.uniform(0.25, 1.4);  // radians per pixel
    const double amp = rng.uniform(0.12, 0.3);
    const double cx = rng.uniform(0.0, 1.0) * w;
    const double cy = rng.uniform(0.0, 1.0) * h;
    const double rad = rng.uniform(0.3, 0.9) * std::min(h, w);
    const double ca = std::cos(ang), sa = std::sin(ang);
    double chan_mix[3] = {rng.uniform(0.5, 1.0), rng.uniform(0.5, 1.0),
                          rng.uniform(0.5, 1.0)};
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        const double dx = x - cx, dy = y - cy;
        const double dist2 = (dx * dx + dy * dy) / (rad * rad);
        if (dist2 > 4.0) continue;
        const double window = std::exp(-dist2);
        const double v = amp * window * std::sin(freq * (ca * x + sa * y));
        for (int c = 0; c < 3; ++c) img.at(c, y, x) += chan_mix[c] * v;
      }
  }

  // Fine high-contrast texture patches (checker-like), dense detail.
  const int n_patches = 2 + rng.uniform_int(3);
  for (int p = 0; p < n_patches; ++p) {
    const int pw = w / 4 + rng.uniform_int(std::max(1, w / 2));
    const int ph = h / 4 + rng.uniform_int(std::max(1, h / 2));
    const int x0 = rng.uniform_int(std::max(1, w - pw));
    const int y0 = rng.uniform_int(std::max(1, h - ph));
    const int cell = 2 + rng.uniform_int(3);
    const double amp = rng.uniform(0.15, 0.35);
    const double blend = rng.uniform(0.4, 0.9);
    for (int y = y0; y < std::min(h, y0 + ph); ++y)
      for (int x = x0; x < std::min(w, x0 + pw); ++x) {
        const double v = ((x / cell + y / cell) % 2) ? amp : -amp;
        for (int c = 0; c < 3; ++c)
          img.at(c, y, x) += blend * v;
      }
  }

  // Hard-edged rectangles and disks.
  const int n_shapes = 3 + rng.uniform_int(4);
  for (int sidx = 0; sidx < n_shapes; ++sidx) {
    const bool disk = rng.uniform() < 0.5;
    const double level[3] = {rng.uniform(0.05, 0.95), rng.uniform(0.05, 0.95),
                             rng.uniform(0.05, 0.95)};
    const double blend = rng.uniform(0.35, 0.85);
    if (disk) {
      const double cx = rng.uniform(0.0, 1.0) * w;
      const double cy = rng.uniform(0.0, 1.0) * h;
      const double rad = rng.uniform(0.04, 0.2) * std::min(h, w);
      const int y0 = std::max(0, static_cast<int>(cy - rad) - 1);
      const int y1 = std::min(h, static_cast<int>(cy + rad) + 2);
      const int x0 = std::max(0, static_cast<int>(cx - rad) - 1);
      const int x1 = std::min(w, static_cast<int>(cx + rad) + 2);
      for (int y = y0; y < y1; ++y)
        for (int x = x0; x < x1; ++x) {
          const double dx = x - cx, dy = y - cy;
          if (dx * dx + dy * dy <= rad * rad)
            for (int c = 0; c < 3; ++c)
              img.at(c, y, x) = (1.0 - blend) * img.at(c, y, x) + blend * level[c];
        }
    } else {
      const int bw = 2 + rng.uniform_int(std::max(2, w / 3));
      const int bh = 2 + rng.uniform_int(std::max(2, h / 3));
      const int x0 = rng.uniform_int(std::max(1, w - bw));
      const int y0 = rng.uniform_int(std::max(1, h - bh));
      for (int y = y0; y < std::min(h, y0 + bh); ++y)
        for (int x = x0; x < std::min(w, x0 + bw); ++x)
          for (int c = 0; c < 3; ++c)
            img.at(c, y, x) = (1.0 - blend) * img.at(c, y, x) + blend * level[c];
    }
  }

  return clamp01(std::move(img));
}

inline std::vector<Image> synth_pool(int count, int h, int w,
                                     std::uint64_t seed) {
  std::vector<Image> pool;
  pool.reserve(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) {
    Rng rng(derive_seed(seed, 0x51, static_cast<std::uint64_t>(i)));
    pool.push_back(synth_image(h, w, rng));
  }
  return pool;
}

}  // namespace dualsr
