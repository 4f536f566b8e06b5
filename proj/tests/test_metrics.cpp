#include <gtest/gtest.h>

#include <cmath>

#include "dualsr/metrics.hpp"
#include "dualsr/rng.hpp"
#include "dualsr/synth_image.hpp"

using namespace dualsr;

namespace {

// Scalar reference PSNR: separate luma evaluation and x-major traversal.
double psnr_oracle(const Image& a, const Image& b, int crop) {
  auto luma = [](const Image& img, int y, int x) {
    if (img.channels == 1) return img.at(0, y, x);
    return 16.0 / 255.0 + (65.481 * img.at(0, y, x) + 128.553 * img.at(1, y, x) +
                           24.966 * img.at(2, y, x)) /
                              255.0;
  };
  double se = 0.0;
  std::int64_t n = 0;
  for (int x = crop; x < a.width - crop; ++x)
    for (int y = crop; y < a.height - crop; ++y) {
      const double d = luma(a, y, x) - luma(b, y, x);
      se += d * d;
      ++n;
    }
  const double mse = se / static_cast<double>(n);
  if (mse <= 0.0) return 99.0;
  return std::min(99.0, 10.0 * std::log10(1.0 / mse));
}

// Scalar reference SSIM using centered moments per extracted window.
double ssim_oracle(const Image& a, const Image& b, int crop) {
  const Image ya = a.channels == 1 ? a : rgb_to_y(a);
  const Image yb = b.channels == 1 ? b : rgb_to_y(b);
  double win[121];
  double total = 0.0;
  for (int y = 0; y < 11; ++y)
    for (int x = 0; x < 11; ++x) {
      win[y * 11 + x] =
          std::exp(-((x - 5.0) * (x - 5.0) + (y - 5.0) * (y - 5.0)) / 4.5);
      total += win[y * 11 + x];
    }
  for (double& v : win) v /= total;
  double acc = 0.0;
  int count = 0;
  for (int y0 = crop; y0 + 11 <= a.height - crop; ++y0)
    for (int x0 = crop; x0 + 11 <= a.width - crop; ++x0) {
      double pa[121], pb[121];
      for (int dy = 0; dy < 11; ++dy)
        for (int dx = 0; dx < 11; ++dx) {
          pa[dy * 11 + dx] = ya.at(0, y0 + dy, x0 + dx);
          pb[dy * 11 + dx] = yb.at(0, y0 + dy, x0 + dx);
        }
      double ma = 0, mb = 0;
      for (int i = 0; i < 121; ++i) {
        ma += win[i] * pa[i];
        mb += win[i] * pb[i];
      }
      double va = 0, vb = 0, cab = 0;
      for (int i = 0; i < 121; ++i) {
        va += win[i] * (pa[i] - ma) * (pa[i] - ma);
        vb += win[i] * (pb[i] - mb) * (pb[i] - mb);
        cab += win[i] * (pa[i] - ma) * (pb[i] - mb);
      }
      const double c1 = 1e-4, c2 = 9e-4;
      acc += ((2 * ma * mb + c1) * (2 * cab + c2)) /
             ((ma * ma + mb * mb + c1) * (va + vb + c2));
      ++count;
    }
  return acc / count;
}

}  // namespace

TEST(RgbToY, BlackMapsToStudioOffset) {
  Image img(4, 4, 3);
  const Image y = rgb_to_y(img);
  for (double v : y.data) ASSERT_NEAR(v, 16.0 / 255.0, 1e-6);
}

TEST(RgbToY, WhiteMapsTo235) {
  Image img(4, 4, 3);
  std::fill(img.data.begin(), img.data.end(), 1.0);
  const Image y = rgb_to_y(img);
  for (double v : y.data) ASSERT_NEAR(v, 235.0 / 255.0, 1e-6);
}

TEST(RgbToY, PureRed) {
  Image img(2, 2, 3);
  std::fill(img.plane(0), img.plane(0) + 4, 1.0);
  const Image y = rgb_to_y(img);
  for (double v : y.data) ASSERT_NEAR(v, 81.481 / 255.0, 1e-6);
}

TEST(PsnrY, IdenticalImagesHitSentinel) {
  Rng rng(41);
  const Image img = synth_image(24, 24, rng);
  EXPECT_DOUBLE_EQ(psnr_y(img, img, 2), 99.0);
}

TEST(PsnrY, KnownMseGivesExactDb) {
  Image a(16, 16, 1), b(16, 16, 1);
  std::fill(a.data.begin(), a.data.end(), 0.5);
  std::fill(b.data.begin(), b.data.end(), 0.6);
  EXPECT_NEAR(psnr_y(a, b, 0), 20.0, 1e-12);
}

TEST(PsnrY, MatchesScalarOracle) {
  Rng rng(42);
  for (int t = 0; t < 10; ++t) {
    const Image a = synth_image(20, 24, rng);
    Image b = a;
    for (auto& v : b.data) v += rng.normal() * 0.05;
    b = clamp01(std::move(b));
    ASSERT_NEAR(psnr_y(a, b, 2), psnr_oracle(a, b, 2), 1e-9);
  }
}

TEST(PsnrY, Symmetric) {
  Rng rng(43);
  const Image a = synth_image(20, 20, rng);
  const Image b = synth_image(20, 20, rng);
  EXPECT_DOUBLE_EQ(psnr_y(a, b, 2), psnr_y(b, a, 2));
}

TEST(PsnrY, DecreasesWithGrowingNoise) {
  Rng rng(44);
  const Image a = synth_image(32, 32, rng);
  double prev = 1e9;
  for (double sigma : {0.01, 0.03, 0.09, 0.27}) {
    double p = 0.0;
    for (int trial = 0; trial < 5; ++trial) {
      Image b = a;
      Rng noise(derive_seed(45, static_cast<std::uint64_t>(sigma * 1000), trial));
      for (auto& v : b.data) v += noise.normal() * sigma;
      p += psnr_y(a, clamp01(std::move(b)), 0);
    }
    p /= 5.0;
    ASSERT_LT(p, prev);
    prev = p;
  }
}

TEST(PsnrY, ShapeMismatchRejected) {
  Image a(16, 16, 3), b(16, 18, 3);
  EXPECT_THROW(psnr_y(a, b, 0), std::invalid_argument);
}

TEST(SsimY, IdenticalImagesGiveOne) {
  Rng rng(46);
  const Image img = synth_image(24, 24, rng);
  EXPECT_NEAR(ssim_y(img, img, 2), 1.0, 1e-12);
}

TEST(SsimY, AnticorrelatedCheckerboardGoesNegative) {
  Image a(16, 16, 1), b(16, 16, 1);
  for (int y = 0; y < 16; ++y)
    for (int x = 0; x < 16; ++x) {
      a.at(0, y, x) = (x + y) % 2 ? 1.0 : 0.0;
      b.at(0, y, x) = 1.0 - a.at(0, y, x);
    }
  EXPECT_LT(ssim_y(a, b, 0), 0.0);
}

TEST(SsimY, MatchesScalarOracle) {
  Rng rng(47);
  for (int t = 0; t < 10; ++t) {
    const Image a = synth_image(20, 22, rng);
    Image b = a;
    for (auto& v : b.data) v += rng.normal() * 0.04;
    b = clamp01(std::move(b));
    ASSERT_NEAR(ssim_y(a, b, 2), ssim_oracle(a, b, 2), 1e-6);
  }
}

TEST(SsimY, Symmetric) {
  Rng rng(48);
  const Image a = synth_image(20, 20, rng);
  const Image b = synth_image(20, 20, rng);
  EXPECT_NEAR(ssim_y(a, b, 0), ssim_y(b, a, 0), 1e-12);
}

TEST(SsimY, UndersizedInputRejected) {
  Image a(12, 12, 3), b(12, 12, 3);
  EXPECT_THROW(ssim_y(a, b, 1), std::invalid_argument);
}
