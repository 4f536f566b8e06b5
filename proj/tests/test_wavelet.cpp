#include <gtest/gtest.h>

#include <cmath>

#include "dualsr/degrade.hpp"
#include "dualsr/synth_image.hpp"
#include "dualsr/ops.hpp"
#include "dualsr/wavelet.hpp"
#include "test_util.hpp"

using namespace dualsr;

namespace {

double energy(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return s;
}

}  // namespace

TEST(Haar, ConstantImageHasZeroDetailBands) {
  Image img(16, 16, 3);
  std::fill(img.data.begin(), img.data.end(), 0.3);
  const auto p = haar_decompose(img);
  for (double v : p.ll.data) EXPECT_NEAR(v, 0.6, 1e-12);  // 2 * 0.3
  for (double v : p.hf.subbands.data) ASSERT_NEAR(v, 0.0, 1e-9);
}

TEST(Haar, VerticalStepEdgeLandsInHlOnly) {
  // Left half 0, right half 1; the step sits between columns 7 and 8,
  // inside the 2x2 blocks of block-column 3 is entirely left... the blocks
  // spanning columns (8,9) are entirely right, so only the block column
  // containing the transition shows HL response when the edge is odd-aligned.
  Image img(8, 8, 1);
  for (int y = 0; y < 8; ++y)
    for (int x = 0; x < 8; ++x) img.at(0, y, x) = x >= 5 ? 1.0 : 0.0;
  const auto p = haar_decompose(img);
  // Blocks cover columns {0,1},{2,3},{4,5},{6,7}: the step at x=5 splits
  // block 2, giving a = 0, b = 1 per row there.
  for (int y = 0; y < 4; ++y) {
    for (int x = 0; x < 4; ++x) {
      const double lh = p.hf.subbands.at(0, y, x);
      const double hl = p.hf.subbands.at(1, y, x);
      const double hh = p.hf.subbands.at(2, y, x);
      ASSERT_NEAR(lh, 0.0, 1e-12);
      ASSERT_NEAR(hh, 0.0, 1e-12);
      if (x == 2) {
        ASSERT_NEAR(hl, -1.0, 1e-12);  // 0.5 * (a-b+c-d) with b=d=1
      } else {
        ASSERT_NEAR(hl, 0.0, 1e-12);
      }
    }
  }
}

TEST(Haar, PerfectReconstruction) {
  Rng rng(21);
  const Image img = synth_image(24, 30, rng);
  const auto p = haar_decompose(img);
  const Image back = haar_reconstruct(p);
  ASSERT_EQ(back.height, img.height);
  ASSERT_EQ(back.width, img.width);
  for (std::size_t i = 0; i < img.data.size(); ++i)
    ASSERT_NEAR(back.data[i], img.data[i], 1e-9);
}

TEST(Haar, OddExtentsPadAndReconstruct) {
  Rng rng(22);
  const Image img = synth_image(17, 21, rng);
  const auto p = haar_decompose(img);
  EXPECT_EQ(p.pad_bottom, 1);
  EXPECT_EQ(p.pad_right, 1);
  const Image back = haar_reconstruct(p);
  ASSERT_EQ(back.height, 17);
  ASSERT_EQ(back.width, 21);
  for (std::size_t i = 0; i < img.data.size(); ++i)
    ASSERT_NEAR(back.data[i], img.data[i], 1e-9);
}

TEST(Haar, EnergyIsPreserved) {
  Rng rng(23);
  const Image img = synth_image(32, 32, rng);
  const auto p = haar_decompose(img);
  const double in_e = energy(img.data);
  const double out_e = energy(p.ll.data) + energy(p.hf.subbands.data);
  EXPECT_NEAR(out_e, in_e, 1e-6 * std::max(1.0, in_e));
}

TEST(Haar, EmptyImageRejected) {
  Image img;
  EXPECT_THROW(haar_decompose(img), std::invalid_argument);
}

TEST(HfInput, ConstantLrGivesZeroStack) {
  Image img(16, 16, 3);
  std::fill(img.data.begin(), img.data.end(), 0.8);
  const auto hf = hf_input(img);
  EXPECT_EQ(hf.subbands.channels, 9);
  for (double v : hf.subbands.data) ASSERT_NEAR(v, 0.0, 1e-9);
}

TEST(HfInput, Linearity) {
  Rng rng(24);
  const Image x = synth_image(16, 16, rng);
  const Image y = synth_image(16, 16, rng);
  const double a = 0.6, b = -0.3;
  Image combo(16, 16, 3);
  for (std::size_t i = 0; i < combo.data.size(); ++i)
    combo.data[i] = a * x.data[i] + b * y.data[i];
  const auto hx = hf_input(x);
  const auto hy = hf_input(y);
  const auto hc = hf_input(combo);
  for (std::size_t i = 0; i < hc.subbands.data.size(); ++i)
    ASSERT_NEAR(hc.subbands.data[i],
                a * hx.subbands.data[i] + b * hy.subbands.data[i], 1e-9);
}

TEST(HfInput, NoiseStdPassesThroughUnitNormFilters) {
  // White noise of std sigma keeps std sigma in each orthonormal subband.
  Image base(64, 64, 3);
  std::fill(base.data.begin(), base.data.end(), 0.5);
  Rng rng(25);
  const double sigma = 25.0 / 255.0;
  Image noisy = base;
  for (auto& v : noisy.data) v += rng.normal() * sigma;
  const auto hf = hf_input(noisy);
  double mean = 0.0;
  for (double v : hf.subbands.data) mean += v;
  mean /= static_cast<double>(hf.subbands.data.size());
  double var = 0.0;
  for (double v : hf.subbands.data) var += (v - mean) * (v - mean);
  var /= static_cast<double>(hf.subbands.data.size() - 1);
  EXPECT_NEAR(std::sqrt(var), sigma, 0.1 * sigma);
}

TEST(HfInput, WideBlurStripsHighFrequencies) {
  Rng rng(26);
  const Image img = synth_image(64, 64, rng);
  const auto wide = blur(img, make_aniso_gaussian_kernel(3.5, 3.5, 0.0, 21));
  const auto sharp = blur(img, make_aniso_gaussian_kernel(0.2, 0.2, 0.0, 21));
  const double e_wide = energy(hf_input(wide).subbands.data);
  const double e_sharp = energy(hf_input(sharp).subbands.data);
  EXPECT_LT(e_wide, e_sharp);
}

TEST(HfInput, HfEnergyMonotoneInNoise) {
  Rng rng_img(27);
  const Image base = synth_image(48, 48, rng_img);
  double prev = -1.0;
  for (double sigma : {0.0, 5.0, 10.0, 15.0, 20.0, 25.0}) {
    // Average over a few noise draws to damp Monte-Carlo fluctuation.
    double e = 0.0;
    for (int trial = 0; trial < 8; ++trial) {
      Rng rng(derive_seed(31, static_cast<std::uint64_t>(sigma * 10), trial));
      Image noisy = base;
      for (auto& v : noisy.data) v += rng.normal() * sigma / 255.0;
      noisy = clamp01(std::move(noisy));
      e += energy(hf_input(noisy).subbands.data);
    }
    e /= 8.0;
    ASSERT_GE(e, prev) << "sigma " << sigma;
    prev = e;
  }
}

TEST(HaarHighpassOp, MatchesImagePath) {
  Rng rng(28);
  const Image img = synth_image(16, 20, rng);
  const auto hf = hf_input(img);
  const Tensor t = haar_highpass(to_tensor(img));
  ASSERT_EQ(t.shape(), (Shape{9, 8, 10}));
  const Tensor ref = hf_to_tensor(hf);
  for (std::int64_t i = 0; i < t.size(); ++i)
    ASSERT_DOUBLE_EQ(t[i], ref[i]);
}

TEST(HaarHighpassOp, GradientMatchesFiniteDifferences) {
  Rng rng(29);
  Tensor x = testutil::random_tensor({3, 6, 6}, rng);
  x.set_requires_grad();
  auto loss = [&] {
    Tensor h = haar_highpass(x);
    return mean(mul(h, h));
  };
  auto rep = testutil::fd_check(loss, {x});
  EXPECT_TRUE(rep.ok) << "max abs err " << rep.max_abs_err;
}

TEST(HaarHighpassOp, OddExtentsRejected) {
  Tensor x = Tensor::zeros({3, 7, 8});
  EXPECT_THROW(haar_highpass(x), std::invalid_argument);
}
