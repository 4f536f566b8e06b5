#include <gtest/gtest.h>

#include <cmath>

#include "dualsr/sr_network.hpp"
#include "dualsr/synth_image.hpp"
#include "test_util.hpp"

using namespace dualsr;

namespace {

CondBlock zeroed_conditioning_block(int c, int embed, Rng& rng) {
  CondBlock block(c, embed, rng);
  // Blur head weights zeroed; biases already give the delta kernel and
  // (gamma, beta) = (1, 0).
  std::fill(block.kernel_map1.weight.values().begin(),
            block.kernel_map1.weight.values().end(), 0.0);
  std::fill(block.kernel_map1.bias.values().begin(),
            block.kernel_map1.bias.values().end(), 0.0);
  std::fill(block.kernel_map2.weight.values().begin(),
            block.kernel_map2.weight.values().end(), 0.0);
  std::fill(block.gamma_map.weight.values().begin(),
            block.gamma_map.weight.values().end(), 0.0);
  std::fill(block.beta_map.weight.values().begin(),
            block.beta_map.weight.values().end(), 0.0);
  return block;
}

}  // namespace

TEST(CondBlock, NeutralConditioningMakesFilteringIdentity) {
  Rng rng(1);
  CondBlock block = zeroed_conditioning_block(8, 16, rng);
  Tensor feat = testutil::random_tensor({8, 6, 6}, rng);
  Tensor d_k = testutil::random_tensor({16}, rng);
  Tensor d_n = testutil::random_tensor({16}, rng);

  // With the blur path neutral, steps (1)-(2) must pass `feat` through
  // unchanged. Verify by comparing against a block whose steps (1)-(2) are
  // bypassed: run the remaining pipeline manually.
  Tensor stretched = broadcast_spatial(d_n, 6, 6);
  Tensor manual = leaky_relu(
      block.fuse.forward(concat_channels(feat, stretched)), 0.1);
  manual = block.trunk2.forward(leaky_relu(block.trunk1.forward(manual), 0.1));
  manual = add(manual, feat);

  Tensor full = block.forward(feat, d_k, d_n);
  ASSERT_EQ(full.shape(), manual.shape());
  for (std::int64_t i = 0; i < full.size(); ++i)
    ASSERT_NEAR(full[i], manual[i], 1e-12);
}

TEST(CondBlock, ZeroedNoisePathwayIgnoresNoiseEmbedding) {
  Rng rng(2);
  CondBlock block(8, 16, rng);
  // Zero the fuse weights that touch the stretched noise channels.
  auto& w = block.fuse.weight.values();  // [8, 24, 1, 1]
  for (int oc = 0; oc < 8; ++oc)
    for (int ic = 8; ic < 24; ++ic)
      w[static_cast<std::size_t>(oc) * 24 + ic] = 0.0;
  Tensor feat = testutil::random_tensor({8, 5, 5}, rng);
  Tensor d_k = testutil::random_tensor({16}, rng);
  Tensor a = block.forward(feat, d_k, testutil::random_tensor({16}, rng));
  Tensor b = block.forward(feat, d_k, testutil::random_tensor({16}, rng));
  for (std::int64_t i = 0; i < a.size(); ++i) ASSERT_DOUBLE_EQ(a[i], b[i]);
}

TEST(CondBlock, DifferentBlurEmbeddingsChangeTheOutput) {
  Rng rng(3);
  CondBlock block(8, 16, rng);
  Tensor feat = testutil::random_tensor({8, 5, 5}, rng);
  Tensor d_n = testutil::random_tensor({16}, rng);
  Tensor a = block.forward(feat, testutil::random_tensor({16}, rng), d_n);
  Tensor b = block.forward(feat, testutil::random_tensor({16}, rng), d_n);
  double max_diff = 0.0;
  for (std::int64_t i = 0; i < a.size(); ++i)
    max_diff = std::max(max_diff, std::fabs(a[i] - b[i]));
  EXPECT_GT(max_diff, 0.0);
}

TEST(CondBlock, EmbeddingDimensionMismatchRejected) {
  Rng rng(4);
  CondBlock block(8, 16, rng);
  Tensor feat = testutil::random_tensor({8, 5, 5}, rng);
  Tensor good = testutil::random_tensor({16}, rng);
  Tensor bad = testutil::random_tensor({8}, rng);
  EXPECT_THROW(block.forward(feat, bad, good), std::invalid_argument);
  EXPECT_THROW(block.forward(feat, good, bad), std::invalid_argument);
}

TEST(SrNetwork, ShapeContractForBothScales) {
  Rng rng(5);
  for (int scale : {2, 4}) {
    SrNetwork net(scale, 16, 2, 16, rng);
    Tensor d_k = testutil::random_tensor({16}, rng);
    Tensor d_n = testutil::random_tensor({16}, rng);
    for (auto [h, w] : {std::pair{16, 16}, std::pair{20, 24}}) {
      Tensor lr = testutil::random_tensor({3, h, w}, rng, 0.2);
      Tensor out = net.forward(lr, d_k, d_n);
      ASSERT_EQ(out.shape(), (Shape{3, h * scale, w * scale}));
      for (std::int64_t i = 0; i < out.size(); ++i)
        ASSERT_TRUE(std::isfinite(out[i]));
    }
  }
}

TEST(SrNetwork, DeterministicForward) {
  Rng rng(6);
  SrNetwork net(2, 16, 2, 16, rng);
  Rng irng(7);
  const Image lr = synth_image(20, 20, irng);
  Tensor d_k = testutil::random_tensor({16}, rng);
  Tensor d_n = testutil::random_tensor({16}, rng);
  const Image a = super_resolve(lr, d_k, d_n, net);
  const Image b = super_resolve(lr, d_k, d_n, net);
  EXPECT_EQ(a.data, b.data);
  EXPECT_EQ(a.height, 40);
  for (double v : a.data) {
    ASSERT_GE(v, 0.0);
    ASSERT_LE(v, 1.0);
  }
}

TEST(SrNetwork, UndersizedInputRejected) {
  Rng rng(8);
  SrNetwork net(2, 16, 1, 16, rng);
  Tensor d = testutil::random_tensor({16}, rng);
  Tensor lr = Tensor::zeros({3, 12, 20});
  EXPECT_THROW(net.forward(lr, d, d), std::invalid_argument);
}

TEST(SrNetwork, GradientsFlowIntoEmbeddings) {
  Rng rng(9);
  SrNetwork net(2, 12, 2, 16, rng);
  Tensor lr = testutil::random_tensor({3, 16, 16}, rng, 0.2);
  Tensor hr = testutil::random_tensor({3, 32, 32}, rng, 0.2);
  Tensor d_k = testutil::random_tensor({16}, rng);
  Tensor d_n = testutil::random_tensor({16}, rng);
  d_k.set_requires_grad();
  d_n.set_requires_grad();
  sr_restoration_loss(net.forward(lr, d_k, d_n), hr).backward();
  double gk = 0.0, gn = 0.0;
  for (double g : d_k.grad()) gk += std::fabs(g);
  for (double g : d_n.grad()) gn += std::fabs(g);
  EXPECT_GT(gk, 0.0);
  EXPECT_GT(gn, 0.0);
}

TEST(SrNetwork, ResidualIdentityWithZeroedBlocks) {
  Rng rng(10);
  SrNetwork net(2, 8, 2, 16, rng);
  // Zero everything inside the blocks except the residual path, and zero
  // the body conv: the trunk then reduces to the shallow features.
  for (auto& block : net.cond_blocks()) {
    for (auto& [name, t] : block.parameters("b"))
      std::fill(t.values().begin(), t.values().end(), 0.0);
  }
  ParamList params = net.parameters("sr");
  for (auto& [name, t] : params) {
    if (name.find(".body.") != std::string::npos)
      std::fill(t.values().begin(), t.values().end(), 0.0);
  }
  Tensor lr = testutil::random_tensor({3, 16, 16}, rng, 0.2);
  Tensor d = Tensor::zeros({16});
  Tensor out = net.forward(lr, d, d);
  // Compare against shallow -> upsample -> recon with blocks bypassed.
  Tensor shallow;
  for (auto& [name, t] : params)
    if (name == "sr.shallow.weight") shallow = t;
  ASSERT_TRUE(shallow.defined());
  // Rebuild the reference path through the same parameter tensors.
  Tensor ref = lr;
  {
    ConvLayer sh;
    ConvLayer up;
    ConvLayer rc;
    for (auto& [name, t] : params) {
      if (name == "sr.shallow.weight") sh.weight = t;
      if (name == "sr.shallow.bias") sh.bias = t;
      if (name == "sr.up1.weight") up.weight = t;
      if (name == "sr.up1.bias") up.bias = t;
      if (name == "sr.recon.weight") rc.weight = t;
      if (name == "sr.recon.bias") rc.bias = t;
    }
    ref = rc.forward(pixel_shuffle(up.forward(sh.forward(lr)), 2));
  }
  ASSERT_EQ(out.shape(), ref.shape());
  for (std::int64_t i = 0; i < out.size(); ++i)
    ASSERT_NEAR(out[i], ref[i], 1e-12);
}

TEST(SrRestorationLoss, ZeroForIdenticalInputs) {
  Rng rng(11);
  Tensor a = testutil::random_tensor({3, 8, 8}, rng);
  EXPECT_DOUBLE_EQ(sr_restoration_loss(a, a).item(), 0.0);
}

TEST(SrRestorationLoss, ConstantOffsetGivesTheOffset) {
  Tensor a = Tensor::full({3, 8, 8}, 0.4);
  Tensor b = Tensor::full({3, 8, 8}, 0.5);
  EXPECT_NEAR(sr_restoration_loss(a, b).item(), 0.1, 1e-12);
}

TEST(SrRestorationLoss, MatchesScalarOracle) {
  Rng rng(12);
  Tensor a = testutil::random_tensor({3, 6, 7}, rng);
  Tensor b = testutil::random_tensor({3, 6, 7}, rng);
  double expect = 0.0;
  for (std::int64_t i = 0; i < a.size(); ++i)
    expect += std::fabs(a[i] - b[i]);
  expect /= static_cast<double>(a.size());
  EXPECT_NEAR(sr_restoration_loss(a, b).item(), expect, 1e-12);
}

TEST(SrRestorationLoss, ShapeMismatchRejected) {
  Tensor a = Tensor::zeros({3, 8, 8});
  Tensor b = Tensor::zeros({3, 8, 9});
  EXPECT_THROW(sr_restoration_loss(a, b), std::invalid_argument);
}

TEST(SpecEncoding, DeterministicAndBranchDistinct) {
  DegradationSpec spec{2.0, 1.0, 0.5, 10.0, 2};
  Tensor a = spec_encoding(spec, BranchKind::blur);
  Tensor b = spec_encoding(spec, BranchKind::blur);
  Tensor c = spec_encoding(spec, BranchKind::noise);
  EXPECT_EQ(a.values(), b.values());
  EXPECT_NE(a.values(), c.values());
  EXPECT_EQ(a.shape(), (Shape{64}));
}

TEST(SpecEncoding, DistinctSpecsGiveDistinctCodes) {
  DegradationSpec a{0.5, 0.5, 0.0, 0.0, 2};
  DegradationSpec b{3.5, 1.0, 1.0, 20.0, 2};
  Tensor ea = spec_encoding(a, BranchKind::blur);
  Tensor eb = spec_encoding(b, BranchKind::blur);
  double diff = 0.0;
  for (std::int64_t i = 0; i < ea.size(); ++i)
    diff += std::fabs(ea[i] - eb[i]);
  EXPECT_GT(diff, 0.1);
}

TEST(CondBlock, GradientsMatchFiniteDifferencesOnSmallBlock) {
  Rng rng(13);
  CondBlock block(4, 6, rng);
  Tensor feat = testutil::random_tensor({4, 4, 4}, rng, 0.3);
  Tensor d_k = testutil::random_tensor({6}, rng, 0.3);
  Tensor d_n = testutil::random_tensor({6}, rng, 0.3);
  std::vector<Tensor> params;
  for (auto& [name, t] : block.parameters("b")) {
    t.set_requires_grad();
    params.push_back(t);
  }
  d_k.set_requires_grad();
  d_n.set_requires_grad();
  params.push_back(d_k);
  params.push_back(d_n);
  auto loss = [&] {
    Tensor out = block.forward(feat, d_k, d_n);
    return mean(mul(out, out));
  };
  auto rep = testutil::fd_check(loss, params);
  EXPECT_TRUE(rep.ok) << "max abs err " << rep.max_abs_err;
}
