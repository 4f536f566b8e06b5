#include <gtest/gtest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>

#include "dualsr/adam.hpp"
#include "dualsr/checkpoint.hpp"
#include "dualsr/ops.hpp"
#include "dualsr/tensor.hpp"
#include "test_util.hpp"

using namespace dualsr;

TEST(Tensor, ShapeAndValues) {
  Tensor t = Tensor::from({1, 2, 3, 4, 5, 6}, {2, 3});
  EXPECT_EQ(t.size(), 6);
  EXPECT_EQ(t.dim(0), 2);
  EXPECT_THROW(Tensor::from({1, 2}, {3}), std::invalid_argument);
}

TEST(Tensor, BackwardOnNonScalarRejected) {
  Tensor t = Tensor::zeros({2, 2});
  t.set_requires_grad();
  EXPECT_THROW(t.backward(), std::invalid_argument);
}

TEST(Tensor, SumGradIsOnes) {
  Rng rng(7);
  Tensor x = testutil::random_tensor({3, 4}, rng);
  x.set_requires_grad();
  sum(x).backward();
  for (double g : x.grad()) EXPECT_DOUBLE_EQ(g, 1.0);
}

TEST(Tensor, RootGradIsOne) {
  Tensor x = Tensor::scalar(2.0);
  x.set_requires_grad();
  Tensor loss = mul(x, x);
  loss.backward();
  EXPECT_DOUBLE_EQ(loss.grad()[0], 1.0);
  EXPECT_DOUBLE_EQ(x.grad()[0], 4.0);
}

TEST(Tensor, UnusedParameterHasZeroGrad) {
  Rng rng(3);
  Tensor used = testutil::random_tensor({4}, rng);
  Tensor unused = testutil::random_tensor({4}, rng);
  used.set_requires_grad();
  unused.set_requires_grad();
  sum(mul(used, used)).backward();
  for (double g : unused.grad()) EXPECT_DOUBLE_EQ(g, 0.0);
}

TEST(Tensor, DetachedTensorNeverAccumulates) {
  Tensor x = Tensor::scalar(3.0);
  x.set_requires_grad();
  Tensor d = x.detach();
  Tensor loss = mul(d, d);
  EXPECT_FALSE(loss.needs_graph());
  loss.backward();
  EXPECT_DOUBLE_EQ(x.grad()[0], 0.0);
  EXPECT_DOUBLE_EQ(d.grad()[0], 0.0);
}

TEST(Tensor, NoGradGuardSuppressesGraph) {
  Tensor x = Tensor::scalar(3.0);
  x.set_requires_grad();
  NoGradGuard guard;
  Tensor y = mul(x, x);
  EXPECT_FALSE(y.needs_graph());
}

// ---------------------------------------------------------------------------
// conv2d
// ---------------------------------------------------------------------------

TEST(Conv2d, IdentityDeltaKernel) {
  Rng rng(11);
  Tensor x = testutil::random_tensor({1, 6, 7}, rng);
  Tensor w = Tensor::from({1.0}, {1, 1, 1, 1});
  Tensor y = conv2d(x, w, 1, 0);
  ASSERT_EQ(y.shape(), x.shape());
  for (std::int64_t i = 0; i < y.size(); ++i)
    EXPECT_DOUBLE_EQ(y[i], x[i]);
}

TEST(Conv2d, ConstantInputEqualsKernelSum) {
  Rng rng(12);
  Tensor x = Tensor::full({1, 8, 8}, 0.5);
  Tensor w = testutil::random_tensor({1, 1, 3, 3}, rng);
  double ksum = 0.0;
  for (double v : w.values()) ksum += v;
  Tensor y = conv2d(x, w, 1, 0);
  for (std::int64_t i = 0; i < y.size(); ++i)
    EXPECT_NEAR(y[i], 0.5 * ksum, 1e-12);
}

TEST(Conv2d, MatchesNaiveOracle) {
  Rng rng(13);
  Tensor x = testutil::random_tensor({1, 5, 5}, rng);
  Tensor w = testutil::random_tensor({2, 1, 3, 3}, rng);
  Tensor y = conv2d(x, w, 1, 0);
  int oh, ow;
  auto ref = testutil::conv2d_naive(x.values(), 1, 5, 5, w.values(), 2, 3, 3,
                                    1, 0, oh, ow);
  ASSERT_EQ(y.shape(), (Shape{2, oh, ow}));
  for (std::int64_t i = 0; i < y.size(); ++i)
    EXPECT_NEAR(y[i], ref[static_cast<std::size_t>(i)], 1e-6);
}

TEST(Conv2d, RandomShapesMatchOracle) {
  Rng rng(14);
  for (int t = 0; t < 25; ++t) {
    const int c = 1 + rng.uniform_int(3);
    const int o = 1 + rng.uniform_int(3);
    const int k = 1 + 2 * rng.uniform_int(2);  // 1 or 3
    const int h = k + rng.uniform_int(6);
    const int w = k + rng.uniform_int(6);
    const int stride = 1 + rng.uniform_int(2);
    const int pad = rng.uniform_int(2);
    Tensor x = testutil::random_tensor({c, h, w}, rng);
    Tensor wt = testutil::random_tensor({o, c, k, k}, rng);
    Tensor y = conv2d(x, wt, stride, pad);
    int oh, ow;
    auto ref = testutil::conv2d_naive(x.values(), c, h, w, wt.values(), o, k,
                                      k, stride, pad, oh, ow);
    ASSERT_EQ(y.shape(), (Shape{o, oh, ow}));
    for (std::int64_t i = 0; i < y.size(); ++i)
      ASSERT_NEAR(y[i], ref[static_cast<std::size_t>(i)], 1e-9);
  }
}

TEST(Conv2d, ShapeMismatchNamesBothShapes) {
  Tensor x = Tensor::zeros({3, 5, 5});
  Tensor w = Tensor::zeros({2, 4, 3, 3});
  try {
    conv2d(x, w, 1, 1);
    FAIL() << "expected invalid_argument";
  } catch (const std::invalid_argument& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("[3x5x5]"), std::string::npos) << msg;
    EXPECT_NE(msg.find("[2x4x3x3]"), std::string::npos) << msg;
  }
}

TEST(Conv2d, GradientsMatchFiniteDifferences) {
  Rng rng(15);
  Tensor x = testutil::random_tensor({2, 5, 6}, rng);
  Tensor w = testutil::random_tensor({3, 2, 3, 3}, rng, 0.5);
  x.set_requires_grad();
  w.set_requires_grad();
  auto loss = [&] { return mean(mul(conv2d(x, w, 2, 1), conv2d(x, w, 2, 1))); };
  auto rep = testutil::fd_check(loss, {x, w});
  EXPECT_TRUE(rep.ok) << "max abs err " << rep.max_abs_err;
}

TEST(DepthwiseConv2d, MatchesPerChannelOracle) {
  Rng rng(16);
  Tensor x = testutil::random_tensor({3, 6, 6}, rng);
  Tensor w = testutil::random_tensor({3, 3, 3}, rng);
  Tensor y = depthwise_conv2d(x, w, 1, 1);
  // Reference: each channel convolved with its own kernel via the naive path.
  for (int c = 0; c < 3; ++c) {
    std::vector<double> xc(x.values().begin() + c * 36,
                           x.values().begin() + (c + 1) * 36);
    std::vector<double> wc(w.values().begin() + c * 9,
                           w.values().begin() + (c + 1) * 9);
    int oh, ow;
    auto ref = testutil::conv2d_naive(xc, 1, 6, 6, wc, 1, 3, 3, 1, 1, oh, ow);
    for (int i = 0; i < 36; ++i)
      ASSERT_NEAR(y[c * 36 + i], ref[static_cast<std::size_t>(i)], 1e-12);
  }
}

// ---------------------------------------------------------------------------
// softmax / l2_normalize
// ---------------------------------------------------------------------------

TEST(Softmax, UniformLogits) {
  Tensor x = Tensor::zeros({4});
  Tensor y = softmax(x, 0);
  for (std::int64_t i = 0; i < 4; ++i) EXPECT_NEAR(y[i], 0.25, 1e-15);
}

TEST(Softmax, ShiftInvariance) {
  Tensor a = Tensor::from({0.0, 0.0}, {2});
  Tensor b = Tensor::from({100.0, 100.0}, {2});
  Tensor ya = softmax(a, 0);
  Tensor yb = softmax(b, 0);
  for (std::int64_t i = 0; i < 2; ++i) EXPECT_DOUBLE_EQ(ya[i], yb[i]);
}

TEST(Softmax, MatchesDirectFormula) {
  Tensor x = Tensor::from({1.0, 2.0, 3.0}, {3});
  Tensor y = softmax(x, 0);
  const double z = std::exp(1.0) + std::exp(2.0) + std::exp(3.0);
  EXPECT_NEAR(y[0], std::exp(1.0) / z, 1e-9);
  EXPECT_NEAR(y[1], std::exp(2.0) / z, 1e-9);
  EXPECT_NEAR(y[2], std::exp(3.0) / z, 1e-9);
}

TEST(Softmax, ProbabilityVectorProperty) {
  Rng rng(21);
  for (int t = 0; t < 50; ++t) {
    const int n = 2 + rng.uniform_int(16);
    Tensor x = testutil::random_tensor({n}, rng, 5.0);
    Tensor y = softmax(x, 0);
    double s = 0.0;
    for (std::int64_t i = 0; i < n; ++i) {
      ASSERT_GE(y[i], 0.0);
      s += y[i];
    }
    ASSERT_NEAR(s, 1.0, 1e-9);
  }
}

TEST(Softmax, RowwiseAxisOnMatrix) {
  Tensor x = Tensor::from({1, 2, 3, 4, 5, 6}, {2, 3});
  Tensor y = softmax(x, 1);
  for (int r = 0; r < 2; ++r) {
    double s = 0.0;
    for (int c = 0; c < 3; ++c) s += y[r * 3 + c];
    EXPECT_NEAR(s, 1.0, 1e-12);
  }
}

TEST(L2Normalize, ThreeFourFive) {
  Tensor x = Tensor::from({3.0, 4.0}, {2});
  Tensor y = l2_normalize(x, 0);
  EXPECT_NEAR(y[0], 0.6, 1e-12);
  EXPECT_NEAR(y[1], 0.8, 1e-12);
}

TEST(L2Normalize, UnitVectorIdempotent) {
  Tensor x = Tensor::from({1.0 / std::sqrt(2.0), -1.0 / std::sqrt(2.0)}, {2});
  Tensor y = l2_normalize(x, 0);
  EXPECT_NEAR(y[0], x[0], 1e-12);
  EXPECT_NEAR(y[1], x[1], 1e-12);
}

TEST(L2Normalize, RandomVectorHasUnitNorm) {
  Rng rng(22);
  Tensor x = testutil::random_tensor({64}, rng, 3.0);
  Tensor y = l2_normalize(x, 0);
  double s = 0.0;
  for (std::int64_t i = 0; i < 64; ++i) s += y[i] * y[i];
  EXPECT_NEAR(s, 1.0, 1e-6);
}

TEST(L2Normalize, NearZeroVectorFlooredNotNan) {
  Tensor x = Tensor::from({0.0, 0.0, 0.0}, {3});
  Tensor y = l2_normalize(x, 0);
  for (std::int64_t i = 0; i < 3; ++i) EXPECT_TRUE(std::isfinite(y[i]));
}

// ---------------------------------------------------------------------------
// backward on composite graphs
// ---------------------------------------------------------------------------

TEST(Backward, TwoLayerNetworkMatchesFiniteDifferences) {
  Rng rng(31);
  Tensor x = testutil::random_tensor({6}, rng);
  Tensor w1 = testutil::random_tensor({5, 6}, rng, 0.5);
  Tensor b1 = testutil::random_tensor({5}, rng, 0.1);
  Tensor w2 = testutil::random_tensor({3, 5}, rng, 0.5);
  Tensor b2 = testutil::random_tensor({3}, rng, 0.1);
  for (auto* p : {&w1, &b1, &w2, &b2}) p->set_requires_grad();
  auto loss = [&] {
    Tensor h = leaky_relu(linear(x, w1, b1), 0.1);
    Tensor y = linear(h, w2, b2);
    return mean(mul(y, y));
  };
  auto rep = testutil::fd_check(loss, {w1, b1, w2, b2});
  EXPECT_TRUE(rep.ok) << "max abs err " << rep.max_abs_err;
}

TEST(Backward, SharedSubgraphAccumulatesOnce) {
  Tensor x = Tensor::scalar(3.0);
  x.set_requires_grad();
  Tensor y = mul(x, x);       // x^2
  Tensor loss = add(y, y);    // 2 x^2, dl/dx = 4x = 12
  loss.backward();
  EXPECT_DOUBLE_EQ(x.grad()[0], 12.0);
}

TEST(Backward, DeterministicAcrossRuns) {
  auto run = [] {
    Rng rng(99);
    Tensor x = testutil::random_tensor({4, 8, 8}, rng);
    Tensor w = testutil::random_tensor({4, 4, 3, 3}, rng, 0.3);
    x.set_requires_grad();
    w.set_requires_grad();
    Tensor loss = mean(abs_t(conv2d(x, w, 1, 1)));
    loss.backward();
    return std::make_pair(loss.item(), w.grad());
  };
  auto [l1, g1] = run();
  auto [l2, g2] = run();
  EXPECT_EQ(l1, l2);
  EXPECT_EQ(g1, g2);
}

TEST(Ops, LogSumExpStableAndCorrect) {
  Tensor x = Tensor::from({1000.0, 1000.0}, {2});
  EXPECT_NEAR(logsumexp(x).item(), 1000.0 + std::log(2.0), 1e-9);
}

TEST(Ops, ShapeOpsGradeCheck) {
  Rng rng(41);
  Tensor x = testutil::random_tensor({8, 4, 4}, rng);
  Tensor v = testutil::random_tensor({8}, rng);
  x.set_requires_grad();
  v.set_requires_grad();
  auto loss = [&] {
    Tensor a = concat_channels(x, broadcast_spatial(v, 4, 4));
    Tensor p = pixel_shuffle(a, 2);  // 16 channels -> 4 x 8 x 8
    return mean(mul(p, p));
  };
  auto rep = testutil::fd_check(loss, {x, v});
  EXPECT_TRUE(rep.ok) << "max abs err " << rep.max_abs_err;
}

TEST(Ops, GlobalAvgPoolValuesAndGrad) {
  Tensor x = Tensor::from({1, 2, 3, 4, 10, 20, 30, 40}, {2, 2, 2});
  x.set_requires_grad();
  Tensor p = global_avg_pool(x);
  EXPECT_DOUBLE_EQ(p[0], 2.5);
  EXPECT_DOUBLE_EQ(p[1], 25.0);
  sum(p).backward();
  for (double g : x.grad()) EXPECT_DOUBLE_EQ(g, 0.25);
}

TEST(Ops, PixelShuffleLayout) {
  // 4 channels, 1x1 spatial, r=2: channel c lands at (c/2, c%2).
  Tensor x = Tensor::from({1, 2, 3, 4}, {4, 1, 1});
  Tensor y = pixel_shuffle(x, 2);
  ASSERT_EQ(y.shape(), (Shape{1, 2, 2}));
  EXPECT_DOUBLE_EQ(y[0], 1);
  EXPECT_DOUBLE_EQ(y[1], 2);
  EXPECT_DOUBLE_EQ(y[2], 3);
  EXPECT_DOUBLE_EQ(y[3], 4);
}

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

TEST(Adam, ZeroGradientIsFixedPoint) {
  Tensor p = Tensor::from({1.0, -2.0}, {2});
  p.set_requires_grad();
  AdamOptimizer opt({p}, {.lr = 0.1});
  p.zero_grad();
  opt.step();
  EXPECT_DOUBLE_EQ(p[0], 1.0);
  EXPECT_DOUBLE_EQ(p[1], -2.0);
}

TEST(Adam, FirstStepMovesByLearningRate) {
  // Bias-corrected moments at t=1 give an update of lr * g / (|g| + eps).
  Tensor p = Tensor::scalar(5.0);
  p.set_requires_grad();
  AdamOptimizer opt({p}, {.lr = 0.01});
  p.grad()[0] = 0.7;
  opt.step();
  EXPECT_NEAR(p[0], 5.0 - 0.01, 1e-9);
  EXPECT_EQ(opt.state(0).step, 1);
}

TEST(Adam, NonFiniteGradientSkipsParameter) {
  Tensor p = Tensor::scalar(1.0);
  Tensor q = Tensor::scalar(2.0);
  p.set_requires_grad();
  q.set_requires_grad();
  AdamOptimizer opt({p, q}, {.lr = 0.1});
  p.grad()[0] = std::nan("");
  q.grad()[0] = 1.0;
  opt.step();
  EXPECT_DOUBLE_EQ(p[0], 1.0);
  EXPECT_LT(q[0], 2.0);
  EXPECT_EQ(opt.skipped_updates(), 1);
  EXPECT_EQ(opt.state(0).step, 0);
  EXPECT_EQ(opt.state(1).step, 1);
}

TEST(Adam, QuadraticBowlLossStrictlyDecreases) {
  Tensor p = Tensor::from({4.0, -4.0}, {2});
  p.set_requires_grad();
  AdamOptimizer opt({p}, {.lr = 1e-2});
  double prev = std::numeric_limits<double>::infinity();
  for (int step = 0; step < 200; ++step) {
    p.zero_grad();
    Tensor loss = sum(mul(p, p));
    loss.backward();
    const double lv = loss.item();
    ASSERT_LT(lv, prev) << "at step " << step;
    prev = lv;
    opt.step();
  }
}

// ---------------------------------------------------------------------------
// Checkpoint
// ---------------------------------------------------------------------------

TEST(Checkpoint, ByteExactRoundTrip) {
  namespace fs = std::filesystem;
  Rng rng(55);
  ParamList params;
  params.push_back({"net.conv1.weight", testutil::random_tensor({4, 3, 3, 3}, rng)});
  params.push_back({"net.conv1.bias", testutil::random_tensor({4}, rng)});
  params.push_back({"codebook", testutil::random_tensor({8, 16}, rng)});

  const fs::path dir = fs::temp_directory_path() / "dualsr_ckpt_test";
  fs::create_directories(dir);
  const std::string p1 = (dir / "a.ckpt").string();
  const std::string p2 = (dir / "b.ckpt").string();
  save_checkpoint(p1, params);

  auto loaded = load_checkpoint(p1);
  ASSERT_EQ(loaded.size(), params.size());
  ParamList reloaded;
  for (const auto& [name, t] : params)
    reloaded.push_back({name, loaded.at(name)});
  save_checkpoint(p2, reloaded);

  std::ifstream f1(p1, std::ios::binary), f2(p2, std::ios::binary);
  std::string s1((std::istreambuf_iterator<char>(f1)), {});
  std::string s2((std::istreambuf_iterator<char>(f2)), {});
  EXPECT_EQ(s1, s2);
  EXPECT_FALSE(s1.empty());
  fs::remove_all(dir);
}

TEST(Checkpoint, RestoreChecksShapes) {
  ParamList params;
  params.push_back({"w", Tensor::zeros({2, 2})});
  std::map<std::string, Tensor> ckpt;
  ckpt.emplace("w", Tensor::zeros({3}));
  EXPECT_THROW(restore_params(params, ckpt), std::runtime_error);
}
