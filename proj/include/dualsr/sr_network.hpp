#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "dualsr/degrade.hpp"
#include "dualsr/extractor.hpp"
#include "dualsr/image.hpp"
#include "dualsr/ops.hpp"

namespace dualsr {

/// Conditional residual block. Order of operations on the feature map:
///   1. depthwise filtering with a 3x3 kernel bank predicted from d_k
///   2. per-channel affine gamma(d_k) * feat + beta(d_k)
///   3. noise path: d_n stretched over the spatial extent, concatenated,
///      fused back to C channels by a 1x1 conv
///   4. two 3x3 trunk convs with LeakyReLU
///   5. residual add of the block input
struct CondBlock {
  DenseLayer kernel_map1, kernel_map2;  // d_k -> hidden -> C*3*3
  DenseLayer gamma_map, beta_map;       // d_k -> C
  ConvLayer fuse;                       // 1x1, (C + embed) -> C
  ConvLayer trunk1, trunk2;             // 3x3, C -> C
  int channels = 0;
  int embed_dim = 0;

  CondBlock() = default;

  CondBlock(int c, int embed, Rng& rng) : channels(c), embed_dim(embed) {
    kernel_map1.weight = detail::he_dense(embed, embed, rng);
    kernel_map1.bias = Tensor::zeros({embed});
    kernel_map2.weight = detail::he_dense(c * 9, embed, rng);
    // Bias initialized to the delta kernel so filtering starts neutral.
    kernel_map2.bias = Tensor::zeros({c * 9});
    for (int ch = 0; ch < c; ++ch)
      kernel_map2.bias.values()[static_cast<std::size_t>(ch) * 9 + 4] = 1.0;
    // Scale weights down so the predicted kernels start near the delta.
    for (auto& v : kernel_map2.weight.values()) v *= 0.1;
    gamma_map.weight = detail::he_dense(c, embed, rng);
    for (auto& v : gamma_map.weight.values()) v *= 0.1;
    gamma_map.bias = Tensor::full({c}, 1.0);
    beta_map.weight = detail::he_dense(c, embed, rng);
    for (auto& v : beta_map.weight.values()) v *= 0.1;
    beta_map.bias = Tensor::zeros({c});
    fuse.weight = detail::he_conv(c, c + embed, 1, rng);
    fuse.bias = Tensor::zeros({c});
    fuse.stride = 1;
    fuse.pad = 0;
    trunk1.weight = detail::he_conv(c, c, 3, rng);
    trunk1.bias = Tensor::zeros({c});
    trunk2.weight = detail::he_conv(c, c, 3, rng);
    trunk2.bias = Tensor::zeros({c});
  }

  Tensor forward(const Tensor& feat, const Tensor& d_k,
                 const Tensor& d_n) const {
    if (d_k.ndim() != 1 || d_k.dim(0) != embed_dim || d_n.ndim() != 1 ||
        d_n.dim(0) != embed_dim)
      throw std::invalid_argument(
          "cond_block: embedding dims " + shape_str(d_k.shape()) + " / " +
          shape_str(d_n.shape()) + " do not match expected [" +
          std::to_string(embed_dim) + "]");
    if (feat.ndim() != 3 || feat.dim(0) != channels)
      throw std::invalid_argument("cond_block: feature map " +
                                  shape_str(feat.shape()) +
                                  " does not carry " +
                                  std::to_string(channels) + " channels");
    // (1) depthwise filtering predicted from the blur embedding
    Tensor kvec = kernel_map2.forward(
        leaky_relu(kernel_map1.forward(d_k), 0.1));
    Tensor h = depthwise_conv2d(feat, reshape_kernels(kvec), 1, 1);
    // (2) channel-wise affine from the blur embedding
    h = channel_affine(h, gamma_map.forward(d_k), beta_map.forward(d_k));
    // (3) noise embedding stretched, concatenated, fused
    Tensor stretched = broadcast_spatial(d_n, feat.dim(1), feat.dim(2));
    h = leaky_relu(fuse.forward(concat_channels(h, stretched)), 0.1);
    // (4) trunk
    h = trunk2.forward(leaky_relu(trunk1.forward(h), 0.1));
    // (5) residual
    return add(h, feat);
  }

  ParamList parameters(const std::string& prefix) const {
    return {
        {prefix + ".kmap1.weight", kernel_map1.weight},
        {prefix + ".kmap1.bias", kernel_map1.bias},
        {prefix + ".kmap2.weight", kernel_map2.weight},
        {prefix + ".kmap2.bias", kernel_map2.bias},
        {prefix + ".gamma.weight", gamma_map.weight},
        {prefix + ".gamma.bias", gamma_map.bias},
        {prefix + ".beta.weight", beta_map.weight},
        {prefix + ".beta.bias", beta_map.bias},
        {prefix + ".fuse.weight", fuse.weight},
        {prefix + ".fuse.bias", fuse.bias},
        {prefix + ".trunk1.weight", trunk1.weight},
        {prefix + ".trunk1.bias", trunk1.bias},
        {prefix + ".trunk2.weight", trunk2.weight},
        {prefix + ".trunk2.bias", trunk2.bias},
    };
  }

 private:
  Tensor reshape_kernels(const Tensor& kvec) const {
    // [C*9] view as [C,3,3]; values are shared, the graph sees a no-op.
    return detail::make_op({channels, 3, 3}, kvec.values(), "reshape",
                           {kvec}, [](TensorNode& n) {
                             if (!detail::wants(n, 0)) return;
                             auto& g = detail::gbuf(n, 0);
                             for (std::size_t i = 0; i < g.size(); ++i)
                               g[i] += n.grad[i];
                           });
  }
};

/// Residual conditional SR backbone with pixel-shuffle upsampling.
class SrNetwork {
 public:
  SrNetwork() = default;

  SrNetwork(int scale, int channels, int blocks, int embed_dim, Rng& rng)
      : scale_(scale), channels_(channels), embed_dim_(embed_dim) {
    if (scale != 2 && scale != 4)
      throw std::invalid_argument("SrNetwork: scale must be 2 or 4");
    shallow_.weight = detail::he_conv(channels, 3, 3, rng);
    shallow_.bias = Tensor::zeros({channels});
    for (int b = 0; b < blocks; ++b)
      blocks_.emplace_back(channels, embed_dim, rng);
    body_out_.weight = detail::he_conv(channels, channels, 3, rng);
    body_out_.bias = Tensor::zeros({channels});
    const int stages = scale == 2 ? 1 : 2;
    for (int s = 0; s < stages; ++s) {
      ConvLayer up;
      up.weight = detail::he_conv(channels * 4, channels, 3, rng);
      up.bias = Tensor::zeros({channels * 4});
      upsample_.push_back(std::move(up));
    }
    recon_.weight = detail::he_conv(3, channels, 3, rng);
    recon_.bias = Tensor::zeros({3});
    set_trainable(true);
  }

  int scale() const { return scale_; }
  int embed_dim() const { return embed_dim_; }
  int blocks() const { return static_cast<int>(blocks_.size()); }

  /// Restores a [3,H,W] input to [3,s*H,s*W]; no output clamping here so
  /// training losses see the raw prediction.
  Tensor forward(const Tensor& lr, const Tensor& d_k, const Tensor& d_n) const {
    if (lr.ndim() != 3 || lr.dim(0) != 3)
      throw std::invalid_argument("SrNetwork: expected 3-channel CHW, got " +
                                  shape_str(lr.shape()));
    if (lr.dim(1) < kMinInput || lr.dim(2) < kMinInput)
      throw std::invalid_argument(
          "SrNetwork: input " + shape_str(lr.shape()) +
          " below the minimum extent of " + std::to_string(kMinInput));
    Tensor shallow = shallow_.forward(lr);
    Tensor h = shallow;
    for (const auto& block : blocks_) h = block.forward(h, d_k, d_n);
    h = add(body_out_.forward(h), shallow);
    for (const auto& up : upsample_) h = pixel_shuffle(up.forward(h), 2);
    return recon_.forward(h);
  }

  ParamList parameters(const std::string& prefix) const {
    ParamList out;
    out.push_back({prefix + ".shallow.weight", shallow_.weight});
    out.push_back({prefix + ".shallow.bias", shallow_.bias});
    for (std::size_t b = 0; b < blocks_.size(); ++b)
      append_params(out, blocks_[b].parameters(prefix + ".block" +
                                               std::to_string(b + 1)));
    out.push_back({prefix + ".body.weight", body_out_.weight});
    out.push_back({prefix + ".body.bias", body_out_.bias});
    for (std::size_t u = 0; u < upsample_.size(); ++u) {
      out.push_back({prefix + ".up" + std::to_string(u + 1) + ".weight",
                     upsample_[u].weight});
      out.push_back({prefix + ".up" + std::to_string(u + 1) + ".bias",
                     upsample_[u].bias});
    }
    out.push_back({prefix + ".recon.weight", recon_.weight});
    out.push_back({prefix + ".recon.bias", recon_.bias});
    return out;
  }

  void set_trainable(bool on) {
    for (auto& [name, t] : parameters("sr")) t.set_requires_grad(on);
  }

  const std::vector<CondBlock>& cond_blocks() const { return blocks_; }
  std::vector<CondBlock>& cond_blocks() { return blocks_; }

  static constexpr int kMinInput = 16;

 private:
  int scale_ = 2;
  int channels_ = 64;
  int embed_dim_ = 64;
  ConvLayer shallow_;
  std::vector<CondBlock> blocks_;
  ConvLayer body_out_;
  std::vector<ConvLayer> upsample_;
  ConvLayer recon_;
};

/// Mean absolute error between a prediction and its target.
inline Tensor sr_restoration_loss(const Tensor& sr, const Tensor& hr) {
  if (sr.shape() != hr.shape())
    throw std::invalid_argument("sr_restoration_loss: shape mismatch " +
                                shape_str(sr.shape()) + " vs " +
                                shape_str(hr.shape()));
  return mean(abs_t(sub(sr, hr)));
}

/// Inference wrapper: clamps to [0,1] (inference only).
inline Image super_resolve(const Image& lr, const Tensor& d_k,
                           const Tensor& d_n, const SrNetwork& net) {
  NoGradGuard guard;
  Tensor out = net.forward(to_tensor(lr), d_k, d_n);
  return clamp01(from_tensor(out, lr.space));
}

// ---------------------------------------------------------------------------
// Oracle conditioning (upper-bound protocol)
// ---------------------------------------------------------------------------

/// Fixed (non-learned) linear map from normalized degradation parameters
/// (lambda1, lambda2, theta, sigma) to an embed_dim vector. Seeded by
/// branch so blur and noise conditioning differ.
inline Tensor spec_encoding(const DegradationSpec& spec, BranchKind kind,
                            int embed_dim = 64) {
  Rng rng(kind == BranchKind::blur ? 0x5EC0DE01ULL : 0x5EC0DE02ULL);
  std::vector<double> features = {
      (spec.lambda1 - 0.2) / 3.8,
      (spec.lambda2 - 0.2) / 3.8,
      spec.theta / kPi,
      spec.sigma_noise / 25.0,
  };
  std::vector<double> out(static_cast<std::size_t>(embed_dim), 0.0);
  for (auto& v : out) {
    double s = 0.0;
    for (double f : features) s += rng.normal() * f;
    v = 0.5 * s;
  }
  return Tensor::from(std::move(out), {embed_dim});
}

}  // namespace dualsr
