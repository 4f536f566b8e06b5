#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "dualsr/ops.hpp"
#include "dualsr/rng.hpp"
#include "dualsr/tensor.hpp"

namespace dualsr {

struct ConvLayer {
  Tensor weight;  // [out, in, k, k]
  Tensor bias;    // [out]
  int stride = 1;
  int pad = 1;

  Tensor forward(const Tensor& x) const {
    return add_channel_bias(conv2d(x, weight, stride, pad), bias);
  }
};

struct DenseLayer {
  Tensor weight;  // [out, in]
  Tensor bias;    // [out]

  Tensor forward(const Tensor& x) const { return linear(x, weight, bias); }
};

namespace detail {

inline Tensor he_conv(int out_c, int in_c, int k, Rng& rng,
                      double slope = 0.1) {
  const double fan_in = static_cast<double>(in_c) * k * k;
  const double std = std::sqrt(2.0 / ((1.0 + slope * slope) * fan_in));
  std::vector<double> v(static_cast<std::size_t>(out_c) * in_c * k * k);
  for (auto& x : v) x = rng.normal() * std;
  return Tensor::from(std::move(v), {out_c, in_c, k, k});
}

inline Tensor he_dense(int out_d, int in_d, Rng& rng, double slope = 0.1) {
  const double std = std::sqrt(2.0 / ((1.0 + slope * slope) * in_d));
  std::vector<double> v(static_cast<std::size_t>(out_d) * in_d);
  for (auto& x : v) x = rng.normal() * std;
  return Tensor::from(std::move(v), {out_d, in_d});
}

}  // namespace detail

/// Attention weights of a normalized-codebook lookup: softmax over the dot
/// products of a query with the unit-norm keys, sharpened by `temp`. Both
/// vectors are unit norm, so without sharpening the logits span at most
/// [-1, 1] and the attention over a large codebook is nearly flat.
inline Tensor ncrp_attention(const Tensor& q, const Tensor& keys,
                             double temp = 1.0) {
  if (q.ndim() != 1 || keys.ndim() != 2 || keys.dim(1) != q.dim(0))
    throw std::invalid_argument("ncrp_attention: query " +
                                shape_str(q.shape()) + " vs keys " +
                                shape_str(keys.shape()));
  if (temp <= 0.0)
    throw std::invalid_argument("ncrp_attention: temperature must be > 0");
  return softmax(scale(linear(q, keys), 1.0 / temp), 0);
}

/// Purified embedding: attention-weighted sum of raw codebook rows. The
/// output is a convex combination of the rows.
inline Tensor ncrp_purify(const Tensor& q, const Tensor& keys,
                          const Tensor& codebook, double temp = 1.0) {
  if (codebook.ndim() != 2 || codebook.dim(0) != keys.dim(0))
    throw std::invalid_argument("ncrp_purify: codebook " +
                                shape_str(codebook.shape()) + " vs keys " +
                                shape_str(keys.shape()));
  return vecmat(ncrp_attention(q, keys, temp), codebook);
}

enum class BranchKind { blur, noise };

inline const char* branch_name(BranchKind k) {
  return k == BranchKind::blur ? "blur" : "noise";
}

struct ExtractorConfig {
  int in_channels = 9;  // 3 when the wavelet front end is disabled
  int embed_dim = 64;
  int hidden_dim = 128;    // projector hidden width
  int codebook_size = 128;
  bool use_ncrp = true;
  double ncrp_temp = 0.07;  // attention sharpness inside the codebook lookup
  std::vector<int> widths = {32, 64, 64, 128, 64};
  std::vector<int> strides = {1, 2, 1, 2, 1};
};

/// One branch of the dual extractor: strided conv encoder ending in global
/// average pooling, a two-layer projector shared between the query path and
/// the codebook keys, and the learned codebook.
class ExtractorBranch {
 public:
  ExtractorBranch() = default;

  ExtractorBranch(BranchKind kind, const ExtractorConfig& cfg, Rng& rng)
      : kind_(kind), cfg_(cfg) {
    if (cfg.widths.size() != cfg.strides.size() || cfg.widths.empty())
      throw std::invalid_argument("extractor: widths/strides mismatch");
    if (cfg.widths.back() != cfg.embed_dim)
      throw std::invalid_argument(
          "extractor: encoder output width must equal embed_dim so the "
          "projector can serve both queries and codebook keys");
    int in_c = cfg.in_channels;
    for (std::size_t i = 0; i < cfg.widths.size(); ++i) {
      ConvLayer layer;
      layer.weight = detail::he_conv(cfg.widths[i], in_c, 3, rng);
      layer.bias = Tensor::zeros({cfg.widths[i]});
      layer.stride = cfg.strides[i];
      layer.pad = 1;
      encoder_.push_back(std::move(layer));
      in_c = cfg.widths[i];
    }
    proj1_.weight = detail::he_dense(cfg.hidden_dim, cfg.embed_dim, rng);
    proj1_.bias = Tensor::zeros({cfg.hidden_dim});
    proj2_.weight = detail::he_dense(cfg.embed_dim, cfg.hidden_dim, rng);
    proj2_.bias = Tensor::zeros({cfg.embed_dim});
    std::vector<double> cb(static_cast<std::size_t>(cfg.codebook_size) *
                           cfg.embed_dim);
    const double cb_std = 1.0 / std::sqrt(static_cast<double>(cfg.embed_dim));
    for (auto& v : cb) v = rng.normal() * cb_std;
    codebook_ = Tensor::from(std::move(cb),
                             {cfg.codebook_size, cfg.embed_dim});
    center_ = Tensor::zeros({cfg.embed_dim});
    set_trainable(true);
  }

  BranchKind kind() const { return kind_; }
  const ExtractorConfig& config() const { return cfg_; }
  const Tensor& codebook() const { return codebook_; }

  /// Projector phi, applied to a vector or to row-stacked inputs.
  Tensor project(const Tensor& x) const {
    return proj2_.forward(leaky_relu(proj1_.forward(x), 0.1));
  }

  /// Projected embedding before centering and normalization.
  Tensor extract_pre(const Tensor& input) const {
    if (input.ndim() != 3 || input.dim(0) != cfg_.in_channels)
      throw std::invalid_argument("extract_raw: expected " +
                                  std::to_string(cfg_.in_channels) +
                                  "-channel CHW input, got " +
                                  shape_str(input.shape()));
    if (input.dim(1) < kMinInput || input.dim(2) < kMinInput)
      throw std::invalid_argument(
          "extract_raw: input " + shape_str(input.shape()) +
          " below encoder receptive minimum of " + std::to_string(kMinInput) +
          "x" + std::to_string(kMinInput));
    Tensor h = input;
    for (std::size_t i = 0; i + 1 < encoder_.size(); ++i)
      h = leaky_relu(encoder_[i].forward(h), 0.1);
    // Last layer stays linear so the pooled features are zero-centered;
    // an activation here biases every embedding into the positive orthant.
    h = encoder_.back().forward(h);
    return project(global_avg_pool(h));
  }

  /// Center-and-normalize an extract_pre output. The running center removes
  /// the shared component of the projected embeddings; without it every
  /// query points in nearly the same direction and the contrastive
  /// objective collapses.
  Tensor centered_normalize(const Tensor& pre) const {
    return l2_normalize(sub(pre, center_), 0);
  }

  /// Raw embedding q: encoder, global average pool, projector, unit norm.
  Tensor extract_raw(const Tensor& input) const {
    return centered_normalize(extract_pre(input));
  }

  /// Running-mean update of the center from a batch of extract_pre values.
  void update_center(const std::vector<Tensor>& pres, double rate = 0.1) {
    if (pres.empty()) return;
    std::vector<double> mean(static_cast<std::size_t>(cfg_.embed_dim), 0.0);
    for (const auto& p : pres)
      for (std::size_t i = 0; i < mean.size(); ++i) mean[i] += p.values()[i];
    const double inv = 1.0 / static_cast<double>(pres.size());
    auto& c = center_.values();
    for (std::size_t i = 0; i < c.size(); ++i)
      c[i] = (1.0 - rate) * c[i] + rate * mean[i] * inv;
  }

  /// Unit-norm keys derived from the codebook rows through the same phi.
  Tensor keys() const {
    return l2_normalize(project(codebook_), 1);
  }

  /// Purified embedding d for a raw query q (identity when NCRP disabled).
  Tensor purify(const Tensor& q, const Tensor& precomputed_keys) const {
    if (!cfg_.use_ncrp) return q;
    return ncrp_purify(q, precomputed_keys, codebook_, cfg_.ncrp_temp);
  }

  Tensor forward(const Tensor& input) const {
    Tensor q = extract_raw(input);
    if (!cfg_.use_ncrp) return q;
    return purify(q, keys());
  }

  ParamList parameters(const std::string& prefix) const {
    ParamList out;
    for (std::size_t i = 0; i < encoder_.size(); ++i) {
      out.push_back({prefix + ".enc" + std::to_string(i + 1) + ".weight",
                     encoder_[i].weight});
      out.push_back({prefix + ".enc" + std::to_string(i + 1) + ".bias",
                     encoder_[i].bias});
    }
    out.push_back({prefix + ".proj1.weight", proj1_.weight});
    out.push_back({prefix + ".proj1.bias", proj1_.bias});
    out.push_back({prefix + ".proj2.weight", proj2_.weight});
    out.push_back({prefix + ".proj2.bias", proj2_.bias});
    out.push_back({prefix + ".codebook", codebook_});
    return out;
  }

  /// Non-trainable state that must survive checkpointing (running center).
  ParamList state_tensors(const std::string& prefix) const {
    return {{prefix + ".center", center_}};
  }

  void set_trainable(bool on) {
    for (auto& layer : encoder_) {
      layer.weight.set_requires_grad(on);
      layer.bias.set_requires_grad(on);
    }
    proj1_.weight.set_requires_grad(on);
    proj1_.bias.set_requires_grad(on);
    proj2_.weight.set_requires_grad(on);
    proj2_.bias.set_requires_grad(on);
    codebook_.set_requires_grad(on);
  }

  /// Deep copy with detached, non-trainable parameters (momentum twin).
  ExtractorBranch momentum_copy() const {
    ExtractorBranch m;
    m.kind_ = kind_;
    m.cfg_ = cfg_;
    for (const auto& layer : encoder_) {
      ConvLayer c;
      c.weight = layer.weight.detach();
      c.bias = layer.bias.detach();
      c.stride = layer.stride;
      c.pad = layer.pad;
      m.encoder_.push_back(std::move(c));
    }
    m.proj1_.weight = proj1_.weight.detach();
    m.proj1_.bias = proj1_.bias.detach();
    m.proj2_.weight = proj2_.weight.detach();
    m.proj2_.bias = proj2_.bias.detach();
    m.codebook_ = codebook_.detach();
    m.center_ = center_.detach();
    return m;
  }

  /// EMA update of this (momentum) branch toward an online branch.
  void ema_update_from(const ExtractorBranch& online, double momentum) {
    auto blend = [momentum](Tensor& dst, const Tensor& src) {
      auto& d = dst.values();
      const auto& s = src.values();
      for (std::size_t i = 0; i < d.size(); ++i)
        d[i] = momentum * d[i] + (1.0 - momentum) * s[i];
    };
    for (std::size_t i = 0; i < encoder_.size(); ++i) {
      blend(encoder_[i].weight, online.encoder_[i].weight);
      blend(encoder_[i].bias, online.encoder_[i].bias);
    }
    blend(proj1_.weight, online.proj1_.weight);
    blend(proj1_.bias, online.proj1_.bias);
    blend(proj2_.weight, online.proj2_.weight);
    blend(proj2_.bias, online.proj2_.bias);
    blend(codebook_, online.codebook_);
    blend(center_, online.center_);
  }

  static constexpr int kMinInput = 8;

 private:
  BranchKind kind_ = BranchKind::blur;
  ExtractorConfig cfg_;
  std::vector<ConvLayer> encoder_;
  DenseLayer proj1_, proj2_;
  Tensor codebook_;
  Tensor center_;
};

}  // namespace dualsr
