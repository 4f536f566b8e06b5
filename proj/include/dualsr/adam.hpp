#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "dualsr/tensor.hpp"

namespace dualsr {

/// Per-parameter Adam state; the step count advances by exactly 1 per
/// applied update.
struct AdamState {
  std::int64_t step = 0;
  std::vector<double> m;
  std::vector<double> v;
};

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Bias-corrected Adam over a fixed list of leaf parameters.
class AdamOptimizer {
 public:
  AdamOptimizer(std::vector<Tensor> params, AdamConfig cfg)
      : params_(std::move(params)), cfg_(cfg) {
    if (cfg_.lr <= 0.0) throw std::invalid_argument("adam: lr must be > 0");
    states_.resize(params_.size());
    for (std::size_t i = 0; i < params_.size(); ++i) {
      states_[i].m.assign(params_[i].values().size(), 0.0);
      states_[i].v.assign(params_[i].values().size(), 0.0);
    }
  }

  /// One update from the accumulated gradients. Parameters whose gradient
  /// contains a non-finite entry are skipped and counted.
  void step() {
    for (std::size_t p = 0; p < params_.size(); ++p) {
      auto& grad = params_[p].grad();
      bool finite = true;
      for (double g : grad)
        if (!std::isfinite(g)) {
          finite = false;
          break;
        }
      if (!finite) {
        ++skipped_;
        continue;
      }
      auto& st = states_[p];
      st.step += 1;
      const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(st.step));
      const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(st.step));
      auto& vals = params_[p].values();
      for (std::size_t i = 0; i < vals.size(); ++i) {
        st.m[i] = cfg_.beta1 * st.m[i] + (1.0 - cfg_.beta1) * grad[i];
        st.v[i] = cfg_.beta2 * st.v[i] + (1.0 - cfg_.beta2) * grad[i] * grad[i];
        const double mhat = st.m[i] / bc1;
        const double vhat = st.v[i] / bc2;
        vals[i] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
      }
    }
  }

  void zero_grad() {
    for (auto& p : params_) p.zero_grad();
  }

  std::int64_t skipped_updates() const { return skipped_; }
  const AdamState& state(std::size_t i) const { return states_[i]; }
  const AdamConfig& config() const { return cfg_; }

 private:
  std::vector<Tensor> params_;
  std::vector<AdamState> states_;
  AdamConfig cfg_;
  std::int64_t skipped_ = 0;
};

}  // namespace dualsr
