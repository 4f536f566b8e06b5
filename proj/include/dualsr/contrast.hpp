#pragma once

#include <cmath>
#include <cstdint>
#include <deque>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "dualsr/adam.hpp"
#include "dualsr/degrade.hpp"
#include "dualsr/extractor.hpp"
#include "dualsr/image.hpp"
#include "dualsr/ops.hpp"
#include "dualsr/wavelet.hpp"

namespace dualsr {

/// FIFO buffer of unit-normalized purified key embeddings.
class NegativeQueue {
 public:
  NegativeQueue(int capacity, int dim) : capacity_(capacity), dim_(dim) {
    if (capacity < 1 || dim < 1)
      throw std::invalid_argument("NegativeQueue: capacity and dim must be positive");
  }

  int capacity() const { return capacity_; }
  int dim() const { return dim_; }
  int size() const { return static_cast<int>(entries_.size()); }
  bool empty() const { return entries_.empty(); }

  void push(const std::vector<double>& key) {
    if (static_cast<int>(key.size()) != dim_)
      throw std::invalid_argument("queue_push: key dim " +
                                  std::to_string(key.size()) + " != " +
                                  std::to_string(dim_));
    double ss = 0.0;
    for (double v : key) ss += v * v;
    if (std::fabs(std::sqrt(ss) - 1.0) > 1e-6)
      throw std::invalid_argument("queue_push: key is not unit-normalized");
    entries_.push_back(key);
    while (static_cast<int>(entries_.size()) > capacity_) entries_.pop_front();
  }

  const std::vector<double>& entry(int i) const {
    return entries_[static_cast<std::size_t>(i)];
  }

 private:
  int capacity_;
  int dim_;
  std::deque<std::vector<double>> entries_;
};

inline void queue_push(NegativeQueue& queue,
                       const std::vector<std::vector<double>>& keys) {
  for (const auto& k : keys) queue.push(k);
}

// ---------------------------------------------------------------------------
// Contrastive batch construction
// ---------------------------------------------------------------------------

/// One training triple. The blur positive shares the query's kernel exactly
/// but differs in noise; the noise positive shares sigma but not the kernel;
/// both positives come from source images other than the query's.
struct ContrastSample {
  Image query_hr;  // HR crop behind the query (stage-3 restoration target)
  Image query_lr;
  Image blur_pos_lr;
  Image noise_pos_lr;
  DegradationSpec query_spec;
  DegradationSpec blur_pos_spec;
  DegradationSpec noise_pos_spec;
  int query_image = -1;
  int blur_pos_image = -1;
  int noise_pos_image = -1;
};

struct ContrastBatch {
  std::vector<ContrastSample> samples;
};

struct ContrastBatchConfig {
  int batch_size = 8;
  int lr_crop = 48;
  DegradationRanges ranges;
  double sigma_exclusion = 1.0;  // forbidden half-width around the query sigma
  bool constraints = true;       // kernel/noise matching of the positives
};

namespace detail {

inline Image random_hr_crop(const Image& img, int lr_crop, int scale,
                            Rng& rng) {
  const int size = lr_crop * scale;
  if (img.height < size || img.width < size)
    throw std::invalid_argument("contrast batch: pool image " +
                                std::to_string(img.height) + "x" +
                                std::to_string(img.width) +
                                " smaller than crop " + std::to_string(size));
  const int y0 = rng.uniform_int(img.height - size + 1);
  const int x0 = rng.uniform_int(img.width - size + 1);
  return crop(img, y0, x0, size, size);
}

inline int other_index(int n, int exclude, Rng& rng) {
  int idx = rng.uniform_int(n - 1);
  if (idx >= exclude) ++idx;
  return idx;
}

inline double different_sigma(double sigma, const DegradationRanges& r,
                              double exclusion, Rng& rng) {
  if (!r.noise_set.empty()) {
    std::vector<double> others;
    for (double v : r.noise_set)
      if (v != sigma) others.push_back(v);
    if (others.empty())
      throw std::invalid_argument(
          "contrast batch: noise set has no level different from the query");
    return others[static_cast<std::size_t>(
        rng.uniform_int(static_cast<int>(others.size())))];
  }
  if (r.sigma_max - r.sigma_min <= 2.0 * exclusion)
    throw std::invalid_argument(
        "contrast batch: sigma range too narrow for the exclusion width");
  for (int attempt = 0; attempt < 256; ++attempt) {
    const double s = rng.uniform(r.sigma_min, r.sigma_max);
    if (std::fabs(s - sigma) > exclusion) return s;
  }
  throw std::runtime_error("contrast batch: sigma rejection sampling failed");
}

inline DegradationSpec different_kernel(const DegradationSpec& q,
                                        const DegradationRanges& r, Rng& rng) {
  for (int attempt = 0; attempt < 256; ++attempt) {
    DegradationSpec s = sample_degradation(rng, r);
    if (!s.same_kernel(q)) return s;
  }
  throw std::invalid_argument(
      "contrast batch: kernel set has no kernel different from the query");
}

}  // namespace detail

/// Builds B (query, blur-positive, noise-positive) triples from an HR pool.
inline ContrastBatch build_contrast_batch(const std::vector<Image>& pool,
                                          Rng& rng,
                                          const ContrastBatchConfig& cfg) {
  if (pool.size() < 2)
    throw std::invalid_argument(
        "build_contrast_batch: pool must contain at least 2 images");
  ContrastBatch batch;
  batch.samples.reserve(static_cast<std::size_t>(cfg.batch_size));
  const int n = static_cast<int>(pool.size());
  const int scale = cfg.ranges.scale;
  for (int m = 0; m < cfg.batch_size; ++m) {
    ContrastSample s;
    s.query_image = rng.uniform_int(n);
    s.blur_pos_image = detail::other_index(n, s.query_image, rng);
    s.noise_pos_image = detail::other_index(n, s.query_image, rng);

    s.query_spec = sample_degradation(rng, cfg.ranges);
    if (cfg.constraints) {
      s.blur_pos_spec = s.query_spec;
      s.blur_pos_spec.sigma_noise = detail::different_sigma(
          s.query_spec.sigma_noise, cfg.ranges, cfg.sigma_exclusion, rng);
      s.noise_pos_spec = detail::different_kernel(s.query_spec, cfg.ranges, rng);
      s.noise_pos_spec.sigma_noise = s.query_spec.sigma_noise;
    } else {
      s.blur_pos_spec = sample_degradation(rng, cfg.ranges);
      s.noise_pos_spec = sample_degradation(rng, cfg.ranges);
    }

    Image hr_q = detail::random_hr_crop(pool[static_cast<std::size_t>(s.query_image)],
                                        cfg.lr_crop, scale, rng);
    Image hr_b = detail::random_hr_crop(
        pool[static_cast<std::size_t>(s.blur_pos_image)], cfg.lr_crop, scale, rng);
    Image hr_n = detail::random_hr_crop(
        pool[static_cast<std::size_t>(s.noise_pos_image)], cfg.lr_crop, scale, rng);

    auto pair_q = degrade(hr_q, s.query_spec, rng.next_u64(), cfg.ranges.kernel_size);
    auto pair_b = degrade(hr_b, s.blur_pos_spec, rng.next_u64(), cfg.ranges.kernel_size);
    auto pair_n = degrade(hr_n, s.noise_pos_spec, rng.next_u64(), cfg.ranges.kernel_size);
    s.query_hr = std::move(pair_q.hr);
    s.query_lr = std::move(pair_q.lr);
    s.blur_pos_lr = std::move(pair_b.lr);
    s.noise_pos_lr = std::move(pair_n.lr);
    batch.samples.push_back(std::move(s));
  }
  return batch;
}

// ---------------------------------------------------------------------------
// InfoNCE
// ---------------------------------------------------------------------------

namespace detail {

inline std::vector<double> unit_values(const Tensor& t, double eps = 1e-12) {
  std::vector<double> v = t.values();
  double ss = 0.0;
  for (double x : v) ss += x * x;
  const double inv = 1.0 / std::max(std::sqrt(ss), eps);
  for (double& x : v) x *= inv;
  return v;
}

}  // namespace detail

/// Batch-mean InfoNCE with the positive included in the denominator:
///   -log( exp(q.pos/tau) / (exp(q.pos/tau) + sum_j exp(q.neg_j/tau)) ).
/// Queries and positives are re-normalized inside the loss; gradients flow
/// through the queries only.
inline Tensor infonce_loss(const std::vector<Tensor>& queries,
                           const std::vector<Tensor>& positives,
                           const NegativeQueue& queue, double tau) {
  if (tau <= 0.0) throw std::invalid_argument("infonce_loss: tau must be > 0");
  if (queue.empty())
    throw std::invalid_argument(
        "infonce_loss: negative queue is empty; warm it up first");
  if (queries.empty() || queries.size() != positives.size())
    throw std::invalid_argument("infonce_loss: query/positive count mismatch");
  const int dim = queue.dim();
  const int q_count = queue.size();

  // Constant key matrix shared by the whole batch: row 0 is replaced per
  // sample by its positive; rows 1..Q are the queue snapshot.
  std::vector<double> key_rows(static_cast<std::size_t>(q_count + 1) * dim);
  for (int j = 0; j < q_count; ++j)
    std::copy(queue.entry(j).begin(), queue.entry(j).end(),
              key_rows.begin() + static_cast<std::size_t>(j + 1) * dim);

  Tensor acc = Tensor::scalar(0.0);
  for (std::size_t m = 0; m < queries.size(); ++m) {
    if (queries[m].ndim() != 1 || queries[m].dim(0) != dim)
      throw std::invalid_argument("infonce_loss: query " +
                                  shape_str(queries[m].shape()) +
                                  " does not match queue dim " +
                                  std::to_string(dim));
    const auto pos = detail::unit_values(positives[m]);
    std::copy(pos.begin(), pos.end(), key_rows.begin());
    Tensor keys = Tensor::from(key_rows, {q_count + 1, dim});
    Tensor qn = l2_normalize(queries[m], 0);
    Tensor logits = scale(linear(qn, keys), 1.0 / tau);
    Tensor loss_m = sub(logsumexp(logits), pick(logits, 0));
    acc = add(acc, loss_m);
  }
  return scale(acc, 1.0 / static_cast<double>(queries.size()));
}

// ---------------------------------------------------------------------------
// Extractor training step
// ---------------------------------------------------------------------------

struct ExtractorTrainState {
  ExtractorBranch blur;
  ExtractorBranch noise;
  ExtractorBranch blur_momentum;
  ExtractorBranch noise_momentum;
  NegativeQueue queue_blur;
  NegativeQueue queue_noise;
  std::unique_ptr<AdamOptimizer> optimizer;
  double tau = 0.07;
  double momentum = 0.999;
  double center_rate = 0.1;
  bool use_wavelet = true;

  ExtractorTrainState(ExtractorBranch b, ExtractorBranch n, int queue_capacity,
                      double tau_, double momentum_, double lr,
                      bool use_wavelet_)
      : blur(std::move(b)),
        noise(std::move(n)),
        blur_momentum(blur.momentum_copy()),
        noise_momentum(noise.momentum_copy()),
        queue_blur(queue_capacity, blur.config().embed_dim),
        queue_noise(queue_capacity, noise.config().embed_dim),
        tau(tau_),
        momentum(momentum_),
        use_wavelet(use_wavelet_) {
    ParamList params = blur.parameters("blur");
    append_params(params, noise.parameters("noise"));
    std::vector<Tensor> tensors;
    tensors.reserve(params.size());
    for (auto& p : params) tensors.push_back(p.tensor);
    optimizer = std::make_unique<AdamOptimizer>(std::move(tensors),
                                                AdamConfig{.lr = lr});
  }

  Tensor branch_input(const Image& lr) const {
    if (use_wavelet) return hf_to_tensor(hf_input(lr));
    return to_tensor(lr);
  }
};

/// Forward-only pass pushing momentum key embeddings, used to fill the
/// queues before the first loss step.
inline void extractor_warmup(ExtractorTrainState& st,
                             const ContrastBatch& batch) {
  NoGradGuard guard;
  const Tensor kb = st.blur_momentum.keys();
  const Tensor kn = st.noise_momentum.keys();
  for (const auto& s : batch.samples) {
    Tensor db = st.blur_momentum.purify(
        st.blur_momentum.extract_raw(st.branch_input(s.blur_pos_lr)), kb);
    Tensor dn = st.noise_momentum.purify(
        st.noise_momentum.extract_raw(st.branch_input(s.noise_pos_lr)), kn);
    st.queue_blur.push(detail::unit_values(db));
    st.queue_noise.push(detail::unit_values(dn));
  }
}

/// One contrastive step: InfoNCE on both branches, one Adam update, EMA of
/// the momentum twins, then enqueue the momentum key embeddings.
inline std::pair<double, double> train_extractor_step(
    ExtractorTrainState& st, const ContrastBatch& batch) {
  std::vector<Tensor> dq_blur, dq_noise, dp_blur, dp_noise;
  std::vector<Tensor> pre_blur, pre_noise;
  dq_blur.reserve(batch.samples.size());
  dq_noise.reserve(batch.samples.size());
  {
    const Tensor kb = st.blur.keys();
    const Tensor kn = st.noise.keys();
    for (const auto& s : batch.samples) {
      const Tensor in_q_b = st.branch_input(s.query_lr);
      pre_blur.push_back(st.blur.extract_pre(in_q_b));
      pre_noise.push_back(st.noise.extract_pre(in_q_b));
      dq_blur.push_back(
          st.blur.purify(st.blur.centered_normalize(pre_blur.back()), kb));
      dq_noise.push_back(
          st.noise.purify(st.noise.centered_normalize(pre_noise.back()), kn));
    }
  }
  {
    NoGradGuard guard;
    const Tensor kbm = st.blur_momentum.keys();
    const Tensor knm = st.noise_momentum.keys();
    for (const auto& s : batch.samples) {
      dp_blur.push_back(st.blur_momentum.purify(
          st.blur_momentum.extract_raw(st.branch_input(s.blur_pos_lr)), kbm));
      dp_noise.push_back(st.noise_momentum.purify(
          st.noise_momentum.extract_raw(st.branch_input(s.noise_pos_lr)), knm));
    }
  }

  Tensor loss_blur = infonce_loss(dq_blur, dp_blur, st.queue_blur, st.tau);
  Tensor loss_noise = infonce_loss(dq_noise, dp_noise, st.queue_noise, st.tau);
  const double lb = loss_blur.item();
  const double ln = loss_noise.item();
  if (!std::isfinite(lb) || !std::isfinite(ln))
    throw std::runtime_error(
        "train_extractor_step: non-finite contrastive loss (blur=" +
        std::to_string(lb) + ", noise=" + std::to_string(ln) +
        "); step aborted");

  st.optimizer->zero_grad();
  add(loss_blur, loss_noise).backward();
  st.optimizer->step();
  st.blur.update_center(pre_blur, st.center_rate);
  st.noise.update_center(pre_noise, st.center_rate);
  st.blur_momentum.ema_update_from(st.blur, st.momentum);
  st.noise_momentum.ema_update_from(st.noise, st.momentum);

  for (const auto& d : dp_blur) st.queue_blur.push(detail::unit_values(d));
  for (const auto& d : dp_noise) st.queue_noise.push(detail::unit_values(d));
  return {lb, ln};
}

}  // namespace dualsr
