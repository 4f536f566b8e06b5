#pragma once

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <memory>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "dualsr/checkpoint.hpp"
#include "dualsr/config.hpp"
#include "dualsr/contrast.hpp"
#include "dualsr/extractor.hpp"
#include "dualsr/manifest.hpp"
#include "dualsr/sr_network.hpp"
#include "dualsr/synth_image.hpp"
#include "dualsr/wavelet.hpp"

namespace dualsr {

// ---------------------------------------------------------------------------
// Losses
// ---------------------------------------------------------------------------

/// Embedding-space regularizer: run prediction and target through the
/// wavelet front end and both extractor branches, and return the mean
/// absolute difference of the purified embeddings per branch as
/// (reg_noise, reg_blur). Gradients flow through the prediction path only.
inline std::pair<Tensor, Tensor> regularization_loss(
    const Tensor& sr, const Tensor& hr, const ExtractorBranch& blur,
    const ExtractorBranch& noise, bool wavelet_input = true) {
  if (sr.shape() != hr.shape())
    throw std::invalid_argument("regularization_loss: shape mismatch " +
                                shape_str(sr.shape()) + " vs " +
                                shape_str(hr.shape()));
  const Tensor sr_in = wavelet_input ? haar_highpass(sr) : sr;
  Tensor d_sr_blur, d_sr_noise, d_hr_blur, d_hr_noise;
  {
    const Tensor kb = blur.keys();
    const Tensor kn = noise.keys();
    d_sr_blur = blur.purify(blur.extract_raw(sr_in), kb);
    d_sr_noise = noise.purify(noise.extract_raw(sr_in), kn);
    NoGradGuard guard;
    const Tensor hr_in = wavelet_input ? haar_highpass(hr) : hr;
    d_hr_blur = blur.purify(blur.extract_raw(hr_in), kb).detach();
    d_hr_noise = noise.purify(noise.extract_raw(hr_in), kn).detach();
  }
  return {mean(abs_t(sub(d_sr_noise, d_hr_noise))),
          mean(abs_t(sub(d_sr_blur, d_hr_blur)))};
}

/// Weighted objective; rejects non-finite components by name.
inline Tensor total_loss(const Tensor& cl_blur, const Tensor& cl_noise,
                         const Tensor& sr_loss, const Tensor& reg_noise,
                         const Tensor& reg_blur, double lambda_noise = 1000.0,
                         double lambda_blur = 10.0) {
  auto check = [](const Tensor& t, const char* name) {
    if (!std::isfinite(t.item()))
      throw std::invalid_argument(std::string("total_loss: component ") +
                                  name + " is not finite");
  };
  check(cl_blur, "l_cl_blur");
  check(cl_noise, "l_cl_noise");
  check(sr_loss, "l_sr");
  check(reg_noise, "l_reg_noise");
  check(reg_blur, "l_reg_blur");
  return add(add(add(cl_blur, cl_noise), sr_loss),
             add(scale(reg_noise, lambda_noise),
                 scale(reg_blur, lambda_blur)));
}

// ---------------------------------------------------------------------------
// Setup helpers
// ---------------------------------------------------------------------------

struct ExtractorPair {
  ExtractorBranch blur;
  ExtractorBranch noise;

  static ExtractorConfig branch_config(const TrainConfig& cfg) {
    ExtractorConfig ec;
    ec.in_channels = cfg.wavelet_input ? 9 : 3;
    ec.embed_dim = cfg.embed_dim;
    ec.hidden_dim = 2 * cfg.embed_dim;
    ec.codebook_size = cfg.codebook_size;
    ec.use_ncrp = cfg.use_ncrp;
    ec.ncrp_temp = cfg.ncrp_temp;
    ec.widths = {32, 64, 64, 128, cfg.embed_dim};
    return ec;
  }

  static ExtractorPair create(const TrainConfig& cfg, std::uint64_t seed) {
    const ExtractorConfig ec = branch_config(cfg);
    Rng rng_b(derive_seed(seed, 0xB1));
    Rng rng_n(derive_seed(seed, 0xB2));
    return {ExtractorBranch(BranchKind::blur, ec, rng_b),
            ExtractorBranch(BranchKind::noise, ec, rng_n)};
  }

  ParamList checkpoint_params() const {
    ParamList out = blur.parameters("blur");
    append_params(out, blur.state_tensors("blur"));
    append_params(out, noise.parameters("noise"));
    append_params(out, noise.state_tensors("noise"));
    return out;
  }

  void save(const std::string& path) const {
    save_checkpoint(path, checkpoint_params());
  }

  static ExtractorPair load(const TrainConfig& cfg, const std::string& path) {
    ExtractorPair pair = create(cfg, 0);
    ParamList params = pair.checkpoint_params();
    restore_params(params, load_checkpoint(path));
    return pair;
  }

  /// Inference embedding of one LR image through a branch.
  Tensor embed(const Image& lr, BranchKind kind, bool wavelet_input) const {
    NoGradGuard guard;
    const Tensor input =
        wavelet_input ? hf_to_tensor(hf_input(lr)) : to_tensor(lr);
    const ExtractorBranch& branch = kind == BranchKind::blur ? blur : noise;
    return branch.forward(input).detach();
  }
};

inline SrNetwork make_sr_network(const TrainConfig& cfg, std::uint64_t seed) {
  Rng rng(derive_seed(seed, 0x5A));
  return SrNetwork(cfg.scale, cfg.sr_channels, cfg.sr_blocks, cfg.embed_dim,
                   rng);
}

inline SrNetwork load_sr_network(const TrainConfig& cfg,
                                 const std::string& path) {
  SrNetwork net = make_sr_network(cfg, 0);
  ParamList params = net.parameters("sr");
  restore_params(params, load_checkpoint(path));
  return net;
}

struct RestorationSample {
  Image hr;
  Image lr;
  DegradationSpec spec;
};

inline std::vector<RestorationSample> build_restoration_batch(
    const std::vector<Image>& pool, Rng& rng, const DegradationRanges& ranges,
    int lr_patch, int count) {
  if (pool.empty())
    throw std::invalid_argument("restoration batch: empty image pool");
  std::vector<RestorationSample> out;
  out.reserve(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) {
    const Image& src = pool[static_cast<std::size_t>(
        rng.uniform_int(static_cast<int>(pool.size())))];
    Image hr = detail::random_hr_crop(src, lr_patch, ranges.scale, rng);
    DegradationSpec spec = sample_degradation(rng, ranges);
    auto pair = degrade(hr, spec, rng.next_u64(), ranges.kernel_size);
    out.push_back({std::move(pair.hr), std::move(pair.lr), spec});
  }
  return out;
}

/// Loads the HR pool named by the config: every PNG under train_dir, or a
/// procedurally generated pool when synth_images > 0.
inline std::vector<Image> load_training_pool(const TrainConfig& cfg) {
  namespace fs = std::filesystem;
  if (cfg.synth_images > 0)
    return synth_pool(cfg.synth_images, cfg.synth_size, cfg.synth_size,
                      derive_seed(cfg.seed, 0xDA7A));
  if (cfg.train_dir.empty())
    throw std::invalid_argument(
        "config: either train_dir or synth_images must be set");
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(cfg.train_dir))
    if (e.path().extension() == ".png") files.push_back(e.path());
  std::sort(files.begin(), files.end());
  if (files.empty())
    throw std::invalid_argument("config: no PNG files in " + cfg.train_dir);
  std::vector<Image> pool;
  pool.reserve(files.size());
  for (const auto& f : files) pool.push_back(read_png(f.string()));
  return pool;
}

namespace detail {

inline void write_text_file(const std::filesystem::path& p,
                            const std::string& content) {
  std::ofstream os(p);
  os << content;
}

struct StageTimer {
  std::chrono::steady_clock::time_point start =
      std::chrono::steady_clock::now();
  void write(const std::filesystem::path& out_dir) const {
    const double secs = std::chrono::duration<double>(
                            std::chrono::steady_clock::now() - start)
                            .count();
    char buf[64];
    std::snprintf(buf, sizeof(buf), "wall_clock_seconds = %.3f\n", secs);
    write_text_file(out_dir / "timing.txt", buf);
  }
};

}  // namespace detail

// ---------------------------------------------------------------------------
// Stage 1: contrastive extractor training
// ---------------------------------------------------------------------------

inline std::filesystem::path run_stage1(const TrainConfig& cfg,
                                        const std::vector<Image>& pool,
                                        const std::filesystem::path& out_dir) {
  cfg.validate();
  std::filesystem::create_directories(out_dir);
  detail::StageTimer timer;
  detail::write_text_file(out_dir / "config_snapshot.txt",
                          config_snapshot(cfg));

  ExtractorPair pair = ExtractorPair::create(cfg, cfg.seed);
  ExtractorTrainState st(std::move(pair.blur), std::move(pair.noise),
                         cfg.queue_capacity, cfg.tau, cfg.key_momentum,
                         cfg.lr_extractor, cfg.wavelet_input);
  st.center_rate = cfg.center_rate;
  ContrastBatchConfig bc;
  bc.batch_size = cfg.batch_size;
  bc.lr_crop = cfg.patch_size;
  bc.ranges = cfg.ranges();
  bc.sigma_exclusion = cfg.sigma_exclusion;
  bc.constraints = cfg.contrast_constraints;

  Rng rng(derive_seed(cfg.seed, 0x57461));
  for (int i = 0; i < cfg.queue_warmup_batches; ++i)
    extractor_warmup(st, build_contrast_batch(pool, rng, bc));

  ManifestWriter manifest((out_dir / "manifest.csv").string());
  int divergent_run = 0;
  for (int step = 1; step <= cfg.stage1_steps; ++step) {
    auto [lb, ln] = train_extractor_step(
        st, build_contrast_batch(pool, rng, bc));
    LossRecord rec;
    rec.step = step;
    rec.cl_blur = lb;
    rec.cl_noise = ln;
    rec.total = lb + ln;
    manifest.append(rec);
    const double bound =
        2.0 * std::log(static_cast<double>(st.queue_blur.size()) + 1.0);
    divergent_run = (lb > bound || ln > bound) ? divergent_run + 1 : 0;
    if (divergent_run >= 50)
      throw std::runtime_error(
          "stage1: contrastive loss above twice ln(Q+1) for 50 consecutive "
          "steps (last blur=" +
          std::to_string(lb) + ", noise=" + std::to_string(ln) + ")");
  }

  const std::filesystem::path ckpt = out_dir / "extractor.ckpt";
  ExtractorPair trained{std::move(st.blur), std::move(st.noise)};
  trained.save(ckpt.string());
  detail::write_text_file(out_dir / "checkpoints.txt",
                          "stage1 = " + ckpt.string() + "\n");
  timer.write(out_dir);
  return ckpt;
}

// ---------------------------------------------------------------------------
// Stage 2: SR network training against a frozen extractor
// ---------------------------------------------------------------------------

inline std::filesystem::path run_stage2(const TrainConfig& cfg,
                                        const std::vector<Image>& pool,
                                        const std::filesystem::path& out_dir,
                                        const std::string& extractor_ckpt) {
  cfg.validate();
  std::filesystem::create_directories(out_dir);
  detail::StageTimer timer;
  detail::write_text_file(out_dir / "config_snapshot.txt",
                          config_snapshot(cfg));

  ExtractorPair extractor = ExtractorPair::load(cfg, extractor_ckpt);
  extractor.blur.set_trainable(false);
  extractor.noise.set_trainable(false);
  SrNetwork net = make_sr_network(cfg, cfg.seed);
  std::vector<Tensor> sr_params;
  for (auto& [name, t] : net.parameters("sr")) sr_params.push_back(t);
  AdamOptimizer opt(std::move(sr_params), {.lr = cfg.lr_sr});

  const bool oracle = cfg.conditioning == "oracle";
  const DegradationRanges ranges = cfg.ranges();
  Rng rng(derive_seed(cfg.seed, 0x57462));
  ManifestWriter manifest((out_dir / "manifest.csv").string());

  for (int step = 1; step <= cfg.stage2_steps; ++step) {
    auto batch = build_restoration_batch(pool, rng, ranges, cfg.patch_size,
                                         cfg.batch_size);
    Tensor l_sr = Tensor::scalar(0.0);
    Tensor reg_n = Tensor::scalar(0.0);
    Tensor reg_b = Tensor::scalar(0.0);
    for (const auto& s : batch) {
      Tensor d_k, d_n;
      if (oracle) {
        d_k = spec_encoding(s.spec, BranchKind::blur, cfg.embed_dim);
        d_n = spec_encoding(s.spec, BranchKind::noise, cfg.embed_dim);
      } else {
        d_k = extractor.embed(s.lr, BranchKind::blur, cfg.wavelet_input);
        d_n = extractor.embed(s.lr, BranchKind::noise, cfg.wavelet_input);
      }
      Tensor hr_t = to_tensor(s.hr);
      Tensor sr = net.forward(to_tensor(s.lr), d_k, d_n);
      l_sr = add(l_sr, sr_restoration_loss(sr, hr_t));
      if (cfg.use_reg) {
        auto [rn, rb] = regularization_loss(sr, hr_t, extractor.blur,
                                            extractor.noise,
                                            cfg.wavelet_input);
        reg_n = add(reg_n, rn);
        reg_b = add(reg_b, rb);
      }
    }
    const double inv = 1.0 / cfg.batch_size;
    l_sr = scale(l_sr, inv);
    reg_n = scale(reg_n, inv);
    reg_b = scale(reg_b, inv);
    Tensor loss =
        total_loss(Tensor::scalar(0.0), Tensor::scalar(0.0), l_sr, reg_n,
                   reg_b, cfg.lambda_reg_noise, cfg.lambda_reg_blur);
    opt.zero_grad();
    loss.backward();
    opt.step();

    LossRecord rec;
    rec.step = step;
    rec.sr = l_sr.item();
    rec.reg_noise = reg_n.item();
    rec.reg_blur = reg_b.item();
    rec.total = loss.item();
    manifest.append(rec);
  }

  const std::filesystem::path ckpt = out_dir / "sr.ckpt";
  save_checkpoint(ckpt.string(), net.parameters("sr"));
  detail::write_text_file(out_dir / "checkpoints.txt",
                          "stage1 = " + extractor_ckpt + "\nstage2 = " +
                              ckpt.string() + "\n");
  timer.write(out_dir);
  return ckpt;
}

// ---------------------------------------------------------------------------
// Stage 3: joint fine-tuning on the full objective
// ---------------------------------------------------------------------------

inline std::filesystem::path run_stage3(const TrainConfig& cfg,
                                        const std::vector<Image>& pool,
                                        const std::filesystem::path& out_dir,
                                        const std::string& extractor_ckpt,
                                        const std::string& sr_ckpt) {
  cfg.validate();
  std::filesystem::create_directories(out_dir);
  detail::StageTimer timer;
  detail::write_text_file(out_dir / "config_snapshot.txt",
                          config_snapshot(cfg));

  ExtractorPair loaded = ExtractorPair::load(cfg, extractor_ckpt);
  SrNetwork net = load_sr_network(cfg, sr_ckpt);
  ExtractorTrainState st(std::move(loaded.blur), std::move(loaded.noise),
                         cfg.queue_capacity, cfg.tau, cfg.key_momentum,
                         cfg.lr_finetune, cfg.wavelet_input);
  st.center_rate = cfg.center_rate;
  // One optimizer over the full parameter set.
  std::vector<Tensor> all_params;
  for (auto& [name, t] : st.blur.parameters("blur")) all_params.push_back(t);
  for (auto& [name, t] : st.noise.parameters("noise")) all_params.push_back(t);
  for (auto& [name, t] : net.parameters("sr")) all_params.push_back(t);
  st.optimizer =
      std::make_unique<AdamOptimizer>(std::move(all_params),
                                      AdamConfig{.lr = cfg.lr_finetune});

  ContrastBatchConfig bc;
  bc.batch_size = cfg.batch_size;
  bc.lr_crop = cfg.patch_size;
  bc.ranges = cfg.ranges();
  bc.sigma_exclusion = cfg.sigma_exclusion;
  bc.constraints = cfg.contrast_constraints;
  const bool oracle = cfg.conditioning == "oracle";

  Rng rng(derive_seed(cfg.seed, 0x57463));
  for (int i = 0; i < cfg.queue_warmup_batches; ++i)
    extractor_warmup(st, build_contrast_batch(pool, rng, bc));

  ManifestWriter manifest((out_dir / "manifest.csv").string());
  for (int step = 1; step <= cfg.stage3_steps; ++step) {
    auto batch = build_contrast_batch(pool, rng, bc);
    // Contrastive forward (shared with the SR conditioning below).
    std::vector<Tensor> dq_blur, dq_noise, dp_blur, dp_noise, pre_b, pre_n;
    {
      const Tensor kb = st.blur.keys();
      const Tensor kn = st.noise.keys();
      for (const auto& s : batch.samples) {
        const Tensor in_q = st.branch_input(s.query_lr);
        pre_b.push_back(st.blur.extract_pre(in_q));
        pre_n.push_back(st.noise.extract_pre(in_q));
        dq_blur.push_back(
            st.blur.purify(st.blur.centered_normalize(pre_b.back()), kb));
        dq_noise.push_back(
            st.noise.purify(st.noise.centered_normalize(pre_n.back()), kn));
      }
    }
    {
      NoGradGuard guard;
      const Tensor kbm = st.blur_momentum.keys();
      const Tensor knm = st.noise_momentum.keys();
      for (const auto& s : batch.samples) {
        dp_blur.push_back(st.blur_momentum.purify(
            st.blur_momentum.extract_raw(st.branch_input(s.blur_pos_lr)),
            kbm));
        dp_noise.push_back(st.noise_momentum.purify(
            st.noise_momentum.extract_raw(st.branch_input(s.noise_pos_lr)),
            knm));
      }
    }
    Tensor cl_blur = infonce_loss(dq_blur, dp_blur, st.queue_blur, cfg.tau);
    Tensor cl_noise =
        infonce_loss(dq_noise, dp_noise, st.queue_noise, cfg.tau);

    Tensor l_sr = Tensor::scalar(0.0);
    Tensor reg_n = Tensor::scalar(0.0);
    Tensor reg_b = Tensor::scalar(0.0);
    for (std::size_t m = 0; m < batch.samples.size(); ++m) {
      const auto& s = batch.samples[m];
      Tensor d_k = oracle ? spec_encoding(s.query_spec, BranchKind::blur,
                                          cfg.embed_dim)
                          : dq_blur[m];
      Tensor d_n = oracle ? spec_encoding(s.query_spec, BranchKind::noise,
                                          cfg.embed_dim)
                          : dq_noise[m];
      Tensor hr_t = to_tensor(s.query_hr);
      Tensor sr = net.forward(to_tensor(s.query_lr), d_k, d_n);
      l_sr = add(l_sr, sr_restoration_loss(sr, hr_t));
      if (cfg.use_reg) {
        auto [rn, rb] = regularization_loss(sr, hr_t, st.blur, st.noise,
                                            cfg.wavelet_input);
        reg_n = add(reg_n, rn);
        reg_b = add(reg_b, rb);
      }
    }
    const double inv = 1.0 / static_cast<double>(batch.samples.size());
    l_sr = scale(l_sr, inv);
    reg_n = scale(reg_n, inv);
    reg_b = scale(reg_b, inv);
    Tensor loss = total_loss(cl_blur, cl_noise, l_sr, reg_n, reg_b,
                             cfg.lambda_reg_noise, cfg.lambda_reg_blur);
    st.optimizer->zero_grad();
    loss.backward();
    st.optimizer->step();
    st.blur.update_center(pre_b, cfg.center_rate);
    st.noise.update_center(pre_n, cfg.center_rate);
    st.blur_momentum.ema_update_from(st.blur, st.momentum);
    st.noise_momentum.ema_update_from(st.noise, st.momentum);
    for (const auto& d : dp_blur)
      st.queue_blur.push(detail::unit_values(d));
    for (const auto& d : dp_noise)
      st.queue_noise.push(detail::unit_values(d));

    LossRecord rec;
    rec.step = step;
    rec.cl_blur = cl_blur.item();
    rec.cl_noise = cl_noise.item();
    rec.sr = l_sr.item();
    rec.reg_noise = reg_n.item();
    rec.reg_blur = reg_b.item();
    rec.total = loss.item();
    manifest.append(rec);
  }

  const std::filesystem::path ckpt = out_dir / "final.ckpt";
  ParamList final_params;
  ExtractorPair trained{std::move(st.blur), std::move(st.noise)};
  append_params(final_params, trained.checkpoint_params());
  append_params(final_params, net.parameters("sr"));
  save_checkpoint(ckpt.string(), final_params);
  detail::write_text_file(out_dir / "checkpoints.txt",
                          "stage1 = " + extractor_ckpt + "\nstage2 = " +
                              sr_ckpt + "\nstage3 = " + ckpt.string() + "\n");
  timer.write(out_dir);
  return ckpt;
}

}  // namespace dualsr
