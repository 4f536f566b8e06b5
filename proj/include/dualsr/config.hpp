#pragma once

#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "dualsr/degrade.hpp"

namespace dualsr {

/// Flat key-value run configuration. Every field maps to one `key = value`
/// line; unknown keys are rejected so typos fail loudly.
struct TrainConfig {
  // Data.
  std::string train_dir;      // directory of HR PNGs
  std::string data_dir;       // evaluation dataset directory
  int synth_images = 0;       // when > 0, generate a synthetic pool instead
  int synth_size = 96;

  // Degradation model.
  int scale = 2;
  int kernel_size = 21;
  double lambda_min = 0.2;
  double lambda_max = 4.0;
  double theta_min = 0.0;
  double theta_max = kPi;
  double sigma_min = 0.0;
  double sigma_max = 25.0;
  std::string kernel_set;  // "l1/l2/theta_deg;..." — finite kernel world
  std::string noise_set;   // "0,10,25" — finite noise world
  double sigma_exclusion = 1.0;

  // Training.
  int patch_size = 48;  // LR side
  int batch_size = 8;
  double lr_extractor = 1e-3;
  double lr_sr = 1e-4;
  double lr_finetune = 1e-4;
  double lambda_reg_noise = 1000.0;
  double lambda_reg_blur = 10.0;
  double tau = 0.07;
  int queue_capacity = 512;
  int queue_warmup_batches = 8;
  double key_momentum = 0.999;
  double center_rate = 0.1;
  int stage1_steps = 3000;
  int stage2_steps = 5000;
  int stage3_steps = 2000;

  // Architecture.
  int embed_dim = 64;
  int codebook_size = 128;
  double ncrp_temp = 0.07;
  int sr_channels = 64;
  int sr_blocks = 5;

  // Ablation toggles.
  bool wavelet_input = true;
  bool contrast_constraints = true;
  bool use_ncrp = true;
  bool use_reg = true;

  // Conditioning source: "predicted" (extractor) or "oracle" (ground-truth
  // degradation parameters through the fixed linear encoding).
  std::string conditioning = "predicted";

  // Benchmark grid.
  std::string grid_kernels =
      "2.0/1.0/10;3.5/1.5/30;3.5/2.0/45;3.5/4.5/60;4.5/5.0/120;5.0/5.0/180";
  std::string grid_noises = "0,10,20";
  int bench_image_limit = 0;  // 0 = use every image
  int threads = 1;

  std::uint64_t seed = 0;

  DegradationRanges ranges() const;
  std::vector<DegradationRanges::KernelTriple> grid_kernel_triples() const;
  std::vector<double> grid_noise_levels() const;
  void validate() const;
};

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  const auto e = s.find_last_not_of(" \t\r");
  return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
}

inline bool parse_bool(const std::string& v, const std::string& key) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw std::invalid_argument("config: bad boolean for " + key + ": " + v);
}

inline std::vector<double> parse_double_list(const std::string& s) {
  std::vector<double> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(std::stod(item));
  }
  return out;
}

inline std::vector<DegradationRanges::KernelTriple> parse_kernel_triples(
    const std::string& s) {
  std::vector<DegradationRanges::KernelTriple> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ';')) {
    item = trim(item);
    if (item.empty()) continue;
    double l1, l2, deg;
    if (std::sscanf(item.c_str(), "%lf/%lf/%lf", &l1, &l2, &deg) != 3)
      throw std::invalid_argument(
          "config: kernel triple must be l1/l2/theta_deg, got " + item);
    out.push_back({l1, l2, deg * kPi / 180.0});
  }
  return out;
}

}  // namespace detail

inline DegradationRanges TrainConfig::ranges() const {
  DegradationRanges r;
  r.lambda_min = lambda_min;
  r.lambda_max = lambda_max;
  r.theta_min = theta_min;
  r.theta_max = theta_max;
  r.sigma_min = sigma_min;
  r.sigma_max = sigma_max;
  r.scale = scale;
  r.kernel_size = kernel_size;
  if (!kernel_set.empty()) r.kernel_set = detail::parse_kernel_triples(kernel_set);
  if (!noise_set.empty()) r.noise_set = detail::parse_double_list(noise_set);
  return r;
}

inline std::vector<DegradationRanges::KernelTriple>
TrainConfig::grid_kernel_triples() const {
  return detail::parse_kernel_triples(grid_kernels);
}

inline std::vector<double> TrainConfig::grid_noise_levels() const {
  return detail::parse_double_list(grid_noises);
}

inline void TrainConfig::validate() const {
  if (scale != 2 && scale != 4)
    throw std::invalid_argument("config: scale must be 2 or 4");
  if (patch_size < 16)
    throw std::invalid_argument("config: patch_size must be >= 16");
  if (batch_size < 1 || queue_capacity < 1 || stage1_steps < 0 ||
      stage2_steps < 0 || stage3_steps < 0)
    throw std::invalid_argument("config: counts must be positive");
  if (tau <= 0.0 || lr_extractor <= 0.0 || lr_sr <= 0.0 || lr_finetune <= 0.0)
    throw std::invalid_argument("config: rates must be positive");
  if (conditioning != "predicted" && conditioning != "oracle")
    throw std::invalid_argument("config: conditioning must be predicted|oracle");
  if (kernel_size % 2 == 0 || kernel_size < 1)
    throw std::invalid_argument("config: kernel_size must be odd");
  if (embed_dim < 1 || codebook_size < 1)
    throw std::invalid_argument("config: embedding dims must be positive");
}

#define DUALSR_CONFIG_FIELDS(X)                   \
  X(train_dir, string)                            \
  X(data_dir, string)                             \
  X(synth_images, int)                            \
  X(synth_size, int)                              \
  X(scale, int)                                   \
  X(kernel_size, int)                             \
  X(lambda_min, double)                           \
  X(lambda_max, double)                           \
  X(theta_min, double)                            \
  X(theta_max, double)                            \
  X(sigma_min, double)                            \
  X(sigma_max, double)                            \
  X(kernel_set, string)                           \
  X(noise_set, string)                            \
  X(sigma_exclusion, double)                      \
  X(patch_size, int)                              \
  X(batch_size, int)                              \
  X(lr_extractor, double)                         \
  X(lr_sr, double)                                \
  X(lr_finetune, double)                          \
  X(lambda_reg_noise, double)                     \
  X(lambda_reg_blur, double)                      \
  X(tau, double)                                  \
  X(queue_capacity, int)                          \
  X(queue_warmup_batches, int)                    \
  X(key_momentum, double)                         \
  X(center_rate, double)                          \
  X(stage1_steps, int)                            \
  X(stage2_steps, int)                            \
  X(stage3_steps, int)                            \
  X(embed_dim, int)                               \
  X(codebook_size, int)                           \
  X(ncrp_temp, double)                            \
  X(sr_channels, int)                             \
  X(sr_blocks, int)                               \
  X(wavelet_input, bool)                          \
  X(contrast_constraints, bool)                   \
  X(use_ncrp, bool)                               \
  X(use_reg, bool)                                \
  X(conditioning, string)                         \
  X(grid_kernels, string)                         \
  X(grid_noises, string)                          \
  X(bench_image_limit, int)                       \
  X(threads, int)                                 \
  X(seed, uint64)

inline void apply_config_entry(TrainConfig& cfg, const std::string& key,
                               const std::string& value) {
#define DUALSR_APPLY_string(name) cfg.name = value;
#define DUALSR_APPLY_int(name) cfg.name = std::stoi(value);
#define DUALSR_APPLY_double(name) cfg.name = std::stod(value);
#define DUALSR_APPLY_bool(name) cfg.name = detail::parse_bool(value, key);
#define DUALSR_APPLY_uint64(name) cfg.name = std::stoull(value);
#define X(name, type)            \
  if (key == #name) {            \
    DUALSR_APPLY_##type(name);   \
    return;                      \
  }
  DUALSR_CONFIG_FIELDS(X)
#undef X
#undef DUALSR_APPLY_string
#undef DUALSR_APPLY_int
#undef DUALSR_APPLY_double
#undef DUALSR_APPLY_bool
#undef DUALSR_APPLY_uint64
  throw std::invalid_argument("config: unknown key " + key);
}

inline TrainConfig parse_config(std::istream& is) {
  TrainConfig cfg;
  std::string line;
  int line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument("config: line " + std::to_string(line_no) +
                                  " is not `key = value`");
    apply_config_entry(cfg, detail::trim(line.substr(0, eq)),
                       detail::trim(line.substr(eq + 1)));
  }
  return cfg;
}

inline TrainConfig load_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::invalid_argument("config: cannot open " + path);
  return parse_config(is);
}

/// Deterministic snapshot: every field, sorted order, full precision.
inline std::string config_snapshot(const TrainConfig& cfg) {
  std::map<std::string, std::string> kv;
  char buf[64];
  auto fmt_double = [&](double v) {
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return std::string(buf);
  };
#define DUALSR_SNAP_string(name) kv[#name] = cfg.name;
#define DUALSR_SNAP_int(name) kv[#name] = std::to_string(cfg.name);
#define DUALSR_SNAP_double(name) kv[#name] = fmt_double(cfg.name);
#define DUALSR_SNAP_bool(name) kv[#name] = cfg.name ? "true" : "false";
#define DUALSR_SNAP_uint64(name) kv[#name] = std::to_string(cfg.name);
#define X(name, type) DUALSR_SNAP_##type(name)
  DUALSR_CONFIG_FIELDS(X)
#undef X
#undef DUALSR_SNAP_string
#undef DUALSR_SNAP_int
#undef DUALSR_SNAP_double
#undef DUALSR_SNAP_bool
#undef DUALSR_SNAP_uint64
  std::string out;
  for (const auto& [k, v] : kv) out += k + " = " + v + "\n";
  return out;
}

}  // namespace dualsr
