#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "dualsr/blur.hpp"
#include "dualsr/image.hpp"
#include "dualsr/resample.hpp"
#include "dualsr/rng.hpp"

namespace dualsr {

inline constexpr double kPi = 3.14159265358979323846;

/// Ground truth of one synthesized LR: kernel widths/rotation, noise sigma on
/// the 0-255 scale, integer downsampling factor.
struct DegradationSpec {
  double lambda1 = 1.0;
  double lambda2 = 1.0;
  double theta = 0.0;  // radians in [0, pi)
  double sigma_noise = 0.0;
  int scale = 2;

  void validate() const {
    if (lambda1 <= 0.0 || lambda2 <= 0.0)
      throw std::invalid_argument("DegradationSpec: kernel widths must be positive");
    if (sigma_noise < 0.0)
      throw std::invalid_argument("DegradationSpec: negative noise sigma");
    if (scale < 1)
      throw std::invalid_argument("DegradationSpec: scale must be >= 1");
  }

  bool same_kernel(const DegradationSpec& o) const {
    return lambda1 == o.lambda1 && lambda2 == o.lambda2 && theta == o.theta;
  }
};

inline std::string spec_to_kv(const DegradationSpec& s) {
  char buf[256];
  std::snprintf(buf, sizeof(buf),
                "lambda1 = %.17g\nlambda2 = %.17g\ntheta = %.17g\n"
                "sigma = %.17g\nscale = %d\n",
                s.lambda1, s.lambda2, s.theta, s.sigma_noise, s.scale);
  return buf;
}

inline DegradationSpec spec_from_kv(std::istream& is) {
  DegradationSpec s;
  std::string line;
  while (std::getline(is, line)) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    auto trim = [](std::string v) {
      const auto b = v.find_first_not_of(" \t");
      const auto e = v.find_last_not_of(" \t\r");
      return b == std::string::npos ? std::string() : v.substr(b, e - b + 1);
    };
    const std::string key = trim(line.substr(0, eq));
    const std::string val = trim(line.substr(eq + 1));
    if (key == "lambda1") s.lambda1 = std::stod(val);
    else if (key == "lambda2") s.lambda2 = std::stod(val);
    else if (key == "theta") s.theta = std::stod(val);
    else if (key == "sigma") s.sigma_noise = std::stod(val);
    else if (key == "scale") s.scale = std::stoi(val);
  }
  return s;
}

struct LrHrPair {
  Image hr;
  Image lr;
  DegradationSpec spec;
  std::uint64_t seed = 0;
};

/// Blur, downsample by spec.scale, then add white Gaussian noise of
/// sigma/255 in the [0,1] domain; clamp to [0,1] once at the end.
inline LrHrPair degrade(const Image& hr, const DegradationSpec& spec,
                        std::uint64_t seed, int kernel_size = 21) {
  spec.validate();
  if (hr.height % spec.scale != 0 || hr.width % spec.scale != 0)
    throw std::invalid_argument(
        "degrade: extents " + std::to_string(hr.height) + "x" +
        std::to_string(hr.width) + " not divisible by scale " +
        std::to_string(spec.scale) + "; crop upstream");
  const BlurKernel k =
      make_aniso_gaussian_kernel(spec.lambda1, spec.lambda2, spec.theta,
                                 kernel_size);
  Image lr = bicubic_resample(blur(hr, k), hr.height / spec.scale,
                              hr.width / spec.scale);
  if (spec.sigma_noise > 0.0) {
    Rng rng(seed);
    const double s = spec.sigma_noise / 255.0;
    for (auto& v : lr.data) v += rng.normal() * s;
  }
  lr = clamp01(std::move(lr));
  return {hr, std::move(lr), spec, seed};
}

/// Sampling ranges (and optional finite sets) for training-time degradations.
struct DegradationRanges {
  double lambda_min = 0.2;
  double lambda_max = 4.0;
  double theta_min = 0.0;
  double theta_max = kPi;
  double sigma_min = 0.0;
  double sigma_max = 25.0;
  int scale = 2;
  int kernel_size = 21;
  // When non-empty, kernels/noise are drawn from these sets instead of the
  // continuous ranges.
  struct KernelTriple {
    double lambda1, lambda2, theta;
  };
  std::vector<KernelTriple> kernel_set;
  std::vector<double> noise_set;
};

inline DegradationSpec sample_degradation(Rng& rng,
                                          const DegradationRanges& r) {
  DegradationSpec s;
  if (!r.kernel_set.empty()) {
    const auto& k = r.kernel_set[static_cast<std::size_t>(
        rng.uniform_int(static_cast<int>(r.kernel_set.size())))];
    s.lambda1 = k.lambda1;
    s.lambda2 = k.lambda2;
    s.theta = k.theta;
  } else {
    s.lambda1 = rng.uniform(r.lambda_min, r.lambda_max);
    s.lambda2 = rng.uniform(r.lambda_min, r.lambda_max);
    s.theta = rng.uniform(r.theta_min, r.theta_max);
  }
  if (!r.noise_set.empty()) {
    s.sigma_noise = r.noise_set[static_cast<std::size_t>(
        rng.uniform_int(static_cast<int>(r.noise_set.size())))];
  } else {
    s.sigma_noise = rng.uniform(r.sigma_min, r.sigma_max);
  }
  s.scale = r.scale;
  return s;
}

}  // namespace dualsr
