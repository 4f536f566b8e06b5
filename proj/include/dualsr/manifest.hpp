#pragma once

#include <cstdio>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace dualsr {

/// One logged training step. `total` follows the fixed arithmetic
/// cl_blur + cl_noise + sr + lambda_reg_noise*reg_noise +
/// lambda_reg_blur*reg_blur at every stage (absent terms logged as 0).
struct LossRecord {
  long step = 0;
  double cl_blur = 0.0;
  double cl_noise = 0.0;
  double sr = 0.0;
  double reg_blur = 0.0;
  double reg_noise = 0.0;
  double total = 0.0;
};

/// Append-only CSV of per-step losses, flushed per row.
class ManifestWriter {
 public:
  explicit ManifestWriter(const std::string& path) : os_(path) {
    if (!os_) throw std::runtime_error("manifest: cannot open " + path);
    os_ << "step,l_cl_blur,l_cl_noise,l_sr,l_reg_blur,l_reg_noise,total\n";
    os_.flush();
  }

  void append(const LossRecord& r) {
    if (r.step <= last_step_ && last_step_ >= 0)
      throw std::runtime_error("manifest: step indices must increase");
    last_step_ = r.step;
    char buf[256];
    std::snprintf(buf, sizeof(buf),
                  "%ld,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g\n", r.step,
                  r.cl_blur, r.cl_noise, r.sr, r.reg_blur, r.reg_noise,
                  r.total);
    os_ << buf;
    os_.flush();
  }

 private:
  std::ofstream os_;
  long last_step_ = -1;
};

inline std::vector<LossRecord> read_manifest(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("manifest: cannot open " + path);
  std::string line;
  if (!std::getline(is, line))
    throw std::runtime_error("manifest: empty file " + path);
  std::vector<LossRecord> out;
  while (std::getline(is, line)) {
    LossRecord r;
    if (std::sscanf(line.c_str(), "%ld,%lf,%lf,%lf,%lf,%lf,%lf", &r.step,
                    &r.cl_blur, &r.cl_noise, &r.sr, &r.reg_blur,
                    &r.reg_noise, &r.total) != 7)
      throw std::runtime_error("manifest: bad row: " + line);
    out.push_back(r);
  }
  return out;
}

}  // namespace dualsr
