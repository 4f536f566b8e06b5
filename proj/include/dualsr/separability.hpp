#pragma once

#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "dualsr/contrast.hpp"
#include "dualsr/degrade.hpp"
#include "dualsr/train.hpp"

namespace dualsr {

struct EmbeddingRecord {
  std::string image_id;
  std::string branch;  // "blur" or "noise"
  double lambda1 = 0, lambda2 = 0, theta = 0, sigma = 0;
  std::vector<double> e;
};

inline void write_embedding_csv(const std::string& path,
                                const std::vector<EmbeddingRecord>& records) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("embedding csv: cannot open " + path);
  if (records.empty()) throw std::invalid_argument("embedding csv: no records");
  const std::size_t dim = records.front().e.size();
  os << "image_id,branch,lambda1,lambda2,theta,sigma";
  for (std::size_t i = 0; i < dim; ++i) os << ",e_" << i;
  os << "\n";
  char buf[64];
  for (const auto& r : records) {
    os << r.image_id << ',' << r.branch;
    for (double v : {r.lambda1, r.lambda2, r.theta, r.sigma}) {
      std::snprintf(buf, sizeof(buf), ",%.17g", v);
      os << buf;
    }
    for (double v : r.e) {
      std::snprintf(buf, sizeof(buf), ",%.17g", v);
      os << buf;
    }
    os << "\n";
  }
}

inline std::vector<EmbeddingRecord> read_embedding_csv(
    const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("embedding csv: cannot open " + path);
  std::string line;
  if (!std::getline(is, line))
    throw std::runtime_error("embedding csv: empty file");
  std::vector<EmbeddingRecord> out;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string field;
    EmbeddingRecord r;
    std::getline(ss, r.image_id, ',');
    std::getline(ss, r.branch, ',');
    std::getline(ss, field, ',');
    r.lambda1 = std::stod(field);
    std::getline(ss, field, ',');
    r.lambda2 = std::stod(field);
    std::getline(ss, field, ',');
    r.theta = std::stod(field);
    std::getline(ss, field, ',');
    r.sigma = std::stod(field);
    while (std::getline(ss, field, ',')) r.e.push_back(std::stod(field));
    out.push_back(std::move(r));
  }
  return out;
}

struct SeparabilityReport {
  double within = 0.0;   // mean within-class cosine similarity
  double between = 0.0;  // mean between-class cosine similarity
  double margin = 0.0;   // within - between
  int classes = 0;
  int samples = 0;
};

/// Cosine within/between statistics. Classes are the kernel triple for the
/// blur branch and the sigma level for the noise branch.
inline SeparabilityReport separability_score(
    const std::vector<EmbeddingRecord>& records, BranchKind branch) {
  const std::string want = branch_name(branch);
  std::map<std::string, int> class_of;
  std::vector<std::vector<double>> embeds;
  std::vector<int> cls;
  std::map<int, int> counts;
  char key[96];
  for (const auto& r : records) {
    if (r.branch != want) continue;
    if (branch == BranchKind::blur)
      std::snprintf(key, sizeof(key), "%.9g/%.9g/%.9g", r.lambda1, r.lambda2,
                    r.theta);
    else
      std::snprintf(key, sizeof(key), "%.9g", r.sigma);
    auto [it, inserted] =
        class_of.emplace(key, static_cast<int>(class_of.size()));
    std::vector<double> v = r.e;
    double ss = 0.0;
    for (double x : v) ss += x * x;
    const double inv = 1.0 / std::max(std::sqrt(ss), 1e-12);
    for (double& x : v) x *= inv;
    embeds.push_back(std::move(v));
    cls.push_back(it->second);
    counts[it->second]++;
  }
  if (class_of.size() < 2)
    throw std::invalid_argument(
        "separability_score: need at least 2 classes, got " +
        std::to_string(class_of.size()));
  for (const auto& [c, n] : counts)
    if (n < 5)
      throw std::invalid_argument(
          "separability_score: class " + std::to_string(c) + " has only " +
          std::to_string(n) + " samples (need >= 5)");

  double within = 0.0, between = 0.0;
  long nw = 0, nb = 0;
  for (std::size_t i = 0; i < embeds.size(); ++i)
    for (std::size_t j = i + 1; j < embeds.size(); ++j) {
      double c = 0.0;
      for (std::size_t k = 0; k < embeds[i].size(); ++k)
        c += embeds[i][k] * embeds[j][k];
      if (cls[i] == cls[j]) {
        within += c;
        ++nw;
      } else {
        between += c;
        ++nb;
      }
    }
  SeparabilityReport rep;
  rep.within = within / nw;
  rep.between = between / nb;
  rep.margin = rep.within - rep.between;
  rep.classes = static_cast<int>(class_of.size());
  rep.samples = static_cast<int>(embeds.size());
  return rep;
}

inline std::string report_text(const SeparabilityReport& blur,
                               const SeparabilityReport& noise) {
  char buf[512];
  std::snprintf(buf, sizeof(buf),
                "branch  classes  samples    within   between    margin\n"
                "blur    %7d  %7d  %8.4f  %8.4f  %8.4f\n"
                "noise   %7d  %7d  %8.4f  %8.4f  %8.4f\n",
                blur.classes, blur.samples, blur.within, blur.between,
                blur.margin, noise.classes, noise.samples, noise.within,
                noise.between, noise.margin);
  return buf;
}

/// Embedding-export protocol mirroring the cluster analysis: blur rows pair
/// every kernel class with a random noise level; noise rows pair every
/// noise class with a random kernel.
inline std::vector<EmbeddingRecord> export_embeddings(
    const ExtractorPair& extractor, bool wavelet_input,
    const std::vector<Image>& dataset, const DegradationRanges& ranges,
    std::uint64_t seed) {
  if (ranges.kernel_set.empty() || ranges.noise_set.empty())
    throw std::invalid_argument(
        "export_embeddings: kernel_set and noise_set must be configured");
  std::vector<EmbeddingRecord> out;
  Rng rng(derive_seed(seed, 0xE3B));
  for (std::size_t idx = 0; idx < dataset.size(); ++idx) {
    const Image& hr0 = dataset[idx];
    const Image hr = detail::crop_to_multiple(hr0, ranges.scale);
    for (const auto& kt : ranges.kernel_set) {
      DegradationSpec spec{kt.lambda1, kt.lambda2, kt.theta,
                           ranges.noise_set[static_cast<std::size_t>(
                               rng.uniform_int(static_cast<int>(
                                   ranges.noise_set.size())))],
                           ranges.scale};
      const auto pair = degrade(hr, spec, rng.next_u64(), ranges.kernel_size);
      EmbeddingRecord rec;
      rec.image_id = "img" + std::to_string(idx);
      rec.branch = "blur";
      rec.lambda1 = spec.lambda1;
      rec.lambda2 = spec.lambda2;
      rec.theta = spec.theta;
      rec.sigma = spec.sigma_noise;
      rec.e = extractor.embed(pair.lr, BranchKind::blur, wavelet_input)
                  .values();
      out.push_back(std::move(rec));
    }
    for (double sigma : ranges.noise_set) {
      const auto& kt = ranges.kernel_set[static_cast<std::size_t>(
          rng.uniform_int(static_cast<int>(ranges.kernel_set.size())))];
      DegradationSpec spec{kt.lambda1, kt.lambda2, kt.theta, sigma,
                           ranges.scale};
      const auto pair = degrade(hr, spec, rng.next_u64(), ranges.kernel_size);
      EmbeddingRecord rec;
      rec.image_id = "img" + std::to_string(idx);
      rec.branch = "noise";
      rec.lambda1 = spec.lambda1;
      rec.lambda2 = spec.lambda2;
      rec.theta = spec.theta;
      rec.sigma = spec.sigma_noise;
      rec.e = extractor.embed(pair.lr, BranchKind::noise, wavelet_input)
                  .values();
      out.push_back(std::move(rec));
    }
  }
  return out;
}

}  // namespace dualsr
