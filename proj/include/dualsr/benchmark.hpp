#pragma once

#include <cstdio>
#include <fstream>
#include <future>
#include <stdexcept>
#include <string>
#include <vector>

#include "dualsr/degrade.hpp"
#include "dualsr/metrics.hpp"
#include "dualsr/resample.hpp"
#include "dualsr/sr_network.hpp"
#include "dualsr/train.hpp"

namespace dualsr {

struct GridSpec {
  std::vector<DegradationRanges::KernelTriple> kernels;
  std::vector<double> noises;
  int scale = 2;
  int kernel_size = 21;
  std::uint64_t seed = 0;
  int image_limit = 0;  // 0 = all images
};

struct CellResult {
  double psnr = 0.0;
  double ssim = 0.0;
  int images = 0;  // successfully measured images
  int failed = 0;
  bool filled() const { return images > 0; }
};

/// Kernel x noise result table; cells are kernel-major.
struct BenchmarkGrid {
  GridSpec spec;
  std::string dataset_id;
  std::vector<CellResult> cells;

  CellResult& cell(std::size_t ki, std::size_t ni) {
    return cells[ki * spec.noises.size() + ni];
  }
  const CellResult& cell(std::size_t ki, std::size_t ni) const {
    return cells[ki * spec.noises.size() + ni];
  }

  double mean_psnr() const {
    double s = 0.0;
    int n = 0;
    for (const auto& c : cells)
      if (c.filled()) {
        s += c.psnr;
        ++n;
      }
    return n ? s / n : 0.0;
  }

  std::string to_csv() const {
    std::string out =
        "lambda1,lambda2,theta,sigma,psnr,ssim,images,failed\n";
    char buf[256];
    for (std::size_t ki = 0; ki < spec.kernels.size(); ++ki)
      for (std::size_t ni = 0; ni < spec.noises.size(); ++ni) {
        const auto& k = spec.kernels[ki];
        const auto& c = cell(ki, ni);
        std::snprintf(buf, sizeof(buf),
                      "%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%d,%d\n",
                      k.lambda1, k.lambda2, k.theta, spec.noises[ni], c.psnr,
                      c.ssim, c.images, c.failed);
        out += buf;
      }
    return out;
  }

  std::string to_text() const {
    char buf[256];
    std::string out = "dataset: " + dataset_id + "\n";
    std::snprintf(buf, sizeof(buf), "%-22s", "kernel \\ sigma");
    out += buf;
    for (double n : spec.noises) {
      std::snprintf(buf, sizeof(buf), "%16.1f", n);
      out += buf;
    }
    out += "\n";
    for (std::size_t ki = 0; ki < spec.kernels.size(); ++ki) {
      const auto& k = spec.kernels[ki];
      std::snprintf(buf, sizeof(buf), "%5.2f/%.2f/%-7.1f    ", k.lambda1,
                    k.lambda2, k.theta * 180.0 / kPi);
      out += buf;
      for (std::size_t ni = 0; ni < spec.noises.size(); ++ni) {
        const auto& c = cell(ki, ni);
        if (c.filled())
          std::snprintf(buf, sizeof(buf), "%9.2f/%.4f", c.psnr, c.ssim);
        else
          std::snprintf(buf, sizeof(buf), "%16s", "failed");
        out += buf;
      }
      out += "\n";
    }
    return out;
  }
};

enum class Conditioning { predicted, oracle, oracle_shuffled };

/// What to evaluate: the conditional network or the plain bicubic baseline.
struct BenchModel {
  const SrNetwork* net = nullptr;          // null = bicubic baseline
  const ExtractorPair* extractor = nullptr;  // needed for predicted mode
  bool wavelet_input = true;
  Conditioning conditioning = Conditioning::predicted;
  int embed_dim = 64;
};

namespace detail {

inline Image crop_to_multiple(const Image& img, int scale) {
  const int h = img.height - img.height % scale;
  const int w = img.width - img.width % scale;
  if (h == img.height && w == img.width) return img;
  return crop(img, 0, 0, h, w);
}

}  // namespace detail

/// Degrades every dataset image per cell with a per-cell seed, restores it,
/// and averages Y-channel PSNR/SSIM. Per-image failures are recorded and
/// leave the cell partial.
inline BenchmarkGrid run_benchmark(const BenchModel& model,
                                   const GridSpec& grid,
                                   const std::vector<Image>& dataset,
                                   const std::string& dataset_id,
                                   int threads = 1) {
  if (dataset.empty())
    throw std::invalid_argument("run_benchmark: empty dataset");
  if (grid.kernels.empty() || grid.noises.empty())
    throw std::invalid_argument("run_benchmark: empty grid");
  if (model.net != nullptr &&
      model.conditioning == Conditioning::predicted &&
      model.extractor == nullptr)
    throw std::invalid_argument(
        "run_benchmark: predicted conditioning needs an extractor");

  BenchmarkGrid out;
  out.spec = grid;
  out.dataset_id = dataset_id;
  const std::size_t n_cells = grid.kernels.size() * grid.noises.size();
  out.cells.resize(n_cells);
  const int limit = grid.image_limit > 0
                        ? std::min<int>(grid.image_limit,
                                        static_cast<int>(dataset.size()))
                        : static_cast<int>(dataset.size());

  auto eval_cell = [&](std::size_t cell_index) {
    const std::size_t ki = cell_index / grid.noises.size();
    const std::size_t ni = cell_index % grid.noises.size();
    const auto& kt = grid.kernels[ki];
    DegradationSpec spec{kt.lambda1, kt.lambda2, kt.theta, grid.noises[ni],
                         grid.scale};
    // Wrong-conditioning control: parameters of the next cell.
    const std::size_t alt = (cell_index + 1) % n_cells;
    const auto& kt_alt = grid.kernels[alt / grid.noises.size()];
    DegradationSpec spec_alt{kt_alt.lambda1, kt_alt.lambda2, kt_alt.theta,
                             grid.noises[alt % grid.noises.size()],
                             grid.scale};
    CellResult cell;
    double psnr_sum = 0.0, ssim_sum = 0.0;
    for (int idx = 0; idx < limit; ++idx) {
      try {
        const Image hr = detail::crop_to_multiple(
            dataset[static_cast<std::size_t>(idx)], grid.scale);
        const auto pair =
            degrade(hr, spec,
                    derive_seed(grid.seed, cell_index,
                                static_cast<std::uint64_t>(idx)),
                    grid.kernel_size);
        Image sr;
        if (model.net == nullptr) {
          sr = bicubic_resample(pair.lr, hr.height, hr.width);
          sr = clamp01(std::move(sr));
        } else {
          Tensor d_k, d_n;
          switch (model.conditioning) {
            case Conditioning::predicted:
              d_k = model.extractor->embed(pair.lr, BranchKind::blur,
                                           model.wavelet_input);
              d_n = model.extractor->embed(pair.lr, BranchKind::noise,
                                           model.wavelet_input);
              break;
            case Conditioning::oracle:
              d_k = spec_encoding(spec, BranchKind::blur, model.embed_dim);
              d_n = spec_encoding(spec, BranchKind::noise, model.embed_dim);
              break;
            case Conditioning::oracle_shuffled:
              d_k = spec_encoding(spec_alt, BranchKind::blur, model.embed_dim);
              d_n = spec_encoding(spec_alt, BranchKind::noise, model.embed_dim);
              break;
          }
          sr = super_resolve(pair.lr, d_k, d_n, *model.net);
        }
        psnr_sum += psnr_y(sr, hr, grid.scale);
        ssim_sum += ssim_y(sr, hr, grid.scale);
        ++cell.images;
      } catch (const std::exception&) {
        ++cell.failed;
      }
    }
    if (cell.images > 0) {
      cell.psnr = psnr_sum / cell.images;
      cell.ssim = ssim_sum / cell.images;
    }
    return cell;
  };

  if (threads <= 1) {
    for (std::size_t c = 0; c < n_cells; ++c) out.cells[c] = eval_cell(c);
  } else {
    // Cells are independent; assembly order is fixed, so the result is
    // identical for any thread count.
    std::vector<std::future<CellResult>> futures;
    futures.reserve(n_cells);
    for (std::size_t c = 0; c < n_cells; ++c)
      futures.push_back(std::async(std::launch::async, eval_cell, c));
    for (std::size_t c = 0; c < n_cells; ++c) out.cells[c] = futures[c].get();
  }
  return out;
}

inline void write_grid_outputs(const BenchmarkGrid& grid,
                               const std::filesystem::path& out_dir) {
  std::filesystem::create_directories(out_dir);
  std::ofstream csv(out_dir / "grid.csv");
  csv << grid.to_csv();
  std::ofstream txt(out_dir / "grid.txt");
  txt << grid.to_text();
}

/// Loads every PNG in a directory (sorted by name), with an optional limit.
inline std::vector<Image> load_dataset(const std::string& dir, int limit = 0) {
  namespace fs = std::filesystem;
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.path().extension() == ".png") files.push_back(e.path());
  std::sort(files.begin(), files.end());
  if (limit > 0 && static_cast<int>(files.size()) > limit)
    files.resize(static_cast<std::size_t>(limit));
  if (files.empty())
    throw std::invalid_argument("load_dataset: no PNG files in " + dir);
  std::vector<Image> out;
  out.reserve(files.size());
  for (const auto& f : files) out.push_back(read_png(f.string()));
  return out;
}

}  // namespace dualsr
