#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "dualsr/rng.hpp"
#include "dualsr/tensor.hpp"

namespace testutil {

inline dualsr::Tensor random_tensor(dualsr::Shape shape, dualsr::Rng& rng,
                                    double scale = 1.0) {
  std::vector<double> v(static_cast<std::size_t>(dualsr::shape_numel(shape)));
  for (auto& x : v) x = rng.normal() * scale;
  return dualsr::Tensor::from(std::move(v), std::move(shape));
}

struct FdReport {
  double max_abs_err = 0.0;
  double max_rel_err = 0.0;
  bool ok = true;
};

/// Central-difference gradient check. `make_loss` must rebuild the graph
/// from the parameters' current values; the analytic gradients are taken
/// from one backward pass and compared per-coordinate.
inline FdReport fd_check(const std::function<dualsr::Tensor()>& make_loss,
                         std::vector<dualsr::Tensor> params,
                         double rtol = 1e-3, double h = 1e-4) {
  for (auto& p : params) p.zero_grad();
  make_loss().backward();
  std::vector<std::vector<double>> analytic;
  analytic.reserve(params.size());
  for (auto& p : params) analytic.push_back(p.grad());

  FdReport rep;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    auto& vals = params[pi].values();
    for (std::size_t i = 0; i < vals.size(); ++i) {
      const double keep = vals[i];
      vals[i] = keep + h;
      const double fp = make_loss().item();
      vals[i] = keep - h;
      const double fm = make_loss().item();
      vals[i] = keep;
      const double fd = (fp - fm) / (2.0 * h);
      const double g = analytic[pi][i];
      const double abs_err = std::fabs(g - fd);
      const double tol = rtol * std::max(std::fabs(g), std::fabs(fd)) + 1e-8;
      rep.max_abs_err = std::max(rep.max_abs_err, abs_err);
      if (std::fabs(fd) > 1e-12)
        rep.max_rel_err = std::max(rep.max_rel_err, abs_err / std::fabs(fd));
      if (abs_err > tol) rep.ok = false;
    }
  }
  return rep;
}

/// Quadruple-loop reference convolution (zero padding), independent of the
/// library implementation.
inline std::vector<double> conv2d_naive(const std::vector<double>& x, int c,
                                        int h, int w,
                                        const std::vector<double>& ker, int o,
                                        int kh, int kw, int stride, int pad,
                                        int& oh, int& ow) {
  oh = (h + 2 * pad - kh) / stride + 1;
  ow = (w + 2 * pad - kw) / stride + 1;
  std::vector<double> out(static_cast<std::size_t>(o) * oh * ow, 0.0);
  for (int oc = 0; oc < o; ++oc)
    for (int oy = 0; oy < oh; ++oy)
      for (int ox = 0; ox < ow; ++ox) {
        double s = 0.0;
        for (int ic = 0; ic < c; ++ic)
          for (int ky = 0; ky < kh; ++ky)
            for (int kx = 0; kx < kw; ++kx) {
              const int iy = oy * stride + ky - pad;
              const int ix = ox * stride + kx - pad;
              if (iy < 0 || iy >= h || ix < 0 || ix >= w) continue;
              s += ker[((static_cast<std::size_t>(oc) * c + ic) * kh + ky) *
                           kw +
                       kx] *
                   x[(static_cast<std::size_t>(ic) * h + iy) * w + ix];
            }
        out[(static_cast<std::size_t>(oc) * oh + oy) * ow + ox] = s;
      }
  return out;
}

}  // namespace testutil
