#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "dualsr/log.hpp"
#include "dualsr/tensor.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace dualsr {

namespace detail {

inline void check_same_shape(const Tensor& a, const Tensor& b,
                             const char* op) {
  if (a.shape() != b.shape())
    throw std::invalid_argument(std::string(op) + ": shape mismatch " +
                                shape_str(a.shape()) + " vs " +
                                shape_str(b.shape()));
}

inline bool wants(TensorNode& n, std::size_t i) {
  return n.inputs[i]->needs_graph;
}

inline std::vector<double>& gbuf(TensorNode& n, std::size_t i) {
  n.inputs[i]->ensure_grad();
  return n.inputs[i]->grad;
}

// Splits a shape into (outer, len, inner) blocks around `axis` so that a
// reduction line k runs over base + k*inner.
struct AxisView {
  std::int64_t outer = 1, len = 1, inner = 1;
};

inline AxisView axis_view(const Shape& s, int axis, const char* op) {
  if (axis < 0) axis += static_cast<int>(s.size());
  if (axis < 0 || axis >= static_cast<int>(s.size()))
    throw std::invalid_argument(std::string(op) + ": axis out of range for " +
                                shape_str(s));
  AxisView v;
  for (int i = 0; i < axis; ++i) v.outer *= s[static_cast<std::size_t>(i)];
  v.len = s[static_cast<std::size_t>(axis)];
  for (int i = axis + 1; i < static_cast<int>(s.size()); ++i)
    v.inner *= s[static_cast<std::size_t>(i)];
  return v;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise
// ---------------------------------------------------------------------------

inline Tensor add(const Tensor& a, const Tensor& b) {
  detail::check_same_shape(a, b, "add");
  std::vector<double> out(a.values());
  const auto& bv = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
  return detail::make_op(a.shape(), std::move(out), "add", {a, b},
                         [](TensorNode& n) {
                           for (std::size_t k = 0; k < 2; ++k) {
                             if (!detail::wants(n, k)) continue;
                             auto& g = detail::gbuf(n, k);
                             for (std::size_t i = 0; i < g.size(); ++i)
                               g[i] += n.grad[i];
                           }
                         });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  detail::check_same_shape(a, b, "sub");
  std::vector<double> out(a.values());
  const auto& bv = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bv[i];
  return detail::make_op(a.shape(), std::move(out), "sub", {a, b},
                         [](TensorNode& n) {
                           if (detail::wants(n, 0)) {
                             auto& g = detail::gbuf(n, 0);
                             for (std::size_t i = 0; i < g.size(); ++i)
                               g[i] += n.grad[i];
                           }
                           if (detail::wants(n, 1)) {
                             auto& g = detail::gbuf(n, 1);
                             for (std::size_t i = 0; i < g.size(); ++i)
                               g[i] -= n.grad[i];
                           }
                         });
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
  detail::check_same_shape(a, b, "mul");
  std::vector<double> out(a.values());
  const auto& bv = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
  return detail::make_op(a.shape(), std::move(out), "mul", {a, b},
                         [](TensorNode& n) {
                           const auto& av = n.inputs[0]->values;
                           const auto& bv2 = n.inputs[1]->values;
                           if (detail::wants(n, 0)) {
                             auto& g = detail::gbuf(n, 0);
                             for (std::size_t i = 0; i < g.size(); ++i)
                               g[i] += n.grad[i] * bv2[i];
                           }
                           if (detail::wants(n, 1)) {
                             auto& g = detail::gbuf(n, 1);
                             for (std::size_t i = 0; i < g.size(); ++i)
                               g[i] += n.grad[i] * av[i];
                           }
                         });
}

inline Tensor scale(const Tensor& a, double s) {
  std::vector<double> out(a.values());
  for (auto& v : out) v *= s;
  return detail::make_op(a.shape(), std::move(out), "scale", {a},
                         [s](TensorNode& n) {
                           if (!detail::wants(n, 0)) return;
                           auto& g = detail::gbuf(n, 0);
                           for (std::size_t i = 0; i < g.size(); ++i)
                             g[i] += s * n.grad[i];
                         });
}

inline Tensor add_scalar(const Tensor& a, double c) {
  std::vector<double> out(a.values());
  for (auto& v : out) v += c;
  return detail::make_op(a.shape(), std::move(out), "add_scalar", {a},
                         [](TensorNode& n) {
                           if (!detail::wants(n, 0)) return;
                           auto& g = detail::gbuf(n, 0);
                           for (std::size_t i = 0; i < g.size(); ++i)
                             g[i] += n.grad[i];
                         });
}

inline Tensor abs_t(const Tensor& a) {
  std::vector<double> out(a.values());
  for (auto& v : out) v = std::fabs(v);
  return detail::make_op(a.shape(), std::move(out), "abs", {a},
                         [](TensorNode& n) {
                           if (!detail::wants(n, 0)) return;
                           const auto& x = n.inputs[0]->values;
                           auto& g = detail::gbuf(n, 0);
                           for (std::size_t i = 0; i < g.size(); ++i) {
                             if (x[i] > 0.0)
                               g[i] += n.grad[i];
                             else if (x[i] < 0.0)
                               g[i] -= n.grad[i];
                           }
                         });
}

inline Tensor exp_t(const Tensor& a) {
  std::vector<double> out(a.values());
  for (auto& v : out) v = std::exp(v);
  return detail::make_op(a.shape(), std::move(out), "exp", {a},
                         [](TensorNode& n) {
                           if (!detail::wants(n, 0)) return;
                           auto& g = detail::gbuf(n, 0);
                           for (std::size_t i = 0; i < g.size(); ++i)
                             g[i] += n.grad[i] * n.values[i];
                         });
}

inline Tensor log_t(const Tensor& a) {
  std::vector<double> out(a.values());
  for (auto& v : out) v = std::log(v);
  return detail::make_op(a.shape(), std::move(out), "log", {a},
                         [](TensorNode& n) {
                           if (!detail::wants(n, 0)) return;
                           const auto& x = n.inputs[0]->values;
                           auto& g = detail::gbuf(n, 0);
                           for (std::size_t i = 0; i < g.size(); ++i)
                             g[i] += n.grad[i] / x[i];
                         });
}

inline Tensor relu(const Tensor& a) {
  std::vector<double> out(a.values());
  for (auto& v : out) v = v > 0.0 ? v : 0.0;
  return detail::make_op(a.shape(), std::move(out), "relu", {a},
                         [](TensorNode& n) {
                           if (!detail::wants(n, 0)) return;
                           const auto& x = n.inputs[0]->values;
                           auto& g = detail::gbuf(n, 0);
                           for (std::size_t i = 0; i < g.size(); ++i)
                             if (x[i] > 0.0) g[i] += n.grad[i];
                         });
}

inline Tensor leaky_relu(const Tensor& a, double slope = 0.1) {
  std::vector<double> out(a.values());
  for (auto& v : out) v = v > 0.0 ? v : slope * v;
  return detail::make_op(a.shape(), std::move(out), "leaky_relu", {a},
                         [slope](TensorNode& n) {
                           if (!detail::wants(n, 0)) return;
                           const auto& x = n.inputs[0]->values;
                           auto& g = detail::gbuf(n, 0);
                           for (std::size_t i = 0; i < g.size(); ++i)
                             g[i] += n.grad[i] * (x[i] > 0.0 ? 1.0 : slope);
                         });
}

// ---------------------------------------------------------------------------
// Reductions and indexing
// ---------------------------------------------------------------------------

inline Tensor sum(const Tensor& a) {
  double s = 0.0;
  for (double v : a.values()) s += v;
  return detail::make_op({1}, {s}, "sum", {a}, [](TensorNode& n) {
    if (!detail::wants(n, 0)) return;
    auto& g = detail::gbuf(n, 0);
    const double gv = n.grad[0];
    for (auto& v : g) v += gv;
  });
}

inline Tensor mean(const Tensor& a) {
  const double inv = 1.0 / static_cast<double>(a.size());
  double s = 0.0;
  for (double v : a.values()) s += v;
  return detail::make_op({1}, {s * inv}, "mean", {a}, [inv](TensorNode& n) {
    if (!detail::wants(n, 0)) return;
    auto& g = detail::gbuf(n, 0);
    const double gv = n.grad[0] * inv;
    for (auto& v : g) v += gv;
  });
}

inline Tensor pick(const Tensor& a, std::int64_t index) {
  if (index < 0 || index >= a.size())
    throw std::invalid_argument("pick: index " + std::to_string(index) +
                                " out of range for " + shape_str(a.shape()));
  return detail::make_op(
      {1}, {a.values()[static_cast<std::size_t>(index)]}, "pick", {a},
      [index](TensorNode& n) {
        if (!detail::wants(n, 0)) return;
        detail::gbuf(n, 0)[static_cast<std::size_t>(index)] += n.grad[0];
      });
}

inline Tensor dot(const Tensor& a, const Tensor& b) {
  detail::check_same_shape(a, b, "dot");
  double s = 0.0;
  const auto& av = a.values();
  const auto& bv = b.values();
  for (std::size_t i = 0; i < av.size(); ++i) s += av[i] * bv[i];
  return detail::make_op({1}, {s}, "dot", {a, b}, [](TensorNode& n) {
    const auto& av2 = n.inputs[0]->values;
    const auto& bv2 = n.inputs[1]->values;
    const double gv = n.grad[0];
    if (detail::wants(n, 0)) {
      auto& g = detail::gbuf(n, 0);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += gv * bv2[i];
    }
    if (detail::wants(n, 1)) {
      auto& g = detail::gbuf(n, 1);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += gv * av2[i];
    }
  });
}

/// log(sum(exp(x))) of a 1-D tensor, stabilized by max subtraction.
inline Tensor logsumexp(const Tensor& x) {
  double m = x.values()[0];
  for (double v : x.values()) m = std::max(m, v);
  Tensor shifted = add_scalar(x, -m);
  return add_scalar(log_t(sum(exp_t(shifted))), m);
}

// ---------------------------------------------------------------------------
// Dense products
// ---------------------------------------------------------------------------

/// X [in] -> [out], or X [B,in] -> [B,out], with weight W [out,in].
inline Tensor linear(const Tensor& x, const Tensor& w) {
  if (w.ndim() != 2)
    throw std::invalid_argument("linear: weight must be 2-d, got " +
                                shape_str(w.shape()));
  const int out_dim = w.dim(0);
  const int in_dim = w.dim(1);
  int batch = 1;
  Shape out_shape;
  if (x.ndim() == 1) {
    if (x.dim(0) != in_dim)
      throw std::invalid_argument("linear: input " + shape_str(x.shape()) +
                                  " does not match weight " +
                                  shape_str(w.shape()));
    out_shape = {out_dim};
  } else if (x.ndim() == 2) {
    if (x.dim(1) != in_dim)
      throw std::invalid_argument("linear: input " + shape_str(x.shape()) +
                                  " does not match weight " +
                                  shape_str(w.shape()));
    batch = x.dim(0);
    out_shape = {batch, out_dim};
  } else {
    throw std::invalid_argument("linear: input must be 1-d or 2-d, got " +
                                shape_str(x.shape()));
  }
  std::vector<double> out(static_cast<std::size_t>(batch) * out_dim, 0.0);
  const auto& xv = x.values();
  const auto& wv = w.values();
  for (int b = 0; b < batch; ++b) {
    const double* xr = xv.data() + static_cast<std::size_t>(b) * in_dim;
    double* yr = out.data() + static_cast<std::size_t>(b) * out_dim;
    for (int o = 0; o < out_dim; ++o) {
      const double* wr = wv.data() + static_cast<std::size_t>(o) * in_dim;
      double s = 0.0;
      for (int i = 0; i < in_dim; ++i) s += wr[i] * xr[i];
      yr[o] = s;
    }
  }
  return detail::make_op(
      out_shape, std::move(out), "linear", {x, w},
      [batch, out_dim, in_dim](TensorNode& n) {
        const auto& xv2 = n.inputs[0]->values;
        const auto& wv2 = n.inputs[1]->values;
        if (detail::wants(n, 0)) {
          auto& gx = detail::gbuf(n, 0);
          for (int b = 0; b < batch; ++b) {
            const double* gr = n.grad.data() +
                               static_cast<std::size_t>(b) * out_dim;
            double* gxr = gx.data() + static_cast<std::size_t>(b) * in_dim;
            for (int o = 0; o < out_dim; ++o) {
              const double gv = gr[o];
              const double* wr =
                  wv2.data() + static_cast<std::size_t>(o) * in_dim;
              for (int i = 0; i < in_dim; ++i) gxr[i] += gv * wr[i];
            }
          }
        }
        if (detail::wants(n, 1)) {
          auto& gw = detail::gbuf(n, 1);
          for (int b = 0; b < batch; ++b) {
            const double* gr = n.grad.data() +
                               static_cast<std::size_t>(b) * out_dim;
            const double* xr =
                xv2.data() + static_cast<std::size_t>(b) * in_dim;
            for (int o = 0; o < out_dim; ++o) {
              const double gv = gr[o];
              double* gwr = gw.data() + static_cast<std::size_t>(o) * in_dim;
              for (int i = 0; i < in_dim; ++i) gwr[i] += gv * xr[i];
            }
          }
        }
      });
}

inline Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  Tensor y = linear(x, w);
  if (y.ndim() == 1) return add(y, b);
  // Row-broadcast bias over the batch dimension.
  const int batch = y.dim(0);
  const int out_dim = y.dim(1);
  if (b.ndim() != 1 || b.dim(0) != out_dim)
    throw std::invalid_argument("linear: bias " + shape_str(b.shape()) +
                                " does not match output " +
                                shape_str(y.shape()));
  std::vector<double> out(y.values());
  const auto& bv = b.values();
  for (int r = 0; r < batch; ++r)
    for (int o = 0; o < out_dim; ++o)
      out[static_cast<std::size_t>(r) * out_dim + o] += bv[o];
  return detail::make_op(y.shape(), std::move(out), "bias_rows", {y, b},
                         [batch, out_dim](TensorNode& n) {
                           if (detail::wants(n, 0)) {
                             auto& g = detail::gbuf(n, 0);
                             for (std::size_t i = 0; i < g.size(); ++i)
                               g[i] += n.grad[i];
                           }
                           if (detail::wants(n, 1)) {
                             auto& g = detail::gbuf(n, 1);
                             for (int r = 0; r < batch; ++r)
                               for (int o = 0; o < out_dim; ++o)
                                 g[o] += n.grad[static_cast<std::size_t>(r) *
                                                    out_dim +
                                                o];
                           }
                         });
}

/// a [L] * M [L,N] -> [N]; the attention-weighted row mix.
inline Tensor vecmat(const Tensor& a, const Tensor& m) {
  if (a.ndim() != 1 || m.ndim() != 2 || a.dim(0) != m.dim(0))
    throw std::invalid_argument("vecmat: incompatible shapes " +
                                shape_str(a.shape()) + " vs " +
                                shape_str(m.shape()));
  const int rows = m.dim(0);
  const int cols = m.dim(1);
  std::vector<double> out(static_cast<std::size_t>(cols), 0.0);
  const auto& av = a.values();
  const auto& mv = m.values();
  for (int r = 0; r < rows; ++r) {
    const double w = av[static_cast<std::size_t>(r)];
    const double* mr = mv.data() + static_cast<std::size_t>(r) * cols;
    for (int c = 0; c < cols; ++c) out[static_cast<std::size_t>(c)] += w * mr[c];
  }
  return detail::make_op(
      {cols}, std::move(out), "vecmat", {a, m}, [rows, cols](TensorNode& n) {
        const auto& av2 = n.inputs[0]->values;
        const auto& mv2 = n.inputs[1]->values;
        if (detail::wants(n, 0)) {
          auto& ga = detail::gbuf(n, 0);
          for (int r = 0; r < rows; ++r) {
            const double* mr = mv2.data() + static_cast<std::size_t>(r) * cols;
            double s = 0.0;
            for (int c = 0; c < cols; ++c) s += n.grad[c] * mr[c];
            ga[static_cast<std::size_t>(r)] += s;
          }
        }
        if (detail::wants(n, 1)) {
          auto& gm = detail::gbuf(n, 1);
          for (int r = 0; r < rows; ++r) {
            const double w = av2[static_cast<std::size_t>(r)];
            double* gr = gm.data() + static_cast<std::size_t>(r) * cols;
            for (int c = 0; c < cols; ++c) gr[c] += w * n.grad[c];
          }
        }
      });
}

// ---------------------------------------------------------------------------
// Softmax / normalization
// ---------------------------------------------------------------------------

inline Tensor softmax(const Tensor& x, int axis) {
  const auto view = detail::axis_view(x.shape(), axis, "softmax");
  std::vector<double> out(x.values());
  for (std::int64_t o = 0; o < view.outer; ++o) {
    for (std::int64_t i = 0; i < view.inner; ++i) {
      double* base = out.data() + o * view.len * view.inner + i;
      double m = base[0];
      for (std::int64_t k = 1; k < view.len; ++k)
        m = std::max(m, base[k * view.inner]);
      double s = 0.0;
      for (std::int64_t k = 0; k < view.len; ++k) {
        double e = std::exp(base[k * view.inner] - m);
        base[k * view.inner] = e;
        s += e;
      }
      const double inv = 1.0 / s;
      for (std::int64_t k = 0; k < view.len; ++k) base[k * view.inner] *= inv;
    }
  }
  return detail::make_op(
      x.shape(), std::move(out), "softmax", {x}, [view](TensorNode& n) {
        if (!detail::wants(n, 0)) return;
        auto& g = detail::gbuf(n, 0);
        for (std::int64_t o = 0; o < view.outer; ++o) {
          for (std::int64_t i = 0; i < view.inner; ++i) {
            const std::int64_t off = o * view.len * view.inner + i;
            double dotv = 0.0;
            for (std::int64_t k = 0; k < view.len; ++k)
              dotv += n.grad[off + k * view.inner] *
                      n.values[off + k * view.inner];
            for (std::int64_t k = 0; k < view.len; ++k) {
              const std::int64_t j = off + k * view.inner;
              g[j] += n.values[j] * (n.grad[j] - dotv);
            }
          }
        }
      });
}

/// Unit Euclidean norm along `axis`; denominator floored at `eps`.
inline Tensor l2_normalize(const Tensor& x, int axis, double eps = 1e-12) {
  const auto view = detail::axis_view(x.shape(), axis, "l2_normalize");
  std::vector<double> out(x.values());
  std::vector<double> norms(
      static_cast<std::size_t>(view.outer * view.inner));
  std::size_t line = 0;
  for (std::int64_t o = 0; o < view.outer; ++o) {
    for (std::int64_t i = 0; i < view.inner; ++i, ++line) {
      double* base = out.data() + o * view.len * view.inner + i;
      double ss = 0.0;
      for (std::int64_t k = 0; k < view.len; ++k) {
        const double v = base[k * view.inner];
        ss += v * v;
      }
      double norm = std::sqrt(ss);
      if (norm < eps) {
        debug_warn("l2_normalize: near-zero vector, norm " +
                   std::to_string(norm) + " floored at eps");
        norm = eps;
      }
      norms[line] = norm;
      const double inv = 1.0 / norm;
      for (std::int64_t k = 0; k < view.len; ++k) base[k * view.inner] *= inv;
    }
  }
  return detail::make_op(
      x.shape(), std::move(out), "l2_normalize", {x},
      [view, norms](TensorNode& n) {
        if (!detail::wants(n, 0)) return;
        auto& g = detail::gbuf(n, 0);
        std::size_t ln = 0;
        for (std::int64_t o = 0; o < view.outer; ++o) {
          for (std::int64_t i = 0; i < view.inner; ++i, ++ln) {
            const std::int64_t off = o * view.len * view.inner + i;
            const double inv = 1.0 / norms[ln];
            double dotv = 0.0;
            for (std::int64_t k = 0; k < view.len; ++k)
              dotv += n.grad[off + k * view.inner] *
                      n.values[off + k * view.inner];
            for (std::int64_t k = 0; k < view.len; ++k) {
              const std::int64_t j = off + k * view.inner;
              g[j] += inv * (n.grad[j] - n.values[j] * dotv);
            }
          }
        }
      });
}

// ---------------------------------------------------------------------------
// Convolution
// ---------------------------------------------------------------------------

namespace detail {

// out[oh,ow] += sum_{ky,kx} w[ky,kx] * x[oy*stride+ky-pad, ox*stride+kx-pad]
inline void corr2d_accum(const double* x, int h, int w, const double* ker,
                         int kh, int kw, int stride, int pad, double* out,
                         int oh, int ow) {
  for (int ky = 0; ky < kh; ++ky) {
    for (int kx = 0; kx < kw; ++kx) {
      const double wv = ker[ky * kw + kx];
      const int offx = kx - pad;
      if (offx >= w) continue;
      int lo = 0;
      if (offx < 0) lo = (-offx + stride - 1) / stride;
      const int hi = std::min(ow, (w - 1 - offx) / stride + 1);
      if (lo >= hi) continue;
      for (int oy = 0; oy < oh; ++oy) {
        const int iy = oy * stride + ky - pad;
        if (iy < 0 || iy >= h) continue;
        const double* xr = x + static_cast<std::size_t>(iy) * w;
        double* orow = out + static_cast<std::size_t>(oy) * ow;
        if (stride == 1) {
          const double* xs = xr + offx;
          for (int ox = lo; ox < hi; ++ox) orow[ox] += wv * xs[ox];
        } else {
          for (int ox = lo; ox < hi; ++ox)
            orow[ox] += wv * xr[ox * stride + offx];
        }
      }
    }
  }
}

// dker[ky,kx] += sum over valid (oy,ox) of g[oy,ox] * x[iy,ix]
inline void corr2d_weight_grad(const double* x, int h, int w, const double* g,
                               int oh, int ow, int stride, int pad,
                               double* dker, int kh, int kw) {
  for (int ky = 0; ky < kh; ++ky) {
    for (int kx = 0; kx < kw; ++kx) {
      const int offx = kx - pad;
      if (offx >= w) continue;
      int lo = 0;
      if (offx < 0) lo = (-offx + stride - 1) / stride;
      const int hi = std::min(ow, (w - 1 - offx) / stride + 1);
      if (lo >= hi) continue;
      double s = 0.0;
      for (int oy = 0; oy < oh; ++oy) {
        const int iy = oy * stride + ky - pad;
        if (iy < 0 || iy >= h) continue;
        const double* xr = x + static_cast<std::size_t>(iy) * w;
        const double* gr = g + static_cast<std::size_t>(oy) * ow;
        if (stride == 1) {
          const double* xs = xr + offx;
          for (int ox = lo; ox < hi; ++ox) s += gr[ox] * xs[ox];
        } else {
          for (int ox = lo; ox < hi; ++ox) s += gr[ox] * xr[ox * stride + offx];
        }
      }
      dker[ky * kw + kx] += s;
    }
  }
}

// Unfolds x [C,H,W] into col [C*kh*kw, oh*ow] with zero padding.
inline void im2col(const double* x, int c, int h, int w, int kh, int kw,
                   int stride, int pad, int oh, int ow, double* col) {
  const std::size_t cols = static_cast<std::size_t>(oh) * ow;
  for (int ic = 0; ic < c; ++ic) {
    const double* plane = x + static_cast<std::size_t>(ic) * h * w;
    for (int ky = 0; ky < kh; ++ky) {
      for (int kx = 0; kx < kw; ++kx) {
        double* dst =
            col + (static_cast<std::size_t>(ic * kh + ky) * kw + kx) * cols;
        for (int oy = 0; oy < oh; ++oy) {
          const int iy = oy * stride + ky - pad;
          double* drow = dst + static_cast<std::size_t>(oy) * ow;
          if (iy < 0 || iy >= h) {
            std::fill(drow, drow + ow, 0.0);
            continue;
          }
          const double* srow = plane + static_cast<std::size_t>(iy) * w;
          if (stride == 1) {
            const int off = kx - pad;
            const int lo = std::max(0, -off);
            const int hi = std::max(lo, std::min(ow, w - off));
            std::fill(drow, drow + lo, 0.0);
            for (int ox = lo; ox < hi; ++ox) drow[ox] = srow[ox + off];
            std::fill(drow + hi, drow + ow, 0.0);
          } else {
            for (int ox = 0; ox < ow; ++ox) {
              const int ix = ox * stride + kx - pad;
              drow[ox] = (ix < 0 || ix >= w) ? 0.0 : srow[ix];
            }
          }
        }
      }
    }
  }
}

// Scatter-add adjoint of im2col.
inline void col2im_add(const double* col, int c, int h, int w, int kh, int kw,
                       int stride, int pad, int oh, int ow, double* x) {
  const std::size_t cols = static_cast<std::size_t>(oh) * ow;
  for (int ic = 0; ic < c; ++ic) {
    double* plane = x + static_cast<std::size_t>(ic) * h * w;
    for (int ky = 0; ky < kh; ++ky) {
      for (int kx = 0; kx < kw; ++kx) {
        const double* src =
            col + (static_cast<std::size_t>(ic * kh + ky) * kw + kx) * cols;
        for (int oy = 0; oy < oh; ++oy) {
          const int iy = oy * stride + ky - pad;
          if (iy < 0 || iy >= h) continue;
          const double* srow = src + static_cast<std::size_t>(oy) * ow;
          double* drow = plane + static_cast<std::size_t>(iy) * w;
          if (stride == 1) {
            const int off = kx - pad;
            const int lo = std::max(0, -off);
            const int hi = std::max(lo, std::min(ow, w - off));
            for (int ox = lo; ox < hi; ++ox) drow[ox + off] += srow[ox];
          } else {
            for (int ox = 0; ox < ow; ++ox) {
              const int ix = ox * stride + kx - pad;
              if (ix >= 0 && ix < w) drow[ix] += srow[ox];
            }
          }
        }
      }
    }
  }
}

// dx[iy,ix] += sum over (ky,kx,oy,ox) mapping to it of w[ky,kx] * g[oy,ox]
inline void corr2d_input_grad(const double* g, int oh, int ow,
                              const double* ker, int kh, int kw, int stride,
                              int pad, double* dx, int h, int w) {
  for (int ky = 0; ky < kh; ++ky) {
    for (int kx = 0; kx < kw; ++kx) {
      const double wv = ker[ky * kw + kx];
      const int offx = kx - pad;
      if (offx >= w) continue;
      int lo = 0;
      if (offx < 0) lo = (-offx + stride - 1) / stride;
      const int hi = std::min(ow, (w - 1 - offx) / stride + 1);
      if (lo >= hi) continue;
      for (int oy = 0; oy < oh; ++oy) {
        const int iy = oy * stride + ky - pad;
        if (iy < 0 || iy >= h) continue;
        double* dxr = dx + static_cast<std::size_t>(iy) * w;
        const double* gr = g + static_cast<std::size_t>(oy) * ow;
        if (stride == 1) {
          double* ds = dxr + offx;
          for (int ox = lo; ox < hi; ++ox) ds[ox] += wv * gr[ox];
        } else {
          for (int ox = lo; ox < hi; ++ox)
            dxr[ox * stride + offx] += wv * gr[ox];
        }
      }
    }
  }
}

}  // namespace detail

/// 2-D correlation of a CHW input with an OCkk weight bank; zero padding.
inline Tensor conv2d(const Tensor& x, const Tensor& w, int stride, int pad) {
  if (x.ndim() != 3 || w.ndim() != 4 || x.dim(0) != w.dim(1))
    throw std::invalid_argument("conv2d: input " + shape_str(x.shape()) +
                                " incompatible with weight " +
                                shape_str(w.shape()));
  if (stride < 1) throw std::invalid_argument("conv2d: stride must be >= 1");
  if (pad < 0) throw std::invalid_argument("conv2d: negative padding");
  const int c = x.dim(0), h = x.dim(1), iw = x.dim(2);
  const int o = w.dim(0), kh = w.dim(2), kw = w.dim(3);
  if (kh > h + 2 * pad || kw > iw + 2 * pad)
    throw std::invalid_argument("conv2d: kernel " + shape_str(w.shape()) +
                                " exceeds padded input " +
                                shape_str(x.shape()));
  const int oh = (h + 2 * pad - kh) / stride + 1;
  const int ow = (iw + 2 * pad - kw) / stride + 1;
  const std::size_t cols = static_cast<std::size_t>(oh) * ow;
  const int krows = c * kh * kw;
  std::vector<double> col(static_cast<std::size_t>(krows) * cols);
  detail::im2col(x.values().data(), c, h, iw, kh, kw, stride, pad, oh, ow,
                 col.data());
  std::vector<double> out(static_cast<std::size_t>(o) * cols, 0.0);
  const double* wv = w.values().data();
#ifdef _OPENMP
#pragma omp parallel for schedule(static) if (static_cast<std::int64_t>(o) * krows * static_cast<std::int64_t>(cols) > 100000)
#endif
  for (int oc = 0; oc < o; ++oc) {
    double* orow = out.data() + static_cast<std::size_t>(oc) * cols;
    const double* wrow = wv + static_cast<std::size_t>(oc) * krows;
    for (int k = 0; k < krows; ++k) {
      const double wk = wrow[k];
      const double* crow = col.data() + static_cast<std::size_t>(k) * cols;
      for (std::size_t i = 0; i < cols; ++i) orow[i] += wk * crow[i];
    }
  }
  return detail::make_op(
      {o, oh, ow}, std::move(out), "conv2d", {x, w},
      [c, h, iw, o, kh, kw, stride, pad, oh, ow, krows, cols](TensorNode& n) {
        const double* xv2 = n.inputs[0]->values.data();
        const double* wv2 = n.inputs[1]->values.data();
        const double* g = n.grad.data();
        std::vector<double> col2(static_cast<std::size_t>(krows) * cols);
        detail::im2col(xv2, c, h, iw, kh, kw, stride, pad, oh, ow,
                       col2.data());
        if (detail::wants(n, 1)) {
          double* gw = detail::gbuf(n, 1).data();
#ifdef _OPENMP
#pragma omp parallel for schedule(static) if (o > 1)
#endif
          for (int oc = 0; oc < o; ++oc) {
            const double* grow = g + static_cast<std::size_t>(oc) * cols;
            double* gwrow = gw + static_cast<std::size_t>(oc) * krows;
            for (int k = 0; k < krows; ++k) {
              const double* crow =
                  col2.data() + static_cast<std::size_t>(k) * cols;
              double s = 0.0;
              for (std::size_t i = 0; i < cols; ++i) s += grow[i] * crow[i];
              gwrow[k] += s;
            }
          }
        }
        if (detail::wants(n, 0)) {
          // colg = W^T g, then fold back onto the input grid.
          std::vector<double> colg(static_cast<std::size_t>(krows) * cols,
                                   0.0);
#ifdef _OPENMP
#pragma omp parallel for schedule(static) if (krows > 8)
#endif
          for (int k = 0; k < krows; ++k) {
            double* crow = colg.data() + static_cast<std::size_t>(k) * cols;
            for (int oc = 0; oc < o; ++oc) {
              const double wk = wv2[static_cast<std::size_t>(oc) * krows + k];
              const double* grow = g + static_cast<std::size_t>(oc) * cols;
              for (std::size_t i = 0; i < cols; ++i) crow[i] += wk * grow[i];
            }
          }
          detail::col2im_add(colg.data(), c, h, iw, kh, kw, stride, pad, oh,
                             ow, detail::gbuf(n, 0).data());
        }
      });
}

/// Per-channel correlation: x [C,H,W] with one kernel per channel, w [C,kh,kw].
inline Tensor depthwise_conv2d(const Tensor& x, const Tensor& w, int stride,
                               int pad) {
  if (x.ndim() != 3 || w.ndim() != 3 || x.dim(0) != w.dim(0))
    throw std::invalid_argument("depthwise_conv2d: input " +
                                shape_str(x.shape()) +
                                " incompatible with weight " +
                                shape_str(w.shape()));
  if (stride < 1)
    throw std::invalid_argument("depthwise_conv2d: stride must be >= 1");
  const int c = x.dim(0), h = x.dim(1), iw = x.dim(2);
  const int kh = w.dim(1), kw = w.dim(2);
  if (kh > h + 2 * pad || kw > iw + 2 * pad)
    throw std::invalid_argument("depthwise_conv2d: kernel " +
                                shape_str(w.shape()) +
                                " exceeds padded input " +
                                shape_str(x.shape()));
  const int oh = (h + 2 * pad - kh) / stride + 1;
  const int ow = (iw + 2 * pad - kw) / stride + 1;
  std::vector<double> out(static_cast<std::size_t>(c) * oh * ow, 0.0);
  const double* xv = x.values().data();
  const double* wv = w.values().data();
  for (int ic = 0; ic < c; ++ic) {
    detail::corr2d_accum(xv + static_cast<std::size_t>(ic) * h * iw, h, iw,
                         wv + static_cast<std::size_t>(ic) * kh * kw, kh, kw,
                         stride, pad, out.data() + static_cast<std::size_t>(ic) * oh * ow,
                         oh, ow);
  }
  return detail::make_op(
      {c, oh, ow}, std::move(out), "depthwise_conv2d", {x, w},
      [c, h, iw, kh, kw, stride, pad, oh, ow](TensorNode& n) {
        const double* xv2 = n.inputs[0]->values.data();
        const double* wv2 = n.inputs[1]->values.data();
        const double* g = n.grad.data();
        if (detail::wants(n, 1)) {
          double* gw = detail::gbuf(n, 1).data();
          for (int ic = 0; ic < c; ++ic)
            detail::corr2d_weight_grad(
                xv2 + static_cast<std::size_t>(ic) * h * iw, h, iw,
                g + static_cast<std::size_t>(ic) * oh * ow, oh, ow, stride,
                pad, gw + static_cast<std::size_t>(ic) * kh * kw, kh, kw);
        }
        if (detail::wants(n, 0)) {
          double* gx = detail::gbuf(n, 0).data();
          for (int ic = 0; ic < c; ++ic)
            detail::corr2d_input_grad(
                g + static_cast<std::size_t>(ic) * oh * ow, oh, ow,
                wv2 + static_cast<std::size_t>(ic) * kh * kw, kh, kw, stride,
                pad, gx + static_cast<std::size_t>(ic) * h * iw, h, iw);
        }
      });
}

inline Tensor add_channel_bias(const Tensor& x, const Tensor& b) {
  if (x.ndim() != 3 || b.ndim() != 1 || b.dim(0) != x.dim(0))
    throw std::invalid_argument("add_channel_bias: input " +
                                shape_str(x.shape()) + " vs bias " +
                                shape_str(b.shape()));
  const int c = x.dim(0);
  const std::int64_t plane = static_cast<std::int64_t>(x.dim(1)) * x.dim(2);
  std::vector<double> out(x.values());
  const auto& bv = b.values();
  for (int ic = 0; ic < c; ++ic) {
    const double bvv = bv[static_cast<std::size_t>(ic)];
    double* p = out.data() + ic * plane;
    for (std::int64_t i = 0; i < plane; ++i) p[i] += bvv;
  }
  return detail::make_op(x.shape(), std::move(out), "add_channel_bias", {x, b},
                         [c, plane](TensorNode& n) {
                           if (detail::wants(n, 0)) {
                             auto& g = detail::gbuf(n, 0);
                             for (std::size_t i = 0; i < g.size(); ++i)
                               g[i] += n.grad[i];
                           }
                           if (detail::wants(n, 1)) {
                             auto& g = detail::gbuf(n, 1);
                             for (int ic = 0; ic < c; ++ic) {
                               double s = 0.0;
                               const double* gp = n.grad.data() + ic * plane;
                               for (std::int64_t i = 0; i < plane; ++i)
                                 s += gp[i];
                               g[static_cast<std::size_t>(ic)] += s;
                             }
                           }
                         });
}

/// Per-channel affine y = gamma[c] * x + beta[c].
inline Tensor channel_affine(const Tensor& x, const Tensor& gamma,
                             const Tensor& beta) {
  if (x.ndim() != 3 || gamma.ndim() != 1 || beta.ndim() != 1 ||
      gamma.dim(0) != x.dim(0) || beta.dim(0) != x.dim(0))
    throw std::invalid_argument(
        "channel_affine: input " + shape_str(x.shape()) + " vs gamma " +
        shape_str(gamma.shape()) + " / beta " + shape_str(beta.shape()));
  const int c = x.dim(0);
  const std::int64_t plane = static_cast<std::int64_t>(x.dim(1)) * x.dim(2);
  std::vector<double> out(x.values());
  const auto& gv = gamma.values();
  const auto& bv = beta.values();
  for (int ic = 0; ic < c; ++ic) {
    const double g0 = gv[static_cast<std::size_t>(ic)];
    const double b0 = bv[static_cast<std::size_t>(ic)];
    double* p = out.data() + ic * plane;
    for (std::int64_t i = 0; i < plane; ++i) p[i] = g0 * p[i] + b0;
  }
  return detail::make_op(
      x.shape(), std::move(out), "channel_affine", {x, gamma, beta},
      [c, plane](TensorNode& n) {
        const auto& xv = n.inputs[0]->values;
        const auto& gv2 = n.inputs[1]->values;
        if (detail::wants(n, 0)) {
          auto& g = detail::gbuf(n, 0);
          for (int ic = 0; ic < c; ++ic) {
            const double g0 = gv2[static_cast<std::size_t>(ic)];
            for (std::int64_t i = 0; i < plane; ++i)
              g[static_cast<std::size_t>(ic * plane + i)] +=
                  g0 * n.grad[static_cast<std::size_t>(ic * plane + i)];
          }
        }
        if (detail::wants(n, 1)) {
          auto& g = detail::gbuf(n, 1);
          for (int ic = 0; ic < c; ++ic) {
            double s = 0.0;
            for (std::int64_t i = 0; i < plane; ++i)
              s += n.grad[static_cast<std::size_t>(ic * plane + i)] *
                   xv[static_cast<std::size_t>(ic * plane + i)];
            g[static_cast<std::size_t>(ic)] += s;
          }
        }
        if (detail::wants(n, 2)) {
          auto& g = detail::gbuf(n, 2);
          for (int ic = 0; ic < c; ++ic) {
            double s = 0.0;
            for (std::int64_t i = 0; i < plane; ++i)
              s += n.grad[static_cast<std::size_t>(ic * plane + i)];
            g[static_cast<std::size_t>(ic)] += s;
          }
        }
      });
}

// ---------------------------------------------------------------------------
// Shape ops
// ---------------------------------------------------------------------------

/// Adaptive average pooling to 1x1, returned as a [C] vector.
inline Tensor global_avg_pool(const Tensor& x) {
  if (x.ndim() != 3)
    throw std::invalid_argument("global_avg_pool: expected CHW, got " +
                                shape_str(x.shape()));
  const int c = x.dim(0);
  const std::int64_t plane = static_cast<std::int64_t>(x.dim(1)) * x.dim(2);
  const double inv = 1.0 / static_cast<double>(plane);
  std::vector<double> out(static_cast<std::size_t>(c), 0.0);
  const auto& xv = x.values();
  for (int ic = 0; ic < c; ++ic) {
    double s = 0.0;
    const double* p = xv.data() + ic * plane;
    for (std::int64_t i = 0; i < plane; ++i) s += p[i];
    out[static_cast<std::size_t>(ic)] = s * inv;
  }
  return detail::make_op({c}, std::move(out), "global_avg_pool", {x},
                         [c, plane, inv](TensorNode& n) {
                           if (!detail::wants(n, 0)) return;
                           auto& g = detail::gbuf(n, 0);
                           for (int ic = 0; ic < c; ++ic) {
                             const double gv = n.grad[static_cast<std::size_t>(ic)] * inv;
                             double* p = g.data() + ic * plane;
                             for (std::int64_t i = 0; i < plane; ++i)
                               p[i] += gv;
                           }
                         });
}

inline Tensor concat_channels(const Tensor& a, const Tensor& b) {
  if (a.ndim() != 3 || b.ndim() != 3 || a.dim(1) != b.dim(1) ||
      a.dim(2) != b.dim(2))
    throw std::invalid_argument("concat_channels: spatial mismatch " +
                                shape_str(a.shape()) + " vs " +
                                shape_str(b.shape()));
  const std::size_t na = a.values().size();
  std::vector<double> out;
  out.reserve(na + b.values().size());
  out.insert(out.end(), a.values().begin(), a.values().end());
  out.insert(out.end(), b.values().begin(), b.values().end());
  return detail::make_op({a.dim(0) + b.dim(0), a.dim(1), a.dim(2)},
                         std::move(out), "concat_channels", {a, b},
                         [na](TensorNode& n) {
                           if (detail::wants(n, 0)) {
                             auto& g = detail::gbuf(n, 0);
                             for (std::size_t i = 0; i < na; ++i)
                               g[i] += n.grad[i];
                           }
                           if (detail::wants(n, 1)) {
                             auto& g = detail::gbuf(n, 1);
                             for (std::size_t i = 0; i < g.size(); ++i)
                               g[i] += n.grad[na + i];
                           }
                         });
}

/// Stretches a [C] vector over an HxW extent.
inline Tensor broadcast_spatial(const Tensor& v, int h, int w) {
  if (v.ndim() != 1)
    throw std::invalid_argument("broadcast_spatial: expected vector, got " +
                                shape_str(v.shape()));
  const int c = v.dim(0);
  const std::int64_t plane = static_cast<std::int64_t>(h) * w;
  std::vector<double> out(static_cast<std::size_t>(c) * plane);
  for (int ic = 0; ic < c; ++ic)
    std::fill_n(out.begin() + ic * plane, plane,
                v.values()[static_cast<std::size_t>(ic)]);
  return detail::make_op({c, h, w}, std::move(out), "broadcast_spatial", {v},
                         [c, plane](TensorNode& n) {
                           if (!detail::wants(n, 0)) return;
                           auto& g = detail::gbuf(n, 0);
                           for (int ic = 0; ic < c; ++ic) {
                             double s = 0.0;
                             const double* p = n.grad.data() + ic * plane;
                             for (std::int64_t i = 0; i < plane; ++i)
                               s += p[i];
                             g[static_cast<std::size_t>(ic)] += s;
                           }
                         });
}

/// [C*r^2, H, W] -> [C, r*H, r*W] sub-pixel rearrangement.
inline Tensor pixel_shuffle(const Tensor& x, int r) {
  if (x.ndim() != 3 || x.dim(0) % (r * r) != 0)
    throw std::invalid_argument("pixel_shuffle: channels of " +
                                shape_str(x.shape()) +
                                " not divisible by r^2 with r=" +
                                std::to_string(r));
  const int c_in = x.dim(0), h = x.dim(1), w = x.dim(2);
  const int c = c_in / (r * r);
  const int oh = h * r, ow = w * r;
  std::vector<double> out(static_cast<std::size_t>(c) * oh * ow);
  const auto& xv = x.values();
  for (int oc = 0; oc < c; ++oc)
    for (int oy = 0; oy < oh; ++oy)
      for (int ox = 0; ox < ow; ++ox) {
        const int ic = oc * r * r + (oy % r) * r + (ox % r);
        out[(static_cast<std::size_t>(oc) * oh + oy) * ow + ox] =
            xv[(static_cast<std::size_t>(ic) * h + oy / r) * w + ox / r];
      }
  return detail::make_op(
      {c, oh, ow}, std::move(out), "pixel_shuffle", {x},
      [c, h, w, r, oh, ow](TensorNode& n) {
        if (!detail::wants(n, 0)) return;
        auto& g = detail::gbuf(n, 0);
        for (int oc = 0; oc < c; ++oc)
          for (int oy = 0; oy < oh; ++oy)
            for (int ox = 0; ox < ow; ++ox) {
              const int ic = oc * r * r + (oy % r) * r + (ox % r);
              g[(static_cast<std::size_t>(ic) * h + oy / r) * w + ox / r] +=
                  n.grad[(static_cast<std::size_t>(oc) * oh + oy) * ow + ox];
            }
      });
}

}  // namespace dualsr
