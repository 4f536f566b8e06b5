#pragma once

#include <stdexcept>
#include <vector>

#include "dualsr/image.hpp"
#include "dualsr/ops.hpp"
#include "dualsr/tensor.hpp"

namespace dualsr {

// Single-level orthonormal Haar. For a 2x2 block [[a,b],[c,d]]:
//   LL = (a+b+c+d)/2    HL = (a-b+c-d)/2   (high-pass along x)
//   LH = (a+b-c-d)/2    HH = (a-b-c+d)/2   (high-pass along y)
// Each filter has unit L2 norm, so energy is preserved exactly.

/// LH/HL/HH stack: 9 channels at half resolution, ordered
/// [LH,HL,HH] per color channel.
struct HighFreqStack {
  Image subbands;  // channels = 3 * color channels
};

struct HaarPyramid {
  Image ll;            // low-pass, half resolution
  HighFreqStack hf;    // detail bands
  int pad_bottom = 0;  // reflect padding applied to odd extents
  int pad_right = 0;
};

namespace detail {

// One plane h x w (even) -> four half-resolution planes.
inline void haar_plane(const double* in, int h, int w, double* ll, double* lh,
                       double* hl, double* hh) {
  const int oh = h / 2, ow = w / 2;
  for (int y = 0; y < oh; ++y) {
    const double* r0 = in + static_cast<std::size_t>(2 * y) * w;
    const double* r1 = r0 + w;
    for (int x = 0; x < ow; ++x) {
      const double a = r0[2 * x], b = r0[2 * x + 1];
      const double c = r1[2 * x], d = r1[2 * x + 1];
      const std::size_t i = static_cast<std::size_t>(y) * ow + x;
      ll[i] = 0.5 * (a + b + c + d);
      hl[i] = 0.5 * (a - b + c - d);
      lh[i] = 0.5 * (a + b - c - d);
      hh[i] = 0.5 * (a - b - c + d);
    }
  }
}

// Inverse of haar_plane; the synthesis filters of the orthonormal pair.
inline void haar_plane_inverse(const double* ll, const double* lh,
                               const double* hl, const double* hh, int oh,
                               int ow, double* out) {
  const int w = 2 * ow;
  for (int y = 0; y < oh; ++y) {
    double* r0 = out + static_cast<std::size_t>(2 * y) * w;
    double* r1 = r0 + w;
    for (int x = 0; x < ow; ++x) {
      const std::size_t i = static_cast<std::size_t>(y) * ow + x;
      r0[2 * x] = 0.5 * (ll[i] + hl[i] + lh[i] + hh[i]);
      r0[2 * x + 1] = 0.5 * (ll[i] - hl[i] + lh[i] - hh[i]);
      r1[2 * x] = 0.5 * (ll[i] + hl[i] - lh[i] - hh[i]);
      r1[2 * x + 1] = 0.5 * (ll[i] - hl[i] - lh[i] + hh[i]);
    }
  }
}

inline Image pad_even(const Image& img, int& pad_bottom, int& pad_right) {
  pad_bottom = img.height % 2;
  pad_right = img.width % 2;
  if (!pad_bottom && !pad_right) return img;
  Image out(img.height + pad_bottom, img.width + pad_right, img.channels,
            img.space);
  for (int c = 0; c < img.channels; ++c)
    for (int y = 0; y < out.height; ++y)
      for (int x = 0; x < out.width; ++x)
        out.at(c, y, x) = img.at(c, std::min(y, img.height - 1),
                                 std::min(x, img.width - 1));
  return out;
}

}  // namespace detail

inline HaarPyramid haar_decompose(const Image& img) {
  if (img.empty()) throw std::invalid_argument("haar_decompose: empty image");
  HaarPyramid p;
  const Image src = detail::pad_even(img, p.pad_bottom, p.pad_right);
  const int oh = src.height / 2, ow = src.width / 2;
  p.ll = Image(oh, ow, src.channels, src.space);
  p.hf.subbands = Image(oh, ow, 3 * src.channels, src.space);
  for (int c = 0; c < src.channels; ++c) {
    detail::haar_plane(src.plane(c), src.height, src.width, p.ll.plane(c),
                       p.hf.subbands.plane(3 * c),       // LH
                       p.hf.subbands.plane(3 * c + 1),   // HL
                       p.hf.subbands.plane(3 * c + 2));  // HH
  }
  return p;
}

/// Perfect reconstruction from all four subbands (padding removed).
inline Image haar_reconstruct(const HaarPyramid& p) {
  const int h = 2 * p.ll.height, w = 2 * p.ll.width;
  Image full(h, w, p.ll.channels, p.ll.space);
  for (int c = 0; c < p.ll.channels; ++c)
    detail::haar_plane_inverse(p.ll.plane(c), p.hf.subbands.plane(3 * c),
                               p.hf.subbands.plane(3 * c + 1),
                               p.hf.subbands.plane(3 * c + 2), p.ll.height,
                               p.ll.width, full.plane(c));
  if (p.pad_bottom || p.pad_right)
    return crop(full, 0, 0, h - p.pad_bottom, w - p.pad_right);
  return full;
}

/// The extractor input: high-frequency bands only, LL discarded.
inline HighFreqStack hf_input(const Image& lr) {
  return haar_decompose(lr).hf;
}

inline Tensor hf_to_tensor(const HighFreqStack& s) {
  return to_tensor(s.subbands);
}

/// Differentiable LH/HL/HH extraction on a CHW tensor with even extents.
inline Tensor haar_highpass(const Tensor& x) {
  if (x.ndim() != 3 || x.dim(1) % 2 != 0 || x.dim(2) % 2 != 0)
    throw std::invalid_argument("haar_highpass: expected CHW with even extents, got " +
                                shape_str(x.shape()));
  const int c = x.dim(0), h = x.dim(1), w = x.dim(2);
  const int oh = h / 2, ow = w / 2;
  std::vector<double> out(static_cast<std::size_t>(3 * c) * oh * ow);
  std::vector<double> ll(static_cast<std::size_t>(oh) * ow);  // discarded
  for (int ic = 0; ic < c; ++ic) {
    const double* in = x.values().data() + static_cast<std::size_t>(ic) * h * w;
    double* base = out.data() + static_cast<std::size_t>(3 * ic) * oh * ow;
    detail::haar_plane(in, h, w, ll.data(), base,
                       base + static_cast<std::size_t>(oh) * ow,
                       base + 2 * static_cast<std::size_t>(oh) * ow);
  }
  return detail::make_op(
      {3 * c, oh, ow}, std::move(out), "haar_highpass", {x},
      [c, h, w, oh, ow](TensorNode& n) {
        if (!detail::wants(n, 0)) return;
        auto& g = detail::gbuf(n, 0);
        // Adjoint of the analysis filters (LL contribution absent).
        for (int ic = 0; ic < c; ++ic) {
          const double* glh =
              n.grad.data() + static_cast<std::size_t>(3 * ic) * oh * ow;
          const double* ghl = glh + static_cast<std::size_t>(oh) * ow;
          const double* ghh = ghl + static_cast<std::size_t>(oh) * ow;
          double* gx = g.data() + static_cast<std::size_t>(ic) * h * w;
          for (int y = 0; y < oh; ++y) {
            double* r0 = gx + static_cast<std::size_t>(2 * y) * w;
            double* r1 = r0 + w;
            for (int x2 = 0; x2 < ow; ++x2) {
              const std::size_t i = static_cast<std::size_t>(y) * ow + x2;
              r0[2 * x2] += 0.5 * (glh[i] + ghl[i] + ghh[i]);
              r0[2 * x2 + 1] += 0.5 * (glh[i] - ghl[i] - ghh[i]);
              r1[2 * x2] += 0.5 * (-glh[i] + ghl[i] - ghh[i]);
              r1[2 * x2 + 1] += 0.5 * (-glh[i] - ghl[i] + ghh[i]);
            }
          }
        }
      });
}

}  // namespace dualsr
