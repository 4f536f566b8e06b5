#pragma once

#include <png.h>

#include <cmath>
#include <cstdio>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "dualsr/tensor.hpp"

namespace dualsr {

enum class ColorSpace { rgb, luma };

/// Planar floating-point raster in [0,1]; data layout is [channel][y][x].
struct Image {
  int height = 0;
  int width = 0;
  int channels = 0;
  ColorSpace space = ColorSpace::rgb;
  std::vector<double> data;

  Image() = default;
  Image(int h, int w, int c, ColorSpace cs = ColorSpace::rgb)
      : height(h), width(w), channels(c), space(cs),
        data(static_cast<std::size_t>(h) * w * c, 0.0) {}

  double& at(int c, int y, int x) {
    return data[(static_cast<std::size_t>(c) * height + y) * width + x];
  }
  double at(int c, int y, int x) const {
    return data[(static_cast<std::size_t>(c) * height + y) * width + x];
  }
  double* plane(int c) {
    return data.data() + static_cast<std::size_t>(c) * height * width;
  }
  const double* plane(int c) const {
    return data.data() + static_cast<std::size_t>(c) * height * width;
  }
  std::int64_t pixels() const {
    return static_cast<std::int64_t>(height) * width;
  }
  bool empty() const { return height == 0 || width == 0 || channels == 0; }
};

inline Image crop(const Image& img, int y0, int x0, int h, int w) {
  if (y0 < 0 || x0 < 0 || y0 + h > img.height || x0 + w > img.width)
    throw std::invalid_argument("crop: window out of bounds");
  Image out(h, w, img.channels, img.space);
  for (int c = 0; c < img.channels; ++c)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) out.at(c, y, x) = img.at(c, y0 + y, x0 + x);
  return out;
}

inline Image clamp01(Image img) {
  for (auto& v : img.data) v = v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v);
  return img;
}

inline Tensor to_tensor(const Image& img) {
  return Tensor::from(img.data, {img.channels, img.height, img.width});
}

inline Image from_tensor(const Tensor& t, ColorSpace cs = ColorSpace::rgb) {
  if (t.ndim() != 3)
    throw std::invalid_argument("from_tensor: expected CHW, got " +
                                shape_str(t.shape()));
  Image img(t.dim(1), t.dim(2), t.dim(0), cs);
  img.data = t.values();
  return img;
}

// ---------------------------------------------------------------------------
// 8-bit PNG I/O; intensities map to [0,1] by /255 and back by round-clamp.
// ---------------------------------------------------------------------------

namespace detail {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};

}  // namespace detail

inline Image read_png(const std::string& path) {
  std::unique_ptr<std::FILE, detail::FileCloser> fp(
      std::fopen(path.c_str(), "rb"));
  if (!fp) throw std::runtime_error("read_png: cannot open " + path);
  png_structp png =
      png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw std::runtime_error("read_png: libpng init failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    throw std::runtime_error("read_png: libpng info init failed");
  }
  std::vector<png_bytep> rows;
  std::vector<png_byte> buffer;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw std::runtime_error("read_png: decode failed for " + path);
  }
  png_init_io(png, fp.get());
  png_read_info(png, info);

  const png_uint_32 w = png_get_image_width(png, info);
  const png_uint_32 h = png_get_image_height(png, info);
  const png_byte color = png_get_color_type(png, info);
  const png_byte depth = png_get_bit_depth(png, info);

  if (depth == 16) png_set_strip_16(png);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
  if (color == PNG_COLOR_TYPE_GRAY || color == PNG_COLOR_TYPE_GRAY_ALPHA)
    png_set_gray_to_rgb(png);
  if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
  png_read_update_info(png, info);

  const std::size_t row_bytes = png_get_rowbytes(png, info);
  buffer.resize(row_bytes * h);
  rows.resize(h);
  for (png_uint_32 y = 0; y < h; ++y) rows[y] = buffer.data() + y * row_bytes;
  png_read_image(png, rows.data());
  png_destroy_read_struct(&png, &info, nullptr);

  Image img(static_cast<int>(h), static_cast<int>(w), 3);
  for (png_uint_32 y = 0; y < h; ++y) {
    const png_byte* row = rows[y];
    for (png_uint_32 x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c)
        img.at(c, static_cast<int>(y), static_cast<int>(x)) =
            row[3 * x + c] / 255.0;
  }
  return img;
}

inline void write_png(const std::string& path, const Image& img) {
  if (img.empty()) throw std::invalid_argument("write_png: empty image");
  if (img.channels != 1 && img.channels != 3)
    throw std::invalid_argument("write_png: expected 1 or 3 channels, got " +
                                std::to_string(img.channels));
  std::unique_ptr<std::FILE, detail::FileCloser> fp(
      std::fopen(path.c_str(), "wb"));
  if (!fp) throw std::runtime_error("write_png: cannot open " + path);
  png_structp png =
      png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw std::runtime_error("write_png: libpng init failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    throw std::runtime_error("write_png: libpng info init failed");
  }
  std::vector<png_byte> buffer(
      static_cast<std::size_t>(img.height) * img.width * img.channels);
  std::vector<png_bytep> rows(static_cast<std::size_t>(img.height));
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw std::runtime_error("write_png: encode failed for " + path);
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(img.width),
               static_cast<png_uint_32>(img.height), 8,
               img.channels == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  for (int y = 0; y < img.height; ++y) {
    png_byte* row =
        buffer.data() + static_cast<std::size_t>(y) * img.width * img.channels;
    for (int x = 0; x < img.width; ++x)
      for (int c = 0; c < img.channels; ++c) {
        const double v = std::round(img.at(c, y, x) * 255.0);
        row[x * img.channels + c] =
            static_cast<png_byte>(v < 0.0 ? 0.0 : (v > 255.0 ? 255.0 : v));
      }
    rows[static_cast<std::size_t>(y)] = row;
  }
  png_write_info(png, info);
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

}  // namespace dualsr
