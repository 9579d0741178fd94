// SPDX-License-Identifier: Apache-2.0
//
// Binary PGM (P5) / PPM (P6) reading and writing, plus crop and nearest
// resize for C x H x W images with values in [0,1].
#pragma once

#include <cctype>
#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "amfmn/tensor.hpp"

namespace amfmn {

namespace detail {

inline void skip_pnm_space(std::istream& is) {
  for (;;) {
    int c = is.peek();
    if (c == '#') {
      std::string comment;
      std::getline(is, comment);
    } else if (c != EOF && std::isspace(c)) {
      is.get();
    } else {
      return;
    }
  }
}

inline std::size_t read_pnm_number(std::istream& is, const std::string& path) {
  skip_pnm_space(is);
  std::size_t v = 0;
  if (!(is >> v)) throw FormatError(path + ": malformed PNM header");
  return v;
}

}  // namespace detail

/// Reads P5 or P6. Grey images are replicated to three channels so every
/// image has shape 3 x H x W.
inline Tensor read_pnm(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open image " + path);
  char magic[2];
  if (!is.read(magic, 2) || magic[0] != 'P' || (magic[1] != '5' && magic[1] != '6')) {
    throw FormatError(path + ": not a binary PGM/PPM (expected P5 or P6)");
  }
  const bool colour = magic[1] == '6';
  const std::size_t width = detail::read_pnm_number(is, path);
  const std::size_t height = detail::read_pnm_number(is, path);
  const std::size_t maxval = detail::read_pnm_number(is, path);
  if (width == 0 || height == 0 || maxval == 0 || maxval > 255) {
    throw FormatError(path + ": unsupported PNM dimensions or maxval");
  }
  is.get();  // single whitespace before the raster
  const std::size_t channels = colour ? 3 : 1;
  std::vector<unsigned char> raster(width * height * channels);
  if (!is.read(reinterpret_cast<char*>(raster.data()), static_cast<std::streamsize>(raster.size()))) {
    throw FormatError(path + ": truncated raster");
  }
  Tensor img({3, height, width});
  const double scale = 1.0 / static_cast<double>(maxval);
  for (std::size_t y = 0; y < height; ++y)
    for (std::size_t x = 0; x < width; ++x)
      for (std::size_t c = 0; c < 3; ++c) {
        const std::size_t src = (y * width + x) * channels + (colour ? c : 0);
        img.at(c, y, x) = raster[src] * scale;
      }
  return img;
}

inline unsigned char quantize(double v) {
  const double clamped = std::clamp(v, 0.0, 1.0);
  return static_cast<unsigned char>(std::lround(clamped * 255.0));
}

inline void write_ppm(const std::string& path, const Tensor& image) {
  if (image.rank() != 3 || image.extent(0) != 3) {
    throw DimensionError("write_ppm: expected 3xHxW, got " + detail::shape_str(image.shape()));
  }
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot write image " + path);
  const std::size_t h = image.extent(1), w = image.extent(2);
  os << "P6\n" << w << ' ' << h << "\n255\n";
  std::vector<unsigned char> raster(w * h * 3);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      for (std::size_t c = 0; c < 3; ++c) raster[(y * w + x) * 3 + c] = quantize(image.at(c, y, x));
  os.write(reinterpret_cast<const char*>(raster.data()), static_cast<std::streamsize>(raster.size()));
  if (!os) throw IoError("failed writing image " + path);
}

/// Writes a single-channel H x W field (values in [0,1]) as P5.
inline void write_pgm(const std::string& path, const Tensor& field) {
  if (field.rank() != 2) throw DimensionError("write_pgm: expected HxW, got " + detail::shape_str(field.shape()));
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot write image " + path);
  const std::size_t h = field.extent(0), w = field.extent(1);
  os << "P5\n" << w << ' ' << h << "\n255\n";
  std::vector<unsigned char> raster(w * h);
  for (std::size_t i = 0; i < raster.size(); ++i) raster[i] = quantize(field[i]);
  os.write(reinterpret_cast<const char*>(raster.data()), static_cast<std::streamsize>(raster.size()));
  if (!os) throw IoError("failed writing image " + path);
}

/// Reads a P5 file back into an H x W field in [0,1].
inline Tensor read_pgm_field(const std::string& path) {
  const Tensor rgb = read_pnm(path);
  const std::size_t h = rgb.extent(1), w = rgb.extent(2);
  Tensor out({h, w});
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) out.at(y, x) = rgb.at(0, y, x);
  return out;
}

inline Tensor crop(const Tensor& image, std::size_t x0, std::size_t y0, std::size_t width, std::size_t height) {
  if (x0 + width > image.extent(2) || y0 + height > image.extent(1)) {
    throw DimensionError("crop window exceeds image " + detail::shape_str(image.shape()));
  }
  const std::size_t c = image.extent(0);
  Tensor out({c, height, width});
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t y = 0; y < height; ++y)
      for (std::size_t x = 0; x < width; ++x) out.at(ch, y, x) = image.at(ch, y0 + y, x0 + x);
  return out;
}

inline Tensor resize_nearest(const Tensor& image, std::size_t height, std::size_t width) {
  const std::size_t c = image.extent(0), h = image.extent(1), w = image.extent(2);
  if (h == height && w == width) return image;
  Tensor out({c, height, width});
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t y = 0; y < height; ++y)
      for (std::size_t x = 0; x < width; ++x) out.at(ch, y, x) = image.at(ch, y * h / height, x * w / width);
  return out;
}

}  // namespace amfmn
