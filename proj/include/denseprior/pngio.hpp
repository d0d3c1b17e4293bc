#pragma once

// PNG input/output. PNG is a convenience format here: predictions and
// datasets round-trip through the float raster container, while PNG serves
// human inspection (and RGB input to prediction). 8-bit quantization means
// PNG is never bit-exact with the float maps.

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <string>
#include <vector>

#include "denseprior/errors.hpp"
#include "denseprior/tensor.hpp"

namespace dp {

// Reads any PNG as RGB, returning (H, W, 3) floats in [0, 1].
inline TensorF read_png_rgb(const std::string& path) {
  png_image img;
  std::memset(&img, 0, sizeof img);
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&img, path.c_str())) {
    std::string msg = img.message;
    png_image_free(&img);
    throw io_error("cannot read PNG " + path + ": " + msg);
  }
  img.format = PNG_FORMAT_RGB;
  std::vector<uint8_t> buf(PNG_IMAGE_SIZE(img));
  if (!png_image_finish_read(&img, nullptr, buf.data(), 0, nullptr)) {
    std::string msg = img.message;
    png_image_free(&img);
    throw format_error("malformed PNG " + path + ": " + msg, 0);
  }
  const int h = int(img.height), w = int(img.width);
  TensorF out({h, w, 3});
  for (size_t i = 0; i < out.v.size(); ++i) out.v[i] = buf[i] / 255.0f;
  return out;
}

namespace detail {

inline uint8_t to_u8(float v) {
  return uint8_t(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f));
}

inline void write_png(const std::string& path, const std::vector<uint8_t>& buf,
                      int h, int w, png_uint_32 format) {
  png_image img;
  std::memset(&img, 0, sizeof img);
  img.version = PNG_IMAGE_VERSION;
  img.width = png_uint_32(w);
  img.height = png_uint_32(h);
  img.format = format;
  if (!png_image_write_to_file(&img, path.c_str(), 0, buf.data(), 0, nullptr)) {
    std::string msg = img.message;
    png_image_free(&img);
    throw io_error("cannot write PNG " + path + ": " + msg);
  }
}

}  // namespace detail

// Writes an (H, W, 3) float image in [0, 1] as 8-bit RGB.
inline void write_png_rgb(const std::string& path, const TensorF& rgb) {
  if (rgb.shape.size() != 3 || rgb.shape[2] != 3)
    throw shape_error("write_png_rgb expects an (H, W, 3) tensor");
  const int h = rgb.shape[0], w = rgb.shape[1];
  std::vector<uint8_t> buf(rgb.v.size());
  for (size_t i = 0; i < buf.size(); ++i) buf[i] = detail::to_u8(rgb.v[i]);
  detail::write_png(path, buf, h, w, PNG_FORMAT_RGB);
}

// Writes an (H, W) float map in [0, 1] as 8-bit grayscale.
inline void write_png_gray(const std::string& path, const TensorF& map) {
  if (map.shape.size() != 2)
    throw shape_error("write_png_gray expects an (H, W) tensor");
  std::vector<uint8_t> buf(map.v.size());
  for (size_t i = 0; i < buf.size(); ++i) buf[i] = detail::to_u8(map.v[i]);
  detail::write_png(path, buf, map.shape[0], map.shape[1], PNG_FORMAT_GRAY);
}

// Maps a dense prediction to a displayable RGB image:
//  - (H, W) maps are min-max normalized to grayscale (flat maps render mid-gray);
//  - (H, W, 3) maps are treated as unit normals and shown as (n + 1) / 2.
inline TensorF visualize_map(const TensorF& map) {
  if (map.shape.size() == 3 && map.shape[2] == 3) {
    TensorF out({map.shape[0], map.shape[1], 3});
    for (size_t i = 0; i < map.v.size(); ++i)
      out.v[i] = std::clamp(0.5f * (map.v[i] + 1.0f), 0.0f, 1.0f);
    return out;
  }
  if (map.shape.size() != 2)
    throw shape_error("visualize_map expects (H, W) or (H, W, 3)");
  const auto [mn, mx] = std::minmax_element(map.v.begin(), map.v.end());
  const float lo = *mn, hi = *mx;
  TensorF out({map.shape[0], map.shape[1], 3});
  for (int i = 0; i < map.shape[0] * map.shape[1]; ++i) {
    const float g = hi > lo ? (map.v[size_t(i)] - lo) / (hi - lo) : 0.5f;
    out.v[size_t(i) * 3] = out.v[size_t(i) * 3 + 1] = out.v[size_t(i) * 3 + 2] = g;
  }
  return out;
}

}  // namespace dp
