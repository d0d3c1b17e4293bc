#pragma once

// DPR1: the on-disk raster container used for every dense map in this
// project. Layout, all little-endian:
//
//   offset 0   4 bytes   magic "DPR1"
//   offset 4   u32       width
//   offset 8   u32       height
//   offset 12  u32       channels
//   offset 16  u8        semantics tag: low nibble = channel meaning
//                        (see RasterSemantic), bit 6 (0x40) = pseudo-labeled
//   offset 17  f32[]     row-major height x width x channels samples
//
// The format is the source of truth for datasets and predictions; PNG output
// elsewhere is visualization only.

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "denseprior/errors.hpp"
#include "denseprior/tensor.hpp"

static_assert(std::endian::native == std::endian::little,
              "raster I/O assumes a little-endian host");

namespace dp {

enum class RasterSemantic : uint8_t {
  rgb = 0,
  depth = 1,
  normal = 2,
  matte = 3,
  mask = 4,
  bundle = 5,  // 9 channels: rgb, depth, normal, matte, mask
};

struct RasterMeta {
  uint32_t width = 0, height = 0, channels = 0;
  RasterSemantic semantic = RasterSemantic::rgb;
  bool pseudo = false;
};

namespace detail {

constexpr char kRasterMagic[4] = {'D', 'P', 'R', '1'};
constexpr size_t kRasterHeaderBytes = 17;
constexpr uint8_t kSemanticMask = 0x0f;
constexpr uint8_t kPseudoBit = 0x40;

inline uint32_t load_u32le(const unsigned char* p) {
  return uint32_t(p[0]) | uint32_t(p[1]) << 8 | uint32_t(p[2]) << 16 |
         uint32_t(p[3]) << 24;
}

inline void store_u32le(std::vector<unsigned char>& out, uint32_t v) {
  out.push_back(uint8_t(v & 0xff));
  out.push_back(uint8_t(v >> 8 & 0xff));
  out.push_back(uint8_t(v >> 16 & 0xff));
  out.push_back(uint8_t(v >> 24 & 0xff));
}

inline int expected_channels(RasterSemantic s) {
  switch (s) {
    case RasterSemantic::rgb: return 3;
    case RasterSemantic::depth: return 1;
    case RasterSemantic::normal: return 3;
    case RasterSemantic::matte: return 1;
    case RasterSemantic::mask: return 1;
    case RasterSemantic::bundle: return 9;
  }
  return -1;
}

}  // namespace detail

// Serializes a (H, W, C) float tensor. The channel count must match the
// declared semantics.
inline void write_raster(const std::string& path, const TensorF& hwc,
                         RasterSemantic semantic, bool pseudo = false) {
  if (hwc.shape.size() != 3)
    throw shape_error("write_raster expects a rank-3 (H, W, C) tensor");
  const uint32_t h = uint32_t(hwc.shape[0]), w = uint32_t(hwc.shape[1]),
                 c = uint32_t(hwc.shape[2]);
  if (int(c) != detail::expected_channels(semantic))
    throw usage_error("write_raster: channel count " + std::to_string(c) +
                      " does not match the declared semantics");

  std::vector<unsigned char> buf;
  buf.reserve(detail::kRasterHeaderBytes + hwc.v.size() * 4);
  buf.insert(buf.end(), detail::kRasterMagic, detail::kRasterMagic + 4);
  detail::store_u32le(buf, w);
  detail::store_u32le(buf, h);
  detail::store_u32le(buf, c);
  buf.push_back(uint8_t(uint8_t(semantic) | (pseudo ? detail::kPseudoBit : 0)));
  const size_t data_at = buf.size();
  buf.resize(buf.size() + hwc.v.size() * 4);
  std::memcpy(buf.data() + data_at, hwc.v.data(), hwc.v.size() * 4);

  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw io_error("cannot open for writing: " + path);
  f.write(reinterpret_cast<const char*>(buf.data()),
          std::streamsize(buf.size()));
  if (!f) throw io_error("short write: " + path);
}

// Parses a DPR1 file back into a (H, W, C) float tensor. Malformed input
// raises format_error carrying the byte offset where parsing stopped.
inline TensorF read_raster(const std::string& path, RasterMeta* meta = nullptr) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw io_error("cannot open for reading: " + path);
  std::vector<unsigned char> buf((std::istreambuf_iterator<char>(f)),
                                 std::istreambuf_iterator<char>());

  if (buf.size() < 4 ||
      std::memcmp(buf.data(), detail::kRasterMagic, 4) != 0)
    throw format_error("bad magic, expected \"DPR1\"", 0);
  if (buf.size() < detail::kRasterHeaderBytes)
    throw format_error("truncated header", buf.size());

  const uint32_t w = detail::load_u32le(buf.data() + 4);
  const uint32_t h = detail::load_u32le(buf.data() + 8);
  const uint32_t c = detail::load_u32le(buf.data() + 12);
  if (w == 0 || w > 65536) throw format_error("implausible width", 4);
  if (h == 0 || h > 65536) throw format_error("implausible height", 8);
  if (c == 0 || c > 64) throw format_error("implausible channel count", 12);
  const uint8_t tag = buf[16];
  const uint8_t sem = tag & detail::kSemanticMask;
  if (sem > uint8_t(RasterSemantic::bundle))
    throw format_error("unknown semantics tag", 16);

  const size_t n = size_t(w) * size_t(h) * size_t(c);
  const size_t need = detail::kRasterHeaderBytes + n * 4;
  if (buf.size() < need)
    throw format_error("truncated pixel data", buf.size());
  if (buf.size() > need)
    throw format_error("trailing bytes after pixel data", need);
  if (int(c) != detail::expected_channels(RasterSemantic(sem)))
    throw format_error("channel count does not match semantics tag", 12);

  TensorF out({int(h), int(w), int(c)});
  std::memcpy(out.v.data(), buf.data() + detail::kRasterHeaderBytes, n * 4);
  if (meta) {
    meta->width = w;
    meta->height = h;
    meta->channels = c;
    meta->semantic = RasterSemantic(sem);
    meta->pseudo = (tag & detail::kPseudoBit) != 0;
  }
  return out;
}

}  // namespace dp
