#pragma once

// DPCK: the network checkpoint container. One file holds named float32
// weight arrays, the architecture description as embedded text, a format
// version, and training counters. Round-trips are bit-exact. Layout, all
// little-endian:
//
//   offset 0   4 bytes   magic "DPCK"
//   offset 4   u32       format version (currently 1)
//   offset 8   u32       kind: 0 = noise predictor, 1 = single-step predictor
//   offset 12  u64       training step counter
//   offset 20  u64       build seed
//   offset 28  u64       network function evaluations (predictor only)
//   offset 36  u32       config text length, then that many bytes
//   ...        u32       array count, then per array:
//                        u32 name length, name bytes,
//                        u32 ndim, u32 dims[ndim], f32 data[prod(dims)]

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "denseprior/errors.hpp"
#include "denseprior/projection.hpp"
#include "denseprior/unet.hpp"

static_assert(std::endian::native == std::endian::little,
              "checkpoint I/O assumes a little-endian host");

namespace dp {

namespace detail {

constexpr char kCheckpointMagic[4] = {'D', 'P', 'C', 'K'};
constexpr uint32_t kCheckpointVersion = 1;

struct CheckpointHeader {
  uint32_t kind = 0;
  uint64_t step = 0;
  uint64_t seed = 0;
  uint64_t nfe = 0;
  std::string config_text;
  size_t config_text_offset = 0;
};

class ByteWriter {
 public:
  void u32(uint32_t v) {
    const unsigned char b[4] = {uint8_t(v & 0xff), uint8_t(v >> 8 & 0xff),
                                uint8_t(v >> 16 & 0xff), uint8_t(v >> 24 & 0xff)};
    bytes.insert(bytes.end(), b, b + 4);
  }
  void u64(uint64_t v) {
    u32(uint32_t(v & 0xffffffffull));
    u32(uint32_t(v >> 32));
  }
  void raw(const void* p, size_t n) {
    const unsigned char* b = static_cast<const unsigned char*>(p);
    bytes.insert(bytes.end(), b, b + n);
  }
  std::vector<unsigned char> bytes;
};

class ByteReader {
 public:
  ByteReader(const unsigned char* p, size_t n) : p_(p), n_(n) {}
  size_t pos() const { return pos_; }
  uint32_t u32(const char* what) {
    need(4, what);
    const uint32_t v = uint32_t(p_[pos_]) | uint32_t(p_[pos_ + 1]) << 8 |
                       uint32_t(p_[pos_ + 2]) << 16 |
                       uint32_t(p_[pos_ + 3]) << 24;
    pos_ += 4;
    return v;
  }
  uint64_t u64(const char* what) {
    const uint64_t lo = u32(what);
    return lo | uint64_t(u32(what)) << 32;
  }
  std::string str(size_t n, const char* what) {
    need(n, what);
    std::string s(reinterpret_cast<const char*>(p_ + pos_), n);
    pos_ += n;
    return s;
  }
  void floats(float* out, size_t count, const char* what) {
    need(count * sizeof(float), what);
    std::memcpy(out, p_ + pos_, count * sizeof(float));
    pos_ += count * sizeof(float);
  }
  void expect_end() {
    if (pos_ != n_)
      throw format_error("checkpoint has trailing bytes", pos_);
  }

 private:
  void need(size_t n, const char* what) {
    if (n_ - pos_ < n)
      throw format_error(std::string("checkpoint truncated in ") + what, n_);
  }
  const unsigned char* p_;
  size_t n_;
  size_t pos_ = 0;
};

inline void write_checkpoint_file(const std::string& path, uint32_t kind,
                                  uint64_t step, uint64_t seed, uint64_t nfe,
                                  const std::string& config_text,
                                  const ParamList& params) {
  ByteWriter w;
  w.raw(kCheckpointMagic, 4);
  w.u32(kCheckpointVersion);
  w.u32(kind);
  w.u64(step);
  w.u64(seed);
  w.u64(nfe);
  w.u32(uint32_t(config_text.size()));
  w.raw(config_text.data(), config_text.size());
  w.u32(uint32_t(params.size()));
  for (const auto& [name, p] : params) {
    w.u32(uint32_t(name.size()));
    w.raw(name.data(), name.size());
    w.u32(uint32_t(p->w.shape.size()));
    for (int d : p->w.shape) w.u32(uint32_t(d));
    w.raw(p->w.v.data(), p->w.v.size() * sizeof(float));
  }
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw io_error("cannot open '" + path + "' for writing");
  f.write(reinterpret_cast<const char*>(w.bytes.data()),
          std::streamsize(w.bytes.size()));
  if (!f) throw io_error("write failed for '" + path + "'");
}

// Reads magic/version/kind/counters/config; leaves the reader at the array
// table. kind mismatch and version mismatch are format errors.
inline CheckpointHeader read_checkpoint_header(ByteReader& r,
                                               uint32_t expected_kind,
                                               const char* expected_name) {
  const std::string magic = r.str(4, "magic");
  if (std::memcmp(magic.data(), kCheckpointMagic, 4) != 0)
    throw format_error("not a checkpoint file (bad magic)", 0);
  const size_t ver_at = r.pos();
  const uint32_t version = r.u32("version");
  if (version != kCheckpointVersion)
    throw format_error("unsupported checkpoint format version " +
                           std::to_string(version) + " (this build reads version " +
                           std::to_string(kCheckpointVersion) + ")",
                       ver_at);
  const size_t kind_at = r.pos();
  CheckpointHeader h;
  h.kind = r.u32("kind");
  if (h.kind != expected_kind)
    throw format_error(std::string("checkpoint holds the wrong network kind "
                                   "(expected ") +
                           expected_name + ")",
                       kind_at);
  h.step = r.u64("step");
  h.seed = r.u64("seed");
  h.nfe = r.u64("nfe");
  const uint32_t clen = r.u32("config length");
  h.config_text_offset = r.pos();
  h.config_text = r.str(clen, "config text");
  return h;
}

// Fills an already-built parameter set from the array table; every array
// must match a parameter by name and shape, with none missing or extra.
inline void read_checkpoint_arrays(ByteReader& r, const ParamList& params) {
  std::map<std::string, Param*> want;
  for (const auto& [name, p] : params) want[name] = p;
  const uint32_t count = r.u32("array count");
  for (uint32_t a = 0; a < count; ++a) {
    const uint32_t nlen = r.u32("array name length");
    const size_t name_at = r.pos();
    const std::string name = r.str(nlen, "array name");
    auto it = want.find(name);
    if (it == want.end())
      throw format_error("unexpected array '" + name + "'", name_at);
    Param* p = it->second;
    want.erase(it);
    const uint32_t ndim = r.u32("array rank");
    std::vector<int> dims(ndim);
    for (uint32_t d = 0; d < ndim; ++d) dims[d] = int(r.u32("array dims"));
    if (dims != p->w.shape)
      throw format_error("array '" + name + "' has the wrong shape", name_at);
    r.floats(p->w.v.data(), p->w.v.size(), "array data");
  }
  if (!want.empty())
    throw format_error("checkpoint is missing array '" +
                           want.begin()->first + "'",
                       r.pos());
  r.expect_end();
}

inline std::vector<unsigned char> slurp_binary(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw io_error("cannot open '" + path + "'");
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(f)),
                                   std::istreambuf_iterator<char>());
  if (f.bad()) throw io_error("read failed for '" + path + "'");
  return bytes;
}

}  // namespace detail

// --- noise-prediction network (teacher) checkpoints ---------------------------

inline void save_teacher(const std::string& path, Network& net, uint64_t step) {
  detail::write_checkpoint_file(path, /*kind=*/0, step, net.seed, /*nfe=*/0,
                                net.cfg.serialize(), net.params());
}

struct TeacherCheckpoint {
  Network net;
  uint64_t step = 0;
};

inline TeacherCheckpoint load_teacher(const std::string& path) {
  const std::vector<unsigned char> bytes = detail::slurp_binary(path);
  detail::ByteReader r(bytes.data(), bytes.size());
  const detail::CheckpointHeader h =
      detail::read_checkpoint_header(r, 0, "a noise-prediction network");
  const NetworkConfig cfg =
      parse_network_config(h.config_text, h.config_text_offset);
  TeacherCheckpoint out{build_teacher(cfg, h.seed), h.step};
  detail::read_checkpoint_arrays(r, out.net.params());
  return out;
}

// --- single-step predictor checkpoints -----------------------------------------

inline void save_predictor(const std::string& path, PredictorState& state) {
  detail::write_checkpoint_file(path, /*kind=*/1, uint64_t(state.step),
                                state.seed, uint64_t(state.nfe),
                                state.config.serialize(), state.params());
}

inline PredictorState load_predictor(const std::string& path) {
  const std::vector<unsigned char> bytes = detail::slurp_binary(path);
  detail::ByteReader r(bytes.data(), bytes.size());
  const detail::CheckpointHeader h =
      detail::read_checkpoint_header(r, 1, "a single-step predictor");
  const NetworkConfig cfg =
      parse_network_config(h.config_text, h.config_text_offset);
  PredictorState st{cfg,
                    Network(cfg, cfg.output_channels, /*timestep_free=*/true,
                            h.seed),
                    detail::make_heads(cfg, h.seed),
                    int64_t(h.step),
                    h.seed,
                    int64_t(h.nfe)};
  detail::read_checkpoint_arrays(r, st.params());
  return st;
}

}  // namespace dp
