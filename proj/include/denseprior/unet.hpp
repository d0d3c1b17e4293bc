#pragma once

// Encoder–decoder network with residual blocks, group normalization, and a
// timestep-embedding pathway. One class serves both roles: the noise
// predictor (fed a sinusoidal embedding of its query timestep) and the
// single-step predictor (timestep-free: the same pathway is fed one learned
// embedding vector so weights copied from the noise predictor keep their
// meaning). Decoder block outputs can be tapped as feature bundles for
// representation alignment.
//
// Layout for depth_levels = L, base channels c (ch(i) = c << i):
//   stem  conv3x3 (3 -> c)
//   enc_0 res(c -> c) at full resolution            [skip 0]
//   enc_i pool2 then res(ch(i-1) -> ch(i))          [skip i, i < L-1]
//   dec_0 res(ch(L-1) -> ch(L-1)) at the bottom     [tap 0]
//   dec_j up2, concat skip_{L-1-j}, res(-> ch(L-1-j)) [tap j]
//   head  groupnorm -> silu -> conv3x3 (c -> out), final conv zero-init
//
// All passes are single-item (C, H, W); batching is an outer loop.

#include <cstdint>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "denseprior/errors.hpp"
#include "denseprior/nn.hpp"
#include "denseprior/rng.hpp"
#include "denseprior/taps.hpp"
#include "denseprior/tensor.hpp"

namespace dp {

// Architecture and output parameterization of one network build.
struct NetworkConfig {
  int input_height = 64;
  int input_width = 64;
  int base_channels = 4;
  int depth_levels = 3;
  std::vector<int> tap_indices = {0, 1, 2};
  int output_channels = 3;
  int timestep_embed_dim = 32;
  // Depth decode: the head's bounded output m in (0,1) maps to metric depth
  // d = depth_scale * m / (1 - m); depth_scale is the depth at m = 0.5.
  double depth_scale = 4.0;

  int channels_at(int level) const { return base_channels << level; }

  void validate() const {
    if (depth_levels < 2 || depth_levels > 6)
      throw config_error("depth_levels must be in [2, 6]");
    if (base_channels < 1) throw config_error("base_channels must be >= 1");
    const int down = 1 << (depth_levels - 1);
    if (input_height < 2 * down || input_width < 2 * down ||
        input_height % down != 0 || input_width % down != 0)
      throw config_error(
          "input size must be a multiple of 2^(depth_levels-1) and leave the "
          "deepest level at least 2 pixels");
    if (tap_indices.empty()) throw config_error("tap_indices must be nonempty");
    for (size_t i = 0; i < tap_indices.size(); ++i) {
      if (tap_indices[i] < 0 || tap_indices[i] >= depth_levels)
        throw config_error("tap index " + std::to_string(tap_indices[i]) +
                           " outside decoder range [0, " +
                           std::to_string(depth_levels - 1) + "]");
      if (i > 0 && tap_indices[i] <= tap_indices[i - 1])
        throw config_error("tap_indices must be strictly increasing");
    }
    if (output_channels != 1 && output_channels != 3)
      throw config_error("output_channels must be 1 or 3");
    if (timestep_embed_dim < 4 || timestep_embed_dim % 2 != 0)
      throw config_error("timestep_embed_dim must be even and >= 4");
    if (!(depth_scale > 0.0)) throw config_error("depth_scale must be > 0");
  }

  std::string serialize() const {
    std::ostringstream os;
    os << "input_height=" << input_height << "\n";
    os << "input_width=" << input_width << "\n";
    os << "base_channels=" << base_channels << "\n";
    os << "depth_levels=" << depth_levels << "\n";
    os << "tap_indices=";
    for (size_t i = 0; i < tap_indices.size(); ++i)
      os << (i ? "," : "") << tap_indices[i];
    os << "\n";
    os << "output_channels=" << output_channels << "\n";
    os << "timestep_embed_dim=" << timestep_embed_dim << "\n";
    os.precision(17);
    os << "depth_scale=" << depth_scale << "\n";
    return os.str();
  }
};

// Backbone compatibility: everything that shapes the weight arrays except
// the task head width (the head is rebuilt per task) and the depth decode
// constant (a pure output mapping).
inline bool architecture_equals(const NetworkConfig& a, const NetworkConfig& b) {
  return a.input_height == b.input_height && a.input_width == b.input_width &&
         a.base_channels == b.base_channels &&
         a.depth_levels == b.depth_levels && a.tap_indices == b.tap_indices &&
         a.timestep_embed_dim == b.timestep_embed_dim;
}

// Parses the serialize() format. Every key must appear exactly once;
// unknown keys are rejected. `base` offsets error positions when the text
// is embedded in a larger file.
inline NetworkConfig parse_network_config(const std::string& text,
                                          size_t base = 0) {
  NetworkConfig cfg;
  std::map<std::string, int> seen;
  size_t pos = 0;
  auto fail = [&](const std::string& what, size_t at) {
    throw format_error("network config: " + what, base + at);
  };
  while (pos < text.size()) {
    size_t eol = text.find('\n', pos);
    if (eol == std::string::npos) eol = text.size();
    const std::string line = text.substr(pos, eol - pos);
    const size_t line_at = pos;
    pos = eol + 1;
    if (line.empty()) continue;
    const size_t eq = line.find('=');
    if (eq == std::string::npos || eq == 0) fail("expected key=value", line_at);
    const std::string key = line.substr(0, eq);
    const std::string val = line.substr(eq + 1);
    if (++seen[key] > 1) fail("duplicate key '" + key + "'", line_at);
    auto parse_int = [&](const std::string& s) {
      size_t used = 0;
      int v = 0;
      try {
        v = std::stoi(s, &used);
      } catch (const std::exception&) {
        fail("bad integer '" + s + "'", line_at);
      }
      if (used != s.size()) fail("bad integer '" + s + "'", line_at);
      return v;
    };
    if (key == "input_height") cfg.input_height = parse_int(val);
    else if (key == "input_width") cfg.input_width = parse_int(val);
    else if (key == "base_channels") cfg.base_channels = parse_int(val);
    else if (key == "depth_levels") cfg.depth_levels = parse_int(val);
    else if (key == "output_channels") cfg.output_channels = parse_int(val);
    else if (key == "timestep_embed_dim") cfg.timestep_embed_dim = parse_int(val);
    else if (key == "depth_scale") {
      size_t used = 0;
      try {
        cfg.depth_scale = std::stod(val, &used);
      } catch (const std::exception&) {
        fail("bad number '" + val + "'", line_at);
      }
      if (used != val.size()) fail("bad number '" + val + "'", line_at);
    } else if (key == "tap_indices") {
      cfg.tap_indices.clear();
      size_t p = 0;
      while (p <= val.size()) {
        size_t comma = val.find(',', p);
        if (comma == std::string::npos) comma = val.size();
        cfg.tap_indices.push_back(parse_int(val.substr(p, comma - p)));
        p = comma + 1;
      }
    } else {
      fail("unknown key '" + key + "'", line_at);
    }
  }
  const char* required[] = {"input_height",    "input_width",
                            "base_channels",   "depth_levels",
                            "tap_indices",     "output_channels",
                            "timestep_embed_dim", "depth_scale"};
  for (const char* k : required)
    if (!seen.count(k)) fail(std::string("missing key '") + k + "'", text.size());
  cfg.validate();
  return cfg;
}

// Residual block: x -> gn -> silu -> conv3 -> (+ per-channel embedding)
//                   -> gn -> silu -> conv3, plus identity/1x1 shortcut.
struct ResBlock {
  int cin = 0, cout = 0;
  GroupNormBlock gn1, gn2;
  SiluOp silu1, silu2;
  Conv3Block conv1, conv2;
  LinearBlock emb;  // embedding vector -> per-channel bias
  bool has_skip = false;
  Conv1Block skip;

  void init(Rng& rng, int cin_, int cout_, int embed_dim) {
    cin = cin_;
    cout = cout_;
    gn1.init(cin);
    conv1.init(rng, cin, cout);
    emb.init(rng, embed_dim, cout);
    gn2.init(cout);
    conv2.init(rng, cout, cout);
    has_skip = (cin != cout);
    if (has_skip) skip.init(rng, cin, cout);
  }

  void collect(const std::string& prefix, ParamList& out) {
    gn1.collect(prefix + ".gn1", out);
    conv1.collect(prefix + ".conv1", out);
    emb.collect(prefix + ".emb", out);
    gn2.collect(prefix + ".gn2", out);
    conv2.collect(prefix + ".conv2", out);
    if (has_skip) skip.collect(prefix + ".skip", out);
  }

  TensorF forward(const TensorF& x, const std::vector<float>& embed_act) {
    TensorF h = conv1.forward(silu1.forward(gn1.forward(x)));
    const std::vector<float> e = emb.forward(embed_act);
    const size_t hw = size_t(h.shape[1]) * h.shape[2];
    for (int c = 0; c < cout; ++c) {
      float* p = h.v.data() + size_t(c) * hw;
      const float ec = e[size_t(c)];
      for (size_t i = 0; i < hw; ++i) p[i] += ec;
    }
    TensorF y = conv2.forward(silu2.forward(gn2.forward(h)));
    if (has_skip) {
      const TensorF s = skip.forward(x);
      for (size_t i = 0; i < y.size(); ++i) y.v[i] += s.v[i];
    } else {
      for (size_t i = 0; i < y.size(); ++i) y.v[i] += x.v[i];
    }
    return y;
  }

  // Accumulates the embedding-path gradient into dembed_act.
  TensorF backward(const TensorF& dy, std::vector<float>& dembed_act) {
    TensorF dh = gn2.backward(silu2.backward(conv2.backward(dy)));
    const size_t hw = size_t(dh.shape[1]) * dh.shape[2];
    std::vector<float> de(size_t(cout), 0.0f);
    for (int c = 0; c < cout; ++c) {
      const float* p = dh.v.data() + size_t(c) * hw;
      double s = 0.0;
      for (size_t i = 0; i < hw; ++i) s += p[i];
      de[size_t(c)] = float(s);
    }
    const std::vector<float> dea = emb.backward(de);
    for (size_t i = 0; i < dembed_act.size(); ++i) dembed_act[i] += dea[i];
    TensorF dx = gn1.backward(silu1.backward(conv1.backward(dh)));
    if (has_skip) {
      const TensorF ds = skip.backward(dy);
      for (size_t i = 0; i < dx.size(); ++i) dx.v[i] += ds.v[i];
    } else {
      for (size_t i = 0; i < dx.size(); ++i) dx.v[i] += dy.v[i];
    }
    return dx;
  }
};

namespace detail {

inline TensorF concat_channels(const TensorF& a, const TensorF& b) {
  if (a.shape[1] != b.shape[1] || a.shape[2] != b.shape[2])
    throw shape_error("channel concat: spatial size mismatch");
  TensorF y({a.shape[0] + b.shape[0], a.shape[1], a.shape[2]});
  std::copy(a.v.begin(), a.v.end(), y.v.begin());
  std::copy(b.v.begin(), b.v.end(), y.v.begin() + ptrdiff_t(a.size()));
  return y;
}

inline std::pair<TensorF, TensorF> split_channels(const TensorF& y, int c_first) {
  TensorF a({c_first, y.shape[1], y.shape[2]});
  TensorF b({y.shape[0] - c_first, y.shape[1], y.shape[2]});
  std::copy(y.v.begin(), y.v.begin() + ptrdiff_t(a.size()), a.v.begin());
  std::copy(y.v.begin() + ptrdiff_t(a.size()), y.v.end(), b.v.begin());
  return {std::move(a), std::move(b)};
}

}  // namespace detail

// Prediction plus the tapped decoder features (config tap order).
struct NetOut {
  TensorF pred;
  std::vector<TensorF> taps;
};

class Network {
 public:
  NetworkConfig cfg;
  int out_channels = 3;
  bool timestep_free = false;
  uint64_t seed = 0;

  Network(const NetworkConfig& config, int out_channels_, bool timestep_free_,
          uint64_t seed_)
      : cfg(config),
        out_channels(out_channels_),
        timestep_free(timestep_free_),
        seed(seed_) {
    cfg.validate();
    const int L = cfg.depth_levels;
    const int E = cfg.timestep_embed_dim;
    Rng rng(seed);
    temb_lin1.init(rng, E, E);
    temb_lin2.init(rng, E, E);
    if (timestep_free) {
      null_embed.init_shape({E});
      const std::vector<float> e0 = sinusoidal_embedding(0, E);
      std::copy(e0.begin(), e0.end(), null_embed.w.v.begin());
    }
    stem.init(rng, 3, cfg.channels_at(0));
    enc.resize(size_t(L));
    for (int i = 0; i < L; ++i)
      enc[size_t(i)].init(rng, cfg.channels_at(i > 0 ? i - 1 : 0),
                          cfg.channels_at(i), E);
    dec.resize(size_t(L));
    dec[0].init(rng, cfg.channels_at(L - 1), cfg.channels_at(L - 1), E);
    for (int j = 1; j < L; ++j)
      dec[size_t(j)].init(rng,
                          cfg.channels_at(L - j) + cfg.channels_at(L - 1 - j),
                          cfg.channels_at(L - 1 - j), E);
    head_gn.init(cfg.channels_at(0));
    // Zero-initialized final convolution: the freshly built network predicts
    // exactly zero, a standard stable start for a residual objective.
    head_conv.init(rng, cfg.channels_at(0), out_channels, 0.0);
  }

  // Redraws the prediction head. A swapped-in task head uses a small nonzero
  // scale: bounded output parameterizations (sigmoid) are degenerate for the
  // scale-shift-invariant depth statistics when the map is exactly constant.
  void reinit_head(Rng& rng, double scale) {
    head_conv.init(rng, cfg.channels_at(0), out_channels, scale);
  }

  ParamList params() {
    ParamList out;
    temb_lin1.collect("temb.lin1", out);
    temb_lin2.collect("temb.lin2", out);
    if (timestep_free) out.emplace_back("null.embed", &null_embed);
    stem.collect("stem", out);
    for (size_t i = 0; i < enc.size(); ++i)
      enc[i].collect("enc" + std::to_string(i), out);
    for (size_t j = 0; j < dec.size(); ++j)
      dec[j].collect("dec" + std::to_string(j), out);
    head_gn.collect("head.gn", out);
    head_conv.collect("head.conv", out);
    return out;
  }

  // Forward pass; `t` is ignored when the network is timestep-free.
  // Caches everything backward() needs, so backward must directly follow
  // its forward (no interleaving of passes on one instance).
  NetOut forward(const TensorF& x, int t) {
    if (x.ndim() != 3 || x.shape[0] != 3 || x.shape[1] != cfg.input_height ||
        x.shape[2] != cfg.input_width)
      throw shape_error("network input must be (3, " +
                        std::to_string(cfg.input_height) + ", " +
                        std::to_string(cfg.input_width) + ")");
    const int L = cfg.depth_levels;
    const int E = cfg.timestep_embed_dim;
    std::vector<float> base;
    if (timestep_free) {
      base = null_embed.w.v;
    } else {
      if (t < 0) throw range_error("negative timestep");
      base = sinusoidal_embedding(t, E);
    }
    embed_act_ = temb_silu_out.forward(
        temb_lin2.forward(temb_silu_mid.forward(temb_lin1.forward(base))));
    TensorF f = stem.forward(x);
    skips_.clear();
    for (int i = 0; i < L; ++i) {
      if (i > 0) f = avgpool2_forward(f);
      f = enc[size_t(i)].forward(f, embed_act_);
      if (i < L - 1) skips_.push_back(f);
    }
    NetOut out;
    out.taps.resize(cfg.tap_indices.size());
    TensorF g = dec[0].forward(f, embed_act_);
    stash_tap(0, g, out);
    for (int j = 1; j < L; ++j) {
      g = detail::concat_channels(upsample2_forward(g), skips_[size_t(L - 1 - j)]);
      g = dec[size_t(j)].forward(g, embed_act_);
      stash_tap(j, g, out);
    }
    out.pred = head_conv.forward(head_silu.forward(head_gn.forward(g)));
    return out;
  }

  // Backpropagates d(loss)/d(prediction) and/or per-tap gradients (config
  // tap order), accumulating into every parameter's .g. Gradients w.r.t.
  // the input image are not produced (inputs are data).
  void backward(const TensorF* grad_pred,
                const std::vector<TensorF>* tap_grads) {
    const int L = cfg.depth_levels;
    if (tap_grads && tap_grads->size() != cfg.tap_indices.size())
      throw usage_error("tap gradient count does not match tap_indices");
    std::vector<float> dembed(embed_act_.size(), 0.0f);
    TensorF dg;
    if (grad_pred) {
      if (grad_pred->ndim() != 3 || grad_pred->shape[0] != out_channels)
        throw shape_error("prediction gradient has wrong channel count");
      dg = head_gn.backward(head_silu.backward(head_conv.backward(*grad_pred)));
    } else {
      dg = TensorF({cfg.channels_at(0), cfg.input_height, cfg.input_width});
    }
    std::vector<TensorF> dskip(size_t(L - 1));
    for (int j = L - 1; j >= 1; --j) {
      add_tap_grad(j, tap_grads, dg);
      TensorF dcat = dec[size_t(j)].backward(dg, dembed);
      auto [dup, dsk] = detail::split_channels(dcat, cfg.channels_at(L - j));
      dskip[size_t(L - 1 - j)] = std::move(dsk);
      dg = upsample2_backward(dup);
    }
    add_tap_grad(0, tap_grads, dg);
    TensorF df = dec[0].backward(dg, dembed);
    for (int i = L - 1; i >= 0; --i) {
      TensorF din = enc[size_t(i)].backward(df, dembed);
      if (i > 0) {
        df = avgpool2_backward(din);
        const TensorF& sk = dskip[size_t(i - 1)];
        for (size_t q = 0; q < df.size(); ++q) df.v[q] += sk.v[q];
      } else {
        stem.backward(din, /*need_dx=*/false);
      }
    }
    std::vector<float> dbase = temb_lin1.backward(temb_silu_mid.backward(
        temb_lin2.backward(temb_silu_out.backward(dembed))));
    if (timestep_free)
      for (size_t i = 0; i < dbase.size(); ++i) null_embed.g.v[i] += dbase[i];
  }

 private:
  LinearBlock temb_lin1, temb_lin2;
  SiluVecOp temb_silu_mid, temb_silu_out;
  Param null_embed;
  Conv3Block stem;
  std::vector<ResBlock> enc, dec;
  GroupNormBlock head_gn;
  SiluOp head_silu;
  Conv3Block head_conv;
  std::vector<float> embed_act_;
  std::vector<TensorF> skips_;

  void stash_tap(int j, const TensorF& g, NetOut& out) const {
    for (size_t p = 0; p < cfg.tap_indices.size(); ++p)
      if (cfg.tap_indices[p] == j) out.taps[p] = g;
  }

  void add_tap_grad(int j, const std::vector<TensorF>* tap_grads,
                    TensorF& dg) const {
    if (!tap_grads) return;
    for (size_t p = 0; p < cfg.tap_indices.size(); ++p)
      if (cfg.tap_indices[p] == j) {
        const TensorF& tg = (*tap_grads)[p];
        if (!same_shape(tg, dg))
          throw shape_error("tap gradient " + std::to_string(p) +
                            " has wrong shape");
        for (size_t q = 0; q < dg.size(); ++q) dg.v[q] += tg.v[q];
      }
  }
};

// Noise-prediction network: 3 output channels (an epsilon estimate),
// timestep fed as a sinusoidal embedding.
inline Network build_teacher(const NetworkConfig& config, uint64_t seed) {
  config.validate();
  return Network(config, 3, /*timestep_free=*/false, seed);
}

}  // namespace dp
