#pragma once

// Timestep-conditioned projection heads and the single-step predictor state.
//
// The predictor runs once on a clean image and exposes decoder features;
// a lightweight head per tap re-expresses those clean features in the
// representation space the noise predictor would produce at a given
// timestep: 1x1 mix -> per-channel scale/shift driven by a sinusoidal
// embedding of t -> silu -> 1x1 mix. Heads are training-only equipment and
// are dropped at inference.

#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "denseprior/diffusion.hpp"
#include "denseprior/errors.hpp"
#include "denseprior/nn.hpp"
#include "denseprior/rng.hpp"
#include "denseprior/taps.hpp"
#include "denseprior/tensor.hpp"
#include "denseprior/unet.hpp"

namespace dp {

// Shape-preserving map over one (C, H, W) tap, modulated by a timestep.
struct ProjectionHead {
  int channels = 0, embed_dim = 0;
  Conv1Block conv_in, conv_out;
  LinearBlock lin1, lin2;  // embed_dim -> embed_dim -> 2 * channels
  SiluVecOp silu_vec;
  SiluOp silu_map;
  TensorF f_cache;                 // conv_in output, needed for scale grads
  std::vector<float> gamma_cache;  // per-channel scale offsets at last t

  void init(Rng& rng, int channels_, int embed_dim_) {
    channels = channels_;
    embed_dim = embed_dim_;
    conv_in.init(rng, channels, channels);
    lin1.init(rng, embed_dim, embed_dim);
    lin2.init(rng, embed_dim, 2 * channels);
    conv_out.init(rng, channels, channels);
  }

  void collect(const std::string& prefix, ParamList& out) {
    conv_in.collect(prefix + ".in", out);
    lin1.collect(prefix + ".lin1", out);
    lin2.collect(prefix + ".lin2", out);
    conv_out.collect(prefix + ".out", out);
  }

  TensorF forward(const TensorF& tap, int t) {
    if (tap.ndim() != 3 || tap.shape[0] != channels)
      throw shape_error("projection head expects (" +
                        std::to_string(channels) + ", h, w) taps");
    const std::vector<float> gb = lin2.forward(
        silu_vec.forward(lin1.forward(sinusoidal_embedding(t, embed_dim))));
    gamma_cache.assign(gb.begin(), gb.begin() + channels);
    f_cache = conv_in.forward(tap);
    TensorF m(f_cache.shape);
    const size_t hw = size_t(m.shape[1]) * m.shape[2];
    for (int c = 0; c < channels; ++c) {
      const float scale = 1.0f + gamma_cache[size_t(c)];
      const float shift = gb[size_t(channels + c)];
      const float* fp = f_cache.v.data() + size_t(c) * hw;
      float* mp = m.v.data() + size_t(c) * hw;
      for (size_t i = 0; i < hw; ++i) mp[i] = fp[i] * scale + shift;
    }
    return conv_out.forward(silu_map.forward(m));
  }

  // Accumulates parameter gradients; returns d(loss)/d(tap).
  TensorF backward(const TensorF& dout) {
    TensorF dm = silu_map.backward(conv_out.backward(dout));
    const size_t hw = size_t(dm.shape[1]) * dm.shape[2];
    TensorF df(f_cache.shape);
    std::vector<float> dgb(size_t(2 * channels), 0.0f);
    for (int c = 0; c < channels; ++c) {
      const float scale = 1.0f + gamma_cache[size_t(c)];
      const float* dmp = dm.v.data() + size_t(c) * hw;
      const float* fp = f_cache.v.data() + size_t(c) * hw;
      float* dfp = df.v.data() + size_t(c) * hw;
      double dgamma = 0.0, dbeta = 0.0;
      for (size_t i = 0; i < hw; ++i) {
        dfp[i] = dmp[i] * scale;
        dgamma += double(dmp[i]) * fp[i];
        dbeta += dmp[i];
      }
      dgb[size_t(c)] = float(dgamma);
      dgb[size_t(channels + c)] = float(dbeta);
    }
    lin1.backward(silu_vec.backward(lin2.backward(dgb)));
    return conv_in.backward(df);
  }
};

// Trainable state of the single-step predictor: the timestep-free network,
// one projection head per tap, and bookkeeping counters.
struct PredictorState {
  NetworkConfig config;
  Network student;
  std::vector<ProjectionHead> heads;  // one per tap index, config order
  int64_t step = 0;
  uint64_t seed = 0;
  int64_t nfe = 0;  // network function evaluations (student forwards)

  ParamList params() {
    ParamList out = student.params();
    for (size_t p = 0; p < heads.size(); ++p)
      heads[p].collect("proj" + std::to_string(config.tap_indices[p]), out);
    return out;
  }
};

namespace detail {

// Head initialization draws from streams derived from the build seed, so
// head count/order never perturbs the network's own initialization.
inline std::vector<ProjectionHead> make_heads(const NetworkConfig& cfg,
                                              uint64_t seed) {
  const Rng base(seed);
  std::vector<ProjectionHead> heads(cfg.tap_indices.size());
  for (size_t p = 0; p < heads.size(); ++p) {
    const int k = cfg.tap_indices[p];
    Rng hr = base.child(0x70726f6aull + uint64_t(k));  // "proj" + tap index
    heads[p].init(hr, cfg.channels_at(cfg.depth_levels - 1 - k),
                  cfg.timestep_embed_dim);
  }
  return heads;
}

}  // namespace detail

inline int expected_output_channels(const std::string& task) {
  if (task == "depth" || task == "matting") return 1;
  if (task == "normal") return 3;
  throw config_error("unknown task '" + task + "'");
}

// Refuses a network/task pairing whose head width cannot serve the task.
inline void require_task_compatible(const NetworkConfig& cfg,
                                    const std::string& task) {
  const int want = expected_output_channels(task);
  if (cfg.output_channels != want)
    throw config_error("task '" + task + "' needs " + std::to_string(want) +
                       " output channels, checkpoint has " +
                       std::to_string(cfg.output_channels));
}

// Scale for the redrawn task head: small enough that bounded outputs start
// near the neutral midpoint, nonzero so no output map is exactly constant
// (scale-shift-invariant depth statistics are undefined on constant maps).
inline constexpr double kTaskHeadInitScale = 0.05;

// Builds the single-step predictor from a noise-prediction network:
// backbone weights copied, the timestep pathway kept but fed a learned
// constant embedding (initialized to the t = 0 embedding), the prediction
// head redrawn for the task's channel count, and fresh projection heads.
inline PredictorState build_student(const NetworkConfig& config,
                                    Network& teacher, uint64_t seed) {
  config.validate();
  if (!architecture_equals(config, teacher.cfg))
    throw config_error("student and teacher configs are not architecture-compatible");
  PredictorState st{config,
                    Network(config, config.output_channels,
                            /*timestep_free=*/true, seed),
                    detail::make_heads(config, seed),
                    /*step=*/0, seed, /*nfe=*/0};
  ParamList tp = teacher.params();
  std::map<std::string, Param*> by_name;
  for (auto& [name, p] : tp) by_name[name] = p;
  for (auto& [name, p] : st.student.params()) {
    if (name == "null.embed") continue;              // learned constant, fresh
    if (name.rfind("head.conv.", 0) == 0) continue;  // task head, redrawn below
    auto it = by_name.find(name);
    if (it == by_name.end() || it->second->w.shape != p->w.shape)
      throw config_error("teacher is missing backbone array '" + name + "'");
    p->w.v = it->second->w.v;
  }
  Rng head_rng = Rng(seed).child(0x68656164ull);  // decoupled from body init
  st.student.reinit_head(head_rng, kTaskHeadInitScale);
  return st;
}

// One clean-image evaluation: prediction plus decoder taps. Counts one
// network function evaluation. Deterministic; consumes no timestep.
inline std::pair<TensorF, TapBundle> student_forward(PredictorState& state,
                                                     const TensorF& x) {
  if (x.ndim() != 3 || x.shape[0] != 3 ||
      x.shape[1] != state.config.input_height ||
      x.shape[2] != state.config.input_width)
    throw shape_error("predictor input must be (3, " +
                      std::to_string(state.config.input_height) + ", " +
                      std::to_string(state.config.input_width) + ")");
  for (float v : x.v)
    if (!(v >= -1.0f - 1e-6f && v <= 1.0f + 1e-6f))
      throw range_error("predictor input values must lie in [-1, 1]");
  state.nfe += 1;
  NetOut o = state.student.forward(x, 0);
  TapBundle b;
  b.tag = TapTag::student_clean;
  b.t = -1;
  b.taps = std::move(o.taps);
  return {std::move(o.pred), std::move(b)};
}

// Noises the clean image to timestep t and runs the noise predictor,
// returning its decoder taps (the expert view at that noise level).
// The caller never steps these weights; the pass only reads them.
inline TapBundle teacher_forward(Network& teacher, const TensorF& x,
                                 const TensorF& eps, int t,
                                 const NoiseSchedule& sched) {
  require_timestep(sched, t);
  const TensorF z = forward_noise(x, t, eps, sched);
  NetOut o = teacher.forward(z, t);
  TapBundle b;
  b.tag = TapTag::teacher_at_t;
  b.t = t;
  b.taps = std::move(o.taps);
  return b;
}

// Re-expresses clean-image taps in the timestep-t representation space.
inline TapBundle project(PredictorState& state, const TapBundle& taps, int t) {
  if (taps.tag != TapTag::student_clean)
    throw usage_error("project expects student-clean taps");
  if (t < 0) throw range_error("projection timestep must be >= 0");
  if (taps.taps.size() != state.heads.size())
    throw usage_error("tap count does not match projection head count");
  TapBundle out;
  out.tag = TapTag::student_clean;
  out.t = -1;
  out.taps.resize(taps.taps.size());
  for (size_t p = 0; p < taps.taps.size(); ++p)
    out.taps[p] = state.heads[p].forward(taps.taps[p], t);
  return out;
}

// Backward of project(): per-tap output gradients in, per-tap input
// gradients out; head parameter gradients accumulate in place.
inline std::vector<TensorF> project_backward(
    PredictorState& state, const std::vector<TensorF>& dprojected) {
  if (dprojected.size() != state.heads.size())
    throw usage_error("gradient count does not match projection head count");
  std::vector<TensorF> dtaps(dprojected.size());
  for (size_t p = 0; p < dprojected.size(); ++p)
    dtaps[p] = state.heads[p].backward(dprojected[p]);
  return dtaps;
}

}  // namespace dp
