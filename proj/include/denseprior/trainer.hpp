#pragma once

// Two-stage training pipeline.
//
// Stage 1 (pretrain): the noise predictor learns to recover the injected
// noise from forward-noised synthetic RGB at uniformly sampled timesteps.
//
// Stage 2 (predict-train): the single-step predictor trains jointly — its
// clean-image decoder features, pushed through timestep-conditioned
// projection heads, align with the frozen noise predictor's features at a
// per-item random timestep (negative-cosine distance), while the prediction
// head carries the task loss. Objective per step: agg + lambda * task,
// averaged over the batch. Only student and head parameters update.
//
// Everything is seeded and single-threaded: same seed + config => identical
// parameter bytes and an identical loss log.

#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "denseprior/checkpoint.hpp"
#include "denseprior/datamix.hpp"
#include "denseprior/diffusion.hpp"
#include "denseprior/errors.hpp"
#include "denseprior/losses.hpp"
#include "denseprior/nn.hpp"
#include "denseprior/projection.hpp"
#include "denseprior/rng.hpp"
#include "denseprior/unet.hpp"

namespace dp {

struct TrainConfig {
  std::string stage;           // "pretrain" | "predict-train"
  std::string task = "depth";  // "depth" | "normal" | "matting"
  int steps = 0;
  int batch_size = 32;
  double learning_rate = 0.0;  // 0 = stage default (1e-4 pretrain, 1e-5 joint)
  int warmup_steps = 0;
  double lambda = 1.0;
  uint64_t seed = 0;
  int schedule_T = 100;
  int eval_every = 0;  // advisory cadence for callers; the loop itself
                       // neither evaluates nor checkpoints mid-run
  bool identity_heads = false;  // ablation: align raw taps, bypass heads

  double effective_lr() const {
    if (learning_rate > 0.0) return learning_rate;
    return stage == "pretrain" ? 1e-4 : 1e-5;
  }

  void validate() const {
    if (stage != "pretrain" && stage != "predict-train")
      throw config_error("stage must be 'pretrain' or 'predict-train'");
    if (task != "depth" && task != "normal" && task != "matting")
      throw config_error("task must be depth, normal, or matting");
    if (steps <= 0) throw config_error("steps must be > 0");
    if (batch_size < 1) throw config_error("batch_size must be >= 1");
    if (warmup_steps < 0 || warmup_steps >= steps)
      throw config_error("warmup_steps must lie in [0, steps)");
    if (!(lambda > 0.0)) throw config_error("lambda must be > 0");
    if (learning_rate < 0.0) throw config_error("learning_rate must be >= 0");
    if (schedule_T < 2) throw config_error("schedule_T must be >= 2");
    if (eval_every < 0) throw config_error("eval_every must be >= 0");
  }
};

// Linear warm-up to lr_max over warmup steps, constant afterwards.
// Steps are 1-based; at step == warmup the rate reaches lr_max exactly.
inline double warmup_lr(double lr_max, int64_t step, int warmup) {
  if (warmup <= 0) return lr_max;
  return lr_max * std::min(1.0, double(step) / double(warmup));
}

// One log line per optimization step.
struct TrainRecord {
  int64_t step = 0;  // 1-based
  double agg = 0.0;
  double task = 0.0;
  double total = 0.0;
  double lr = 0.0;
  std::map<std::string, int> source_counts;

  std::string to_line() const {
    std::ostringstream os;
    os.precision(10);
    os << "step=" << step << " agg=" << agg << " task=" << task
       << " total=" << total << " lr=" << lr;
    for (const auto& [name, count] : source_counts)
      os << " src." << name << "=" << count;
    return os.str();
  }
};

inline void write_train_log(const std::string& path,
                            const std::vector<TrainRecord>& log) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw io_error("cannot open '" + path + "' for writing");
  for (const TrainRecord& r : log) f << r.to_line() << "\n";
  if (!f) throw io_error("write failed for '" + path + "'");
}

namespace detail {

// Slices item `i` of a (B, C, H, W) stack as (C, H, W).
inline TensorF batch_item(const TensorF& stack, int i) {
  const int C = stack.shape[1], H = stack.shape[2], W = stack.shape[3];
  TensorF out({C, H, W});
  const size_t n = size_t(C) * H * W;
  std::copy(stack.v.begin() + ptrdiff_t(size_t(i) * n),
            stack.v.begin() + ptrdiff_t(size_t(i + 1) * n), out.v.begin());
  return out;
}

// Slices item `i` of a (B, H, W) stack as (H, W).
inline TensorF batch_plane(const TensorF& stack, int i) {
  const int H = stack.shape[1], W = stack.shape[2];
  TensorF out({H, W});
  const size_t n = size_t(H) * W;
  std::copy(stack.v.begin() + ptrdiff_t(size_t(i) * n),
            stack.v.begin() + ptrdiff_t(size_t(i + 1) * n), out.v.begin());
  return out;
}

inline TensorF mask_plane(const Tensor<uint8_t>& stack, int i) {
  const int H = stack.shape[1], W = stack.shape[2];
  TensorF out({H, W});
  const size_t n = size_t(H) * W;
  for (size_t q = 0; q < n; ++q)
    out.v[q] = stack.v[size_t(i) * n + q] ? 1.0f : 0.0f;
  return out;
}

// [0,1] image to the network's [-1,1] domain.
inline TensorF to_signed_unit(const TensorF& rgb) {
  TensorF x(rgb.shape);
  for (size_t q = 0; q < rgb.size(); ++q) x.v[q] = 2.0f * rgb.v[q] - 1.0f;
  return x;
}

inline TensorF gaussian_like(Rng& rng, const std::vector<int>& shape) {
  TensorF eps(shape);
  for (float& v : eps.v) v = float(rng.normal());
  return eps;
}

inline std::map<std::string, int> count_sources(const Batch& b) {
  std::map<std::string, int> counts;
  for (const Provenance& p : b.provenance) ++counts[p.source];
  return counts;
}

// Depth supervision happens on the bounded parameterization
// m = d / (d + depth_scale) in (0, 1), the same domain the head's sigmoid
// produces; masked-out pixels are zeroed.
inline TensorF depth_to_bounded(const TensorF& depth, const TensorF& mask,
                                double depth_scale) {
  TensorF m(depth.shape);
  for (size_t q = 0; q < depth.size(); ++q) {
    const double d = depth.v[q];
    m.v[q] = mask.v[q] > 0.5f ? float(d / (d + depth_scale)) : 0.0f;
  }
  return m;
}

inline TensorF sigmoid_map(const TensorF& raw) {
  TensorF y(raw.shape);
  for (size_t q = 0; q < raw.size(); ++q)
    y.v[q] = 1.0f / (1.0f + std::exp(-raw.v[q]));
  return y;
}

}  // namespace detail

struct PretrainResult {
  Network teacher;
  std::vector<TrainRecord> log;
};

// Trains a fresh noise predictor on the RGB channels of the mixed sources.
// On a non-finite loss the current weights are snapshotted (when a path is
// given) and a numerical error is thrown.
inline PretrainResult pretrain_teacher(const std::vector<SourceSpec>& sources,
                                       const NetworkConfig& netcfg,
                                       const TrainConfig& cfg,
                                       const std::string& snapshot_path = "",
                                       SampleLoader loader = load_sample_from_disk) {
  cfg.validate();
  if (cfg.stage != "pretrain")
    throw config_error("pretrain_teacher needs a pretrain-stage config");
  netcfg.validate();
  const NoiseSchedule sched = make_schedule("linear-beta", cfg.schedule_T);
  const Rng root(cfg.seed);
  Rng trng = root.child(3);

  PretrainResult out{build_teacher(netcfg, cfg.seed), {}};
  Network& net = out.teacher;
  ParamList params = net.params();
  Adam opt(cfg.effective_lr());
  Batcher batcher(MixSampler(sources, root.child(1)), cfg.batch_size,
                  std::move(loader));
  Rng nrng = root.child(2);

  for (int64_t step = 1; step <= cfg.steps; ++step) {
    zero_grads(params);
    const Batch batch = batcher.next();
    const std::vector<int> ts = sample_timestep(trng, sched, cfg.batch_size);
    double loss_mean = 0.0;
    for (int i = 0; i < cfg.batch_size; ++i) {
      const TensorF x = detail::to_signed_unit(detail::batch_item(batch.rgb, i));
      const TensorF eps = detail::gaussian_like(nrng, x.shape);
      const TensorF z = forward_noise(x, ts[size_t(i)], eps, sched);
      NetOut o = net.forward(z, ts[size_t(i)]);
      loss_mean += teacher_denoise_loss(o.pred, eps) / double(cfg.batch_size);
      TensorF dpred(o.pred.shape);
      teacher_denoise_loss_grad(o.pred, eps, dpred,
                                float(1.0 / double(cfg.batch_size)));
      net.backward(&dpred, nullptr);
    }
    if (!std::isfinite(loss_mean)) {
      std::string note;
      if (!snapshot_path.empty()) {
        save_teacher(snapshot_path, net, uint64_t(step));
        note = "; snapshot written to " + snapshot_path;
      }
      throw numerical_error("non-finite pretraining loss at step " +
                            std::to_string(step) + note);
    }
    opt.lr = warmup_lr(cfg.effective_lr(), step, cfg.warmup_steps);
    opt.step(params);
    TrainRecord rec;
    rec.step = step;
    rec.agg = 0.0;
    rec.task = loss_mean;
    rec.total = loss_mean;
    rec.lr = opt.lr;
    rec.source_counts = detail::count_sources(batch);
    out.log.push_back(std::move(rec));
  }
  return out;
}

struct TrainResult {
  PredictorState state;
  std::vector<TrainRecord> log;
};

// Joint training of the single-step predictor against a frozen noise
// predictor: per item, one uniformly sampled timestep conditions both the
// noise predictor's feature extraction and the projection of the student's
// clean features; the prediction head trains on the task loss. The logged
// total is exactly agg + lambda * task.
inline TrainResult train_predictor(Network& teacher,
                                   const std::vector<SourceSpec>& sources,
                                   const NetworkConfig& student_cfg,
                                   const TrainConfig& cfg,
                                   const std::string& snapshot_path = "",
                                   SampleLoader loader = load_sample_from_disk) {
  cfg.validate();
  if (cfg.stage != "predict-train")
    throw config_error("train_predictor needs a predict-train-stage config");
  student_cfg.validate();
  require_task_compatible(student_cfg, cfg.task);
  const NoiseSchedule sched = make_schedule("linear-beta", cfg.schedule_T);
  const Rng root(cfg.seed);
  Rng trng = root.child(3);
  Rng nrng = root.child(2);

  LossWeights weights;
  weights.lambda_joint = cfg.lambda;
  weights.validate();

  TrainResult out{build_student(student_cfg, teacher, cfg.seed), {}};
  PredictorState& st = out.state;
  ParamList params = st.params();
  Adam opt(cfg.effective_lr());
  Batcher batcher(MixSampler(sources, root.child(1)), cfg.batch_size,
                  std::move(loader));
  const float inv_b = float(1.0 / double(cfg.batch_size));

  for (int64_t step = 1; step <= cfg.steps; ++step) {
    zero_grads(params);
    const Batch batch = batcher.next();
    const std::vector<int> ts = sample_timestep(trng, sched, cfg.batch_size);
    double agg_mean = 0.0, task_mean = 0.0;
    for (int i = 0; i < cfg.batch_size; ++i) {
      const TensorF rgb = detail::batch_item(batch.rgb, i);
      const TensorF x = detail::to_signed_unit(rgb);
      auto [pred, taps] = student_forward(st, x);
      const TensorF eps = detail::gaussian_like(nrng, x.shape);
      const int t = ts[size_t(i)];
      const TapBundle expert = teacher_forward(teacher, x, eps, t, sched);

      // Alignment term and its gradient down to the student's taps.
      std::vector<TensorF> dtaps;
      if (cfg.identity_heads) {
        std::vector<TensorF> dproj(taps.taps.size());
        for (size_t k = 0; k < dproj.size(); ++k)
          dproj[k] = TensorF(taps.taps[k].shape);
        agg_mean += loss_agg(taps, expert, &dproj, inv_b) / double(cfg.batch_size);
        dtaps = std::move(dproj);
      } else {
        const TapBundle proj = project(st, taps, t);
        std::vector<TensorF> dproj(proj.taps.size());
        for (size_t k = 0; k < dproj.size(); ++k)
          dproj[k] = TensorF(proj.taps[k].shape);
        agg_mean += loss_agg(proj, expert, &dproj, inv_b) / double(cfg.batch_size);
        dtaps = project_backward(st, dproj);
      }

      // Task term; gradient lands on the raw head output.
      const float task_scale = float(cfg.lambda) * inv_b;
      TensorF draw(pred.shape);
      double task_i = 0.0;
      if (cfg.task == "normal") {
        const TensorF gt = detail::batch_item(batch.normal, i);
        const TensorF mask = detail::mask_plane(batch.mask, i);
        TensorF dp(pred.shape);
        task_i = loss_normal(pred, gt, mask, weights, &dp, task_scale).total;
        draw = std::move(dp);
      } else {
        TensorF raw({pred.shape[1], pred.shape[2]});
        std::copy(pred.v.begin(), pred.v.end(), raw.v.begin());
        const TensorF bounded = detail::sigmoid_map(raw);
        TensorF dm(bounded.shape);
        if (cfg.task == "depth") {
          const TensorF mask = detail::mask_plane(batch.mask, i);
          const TensorF gt = detail::depth_to_bounded(
              detail::batch_plane(batch.depth, i), mask, student_cfg.depth_scale);
          task_i = loss_depth(bounded, gt, mask, weights, &dm, task_scale).total;
        } else {  // matting
          const TensorF gt = detail::batch_plane(batch.matte, i);
          task_i = loss_matting(bounded, gt, weights, &dm, task_scale).total;
        }
        for (size_t q = 0; q < dm.size(); ++q) {
          const float s = bounded.v[q];
          draw.v[q] = dm.v[q] * s * (1.0f - s);
        }
      }
      task_mean += task_i / double(cfg.batch_size);
      st.student.backward(&draw, &dtaps);
    }

    const double total = agg_mean + cfg.lambda * task_mean;
    if (!std::isfinite(total)) {
      std::string note;
      if (!snapshot_path.empty()) {
        st.step = step;
        save_predictor(snapshot_path, st);
        note = "; snapshot written to " + snapshot_path;
      }
      throw numerical_error("non-finite training loss at step " +
                            std::to_string(step) + note);
    }
    opt.lr = warmup_lr(cfg.effective_lr(), step, cfg.warmup_steps);
    opt.step(params);
    st.step = step;
    TrainRecord rec;
    rec.step = step;
    rec.agg = agg_mean;
    rec.task = task_mean;
    rec.total = total;
    rec.lr = opt.lr;
    rec.source_counts = detail::count_sources(batch);
    out.log.push_back(std::move(rec));
  }
  return out;
}

}  // namespace dp
