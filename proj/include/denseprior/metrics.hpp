#pragma once

// Evaluation metrics and protocols: affine-invariant depth error (AbsRel,
// delta1), angular normal error, matting errors (SAD/MAD/MSE/Conn), binary
// overlap scores (IoU/PA/Dice), and dataset-level evaluation producing a
// MetricsReport. All accumulation is in double with a fixed serial order.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <deque>
#include <string>
#include <utility>
#include <vector>

#include "denseprior/errors.hpp"
#include "denseprior/projection.hpp"
#include "denseprior/scenegen.hpp"
#include "denseprior/tensor.hpp"

namespace dp {

// ---------------------------------------------------------------------------
// Output decoding: the prediction head emits raw real values; tasks decode
// them into their measurement domain.
// ---------------------------------------------------------------------------

inline constexpr double kDepthDecodeMin = 1e-3;
inline constexpr double kDepthDecodeMax = 1e3;

// (1, H, W) or (H, W) raw map -> (H, W) sigmoid map in (0, 1).
inline TensorF sigmoid_plane(const TensorF& raw) {
  if (raw.ndim() != 2 && !(raw.ndim() == 3 && raw.shape[0] == 1))
    throw shape_error("sigmoid_plane expects (H, W) or (1, H, W)");
  const int H = raw.shape[raw.ndim() - 2], W = raw.shape[raw.ndim() - 1];
  TensorF out({H, W});
  for (size_t i = 0; i < out.size(); ++i)
    out.v[i] = float(1.0 / (1.0 + std::exp(-double(raw.v[i]))));
  return out;
}

// Bounded depth parameterization m = d / (d + scale) in (0, 1), inverted:
// d = scale * m / (1 - m), clamped to a sane metric range.
inline TensorF decode_depth(const TensorF& m, double depth_scale) {
  if (!(depth_scale > 0.0)) throw config_error("depth_scale must be > 0");
  TensorF d(m.shape);
  for (size_t i = 0; i < m.size(); ++i) {
    const double mm = double(m.v[i]);
    const double raw = depth_scale * mm / std::max(1.0 - mm, 1e-12);
    d.v[i] = float(std::clamp(raw, kDepthDecodeMin, kDepthDecodeMax));
  }
  return d;
}

// (3, H, W) raw normals -> unit normals with an epsilon-guarded norm.
inline TensorF decode_normals(const TensorF& raw) {
  if (raw.ndim() != 3 || raw.shape[0] != 3)
    throw shape_error("decode_normals expects (3, H, W)");
  const int H = raw.shape[1], W = raw.shape[2];
  TensorF out(raw.shape);
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      const double nx = raw.at(0, y, x), ny = raw.at(1, y, x),
                   nz = raw.at(2, y, x);
      const double n = std::max(std::sqrt(nx * nx + ny * ny + nz * nz), 1e-8);
      out.at(0, y, x) = float(nx / n);
      out.at(1, y, x) = float(ny / n);
      out.at(2, y, x) = float(nz / n);
    }
  return out;
}

// ---------------------------------------------------------------------------
// Depth metrics
// ---------------------------------------------------------------------------

struct AffineFit {
  double a = 1.0, b = 0.0;
};

namespace detail {

inline bool mask_on(const TensorF& mask, size_t i) { return mask.v[i] > 0.5f; }

}  // namespace detail

// Closed-form least squares over masked pixels: minimizes
// sum_mask (a * pred + b - gt)^2 via the mean-centered normal equations.
inline AffineFit align_affine(const TensorF& pred, const TensorF& gt,
                              const TensorF& mask) {
  require_same_shape(pred, gt, "align_affine");
  require_same_shape(pred, mask, "align_affine");
  double n = 0.0, sp = 0.0, sg = 0.0;
  for (size_t i = 0; i < pred.size(); ++i)
    if (detail::mask_on(mask, i)) {
      n += 1.0;
      sp += double(pred.v[i]);
      sg += double(gt.v[i]);
    }
  if (n < 2.0)
    throw degenerate_error("affine fit needs at least 2 masked pixels");
  const double pbar = sp / n, gbar = sg / n;
  double spp = 0.0, spg = 0.0;
  for (size_t i = 0; i < pred.size(); ++i)
    if (detail::mask_on(mask, i)) {
      const double dp = double(pred.v[i]) - pbar;
      spp += dp * dp;
      spg += dp * (double(gt.v[i]) - gbar);
    }
  if (spp <= 1e-18 * n * std::max(1.0, pbar * pbar))
    throw degenerate_error("constant masked prediction: affine fit is singular");
  AffineFit f;
  f.a = spg / spp;
  f.b = gbar - f.a * pbar;
  return f;
}

namespace detail {

inline void require_positive_gt(const TensorF& gt, const TensorF& mask,
                                const char* who) {
  for (size_t i = 0; i < gt.size(); ++i)
    if (mask_on(mask, i) && !(gt.v[i] > 0.0f))
      throw range_error(std::string(who) +
                        ": ground-truth depth must be > 0 on the mask");
}

inline void require_nonempty_mask(const TensorF& mask, const char* who) {
  for (size_t i = 0; i < mask.size(); ++i)
    if (mask_on(mask, i)) return;
  throw usage_error(std::string(who) + ": mask selects no pixels");
}

}  // namespace detail

// Mean over masked pixels of |p - g| / g, after optional affine alignment.
inline double metric_absrel(const TensorF& pred, const TensorF& gt,
                            const TensorF& mask, bool align) {
  require_same_shape(pred, gt, "metric_absrel");
  require_same_shape(pred, mask, "metric_absrel");
  detail::require_nonempty_mask(mask, "metric_absrel");
  detail::require_positive_gt(gt, mask, "metric_absrel");
  AffineFit f;
  if (align) f = align_affine(pred, gt, mask);
  double acc = 0.0, n = 0.0;
  for (size_t i = 0; i < pred.size(); ++i)
    if (detail::mask_on(mask, i)) {
      const double p = f.a * double(pred.v[i]) + f.b;
      const double g = double(gt.v[i]);
      acc += std::abs(p - g) / g;
      n += 1.0;
    }
  return acc / n;
}

// Fraction of masked pixels with max(p/g, g/p) < 1.25; pred clamped at 1e-6
// after alignment so the ratio stays defined.
inline double metric_delta1(const TensorF& pred, const TensorF& gt,
                            const TensorF& mask, bool align) {
  require_same_shape(pred, gt, "metric_delta1");
  require_same_shape(pred, mask, "metric_delta1");
  detail::require_nonempty_mask(mask, "metric_delta1");
  detail::require_positive_gt(gt, mask, "metric_delta1");
  AffineFit f;
  if (align) f = align_affine(pred, gt, mask);
  double hits = 0.0, n = 0.0;
  for (size_t i = 0; i < pred.size(); ++i)
    if (detail::mask_on(mask, i)) {
      const double p = std::max(f.a * double(pred.v[i]) + f.b, 1e-6);
      const double g = double(gt.v[i]);
      if (std::max(p / g, g / p) < 1.25) hits += 1.0;
      n += 1.0;
    }
  return hits / n;
}

// ---------------------------------------------------------------------------
// Normal metrics
// ---------------------------------------------------------------------------

struct NormalMetrics {
  double mean_angle_deg = 0.0;
  double frac_below_1125 = 0.0;  // fraction of angles strictly below 11.25°
};

// Per-pixel angle between the prediction and the ground truth, both
// epsilon-normalized (truth is unit by contract; renormalizing makes the
// perfect-prediction oracle exactly zero), in degrees, averaged over mask.
inline NormalMetrics metric_normal(const TensorF& pred, const TensorF& gt,
                                   const TensorF& mask) {
  if (pred.ndim() != 3 || pred.shape[0] != 3)
    throw shape_error("metric_normal expects (3, H, W) predictions");
  require_same_shape(pred, gt, "metric_normal");
  if (mask.ndim() != 2 || mask.shape[0] != pred.shape[1] ||
      mask.shape[1] != pred.shape[2])
    throw shape_error("metric_normal mask must be (H, W)");
  detail::require_nonempty_mask(mask, "metric_normal");
  const int H = pred.shape[1], W = pred.shape[2];
  double acc = 0.0, hits = 0.0, n = 0.0;
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      if (!(mask.at(y, x) > 0.5f)) continue;
      const double px = pred.at(0, y, x), py = pred.at(1, y, x),
                   pz = pred.at(2, y, x);
      const double gx = gt.at(0, y, x), gy = gt.at(1, y, x),
                   gz = gt.at(2, y, x);
      const double pn = std::max(std::sqrt(px * px + py * py + pz * pz), 1e-8);
      const double gn = std::max(std::sqrt(gx * gx + gy * gy + gz * gz), 1e-8);
      const double dot = (px * gx + py * gy + pz * gz) / (pn * gn);
      const double ang =
          std::acos(std::clamp(dot, -1.0, 1.0)) * 180.0 / M_PI;
      acc += ang;
      if (ang < 11.25) hits += 1.0;
      n += 1.0;
    }
  NormalMetrics m;
  m.mean_angle_deg = acc / n;
  m.frac_below_1125 = hits / n;
  return m;
}

// ---------------------------------------------------------------------------
// Matting metrics
// ---------------------------------------------------------------------------

struct MattingMetrics {
  double sad = 0.0;   // sum of absolute differences / divisor
  double mad = 0.0;   // mean absolute difference
  double mse = 0.0;   // mean squared difference
  double conn = 0.0;  // connectivity error / divisor
};

namespace detail {

// Largest 4-connected true region of `b`; ties go to the component whose
// first pixel comes earliest in row-major order (the scan order guarantees
// that the first-found component of a given size wins).
inline std::vector<uint8_t> largest_component(const std::vector<uint8_t>& b,
                                              int H, int W) {
  std::vector<int> label(b.size(), -1);
  int best_label = -1;
  size_t best_size = 0;
  int next = 0;
  std::deque<int> queue;
  for (int start = 0; start < H * W; ++start) {
    if (!b[size_t(start)] || label[size_t(start)] != -1) continue;
    const int id = next++;
    size_t size = 0;
    label[size_t(start)] = id;
    queue.push_back(start);
    while (!queue.empty()) {
      const int q = queue.front();
      queue.pop_front();
      ++size;
      const int y = q / W, x = q % W;
      const int ns[4] = {q - W, q + W, q - 1, q + 1};
      const bool ok[4] = {y > 0, y + 1 < H, x > 0, x + 1 < W};
      for (int k = 0; k < 4; ++k) {
        if (!ok[k]) continue;
        const int m = ns[k];
        if (b[size_t(m)] && label[size_t(m)] == -1) {
          label[size_t(m)] = id;
          queue.push_back(m);
        }
      }
    }
    if (size > best_size) {
      best_size = size;
      best_label = id;
    }
  }
  std::vector<uint8_t> omega(b.size(), 0);
  if (best_label >= 0)
    for (size_t i = 0; i < b.size(); ++i)
      omega[i] = label[i] == best_label ? 1 : 0;
  return omega;
}

// Connectivity error: for thresholds theta in {0.1, ..., 0.9}, a pixel's
// connectedness level l is the last theta at which it still belonged to the
// largest jointly-thresholded region; the error compares the degradation
// phi = 1 - d * [d >= 0.15] (d = alpha - l) between prediction and truth.
inline double connectivity_error(const TensorF& pred, const TensorF& gt) {
  const int H = pred.shape[0], W = pred.shape[1];
  const size_t n = pred.size();
  std::vector<double> lmap(n, -1.0);
  std::vector<uint8_t> b(n, 0);
  for (int step = 1; step <= 9; ++step) {
    const double theta = 0.1 * step;
    const double prev = 0.1 * (step - 1);
    for (size_t i = 0; i < n; ++i)
      b[i] = (double(pred.v[i]) >= theta && double(gt.v[i]) >= theta) ? 1 : 0;
    const std::vector<uint8_t> omega = largest_component(b, H, W);
    for (size_t i = 0; i < n; ++i)
      if (lmap[i] == -1.0 && !omega[i]) lmap[i] = prev;
  }
  double acc = 0.0;
  for (size_t i = 0; i < n; ++i) {
    const double l = lmap[i] == -1.0 ? 1.0 : lmap[i];
    const double dp = double(pred.v[i]) - l;
    const double dg = double(gt.v[i]) - l;
    const double phip = 1.0 - (dp >= 0.15 ? dp : 0.0);
    const double phig = 1.0 - (dg >= 0.15 ? dg : 0.0);
    acc += std::abs(phip - phig);
  }
  return acc;
}

inline void require_alpha_range(const TensorF& t, const char* who) {
  for (float v : t.v)
    if (!(v >= 0.0f && v <= 1.0f))
      throw range_error(std::string(who) + ": values must lie in [0, 1]");
}

}  // namespace detail

// Full-frame matting errors; `divisor` applies the matting-literature
// scaling to SAD and Conn (1000 by convention, configurable).
inline MattingMetrics metric_matting(const TensorF& pred, const TensorF& gt,
                                     double divisor = 1000.0) {
  if (pred.ndim() != 2) throw shape_error("metric_matting expects (H, W)");
  require_same_shape(pred, gt, "metric_matting");
  detail::require_alpha_range(pred, "metric_matting pred");
  detail::require_alpha_range(gt, "metric_matting gt");
  if (!(divisor > 0.0)) throw config_error("matting divisor must be > 0");
  MattingMetrics m;
  double sad = 0.0, sq = 0.0;
  for (size_t i = 0; i < pred.size(); ++i) {
    const double d = double(pred.v[i]) - double(gt.v[i]);
    sad += std::abs(d);
    sq += d * d;
  }
  m.sad = sad / divisor;
  m.mad = sad / double(pred.size());
  m.mse = sq / double(pred.size());
  m.conn = detail::connectivity_error(pred, gt) / divisor;
  return m;
}

// ---------------------------------------------------------------------------
// Binary overlap metrics
// ---------------------------------------------------------------------------

struct BinaryMetrics {
  double iou = 1.0;
  double pa = 1.0;
  double dice = 1.0;
};

// Prediction thresholded at `threshold`, truth at 0.5 (it is notionally
// binary already). Both-empty masks score 1 so a perfect oracle is exact.
inline BinaryMetrics metric_binary(const TensorF& pred, const TensorF& gt,
                                   double threshold = 0.5) {
  require_same_shape(pred, gt, "metric_binary");
  double inter = 0.0, a = 0.0, b = 0.0, agree = 0.0;
  for (size_t i = 0; i < pred.size(); ++i) {
    const bool p = double(pred.v[i]) >= threshold;
    const bool g = double(gt.v[i]) >= 0.5;
    if (p && g) inter += 1.0;
    if (p) a += 1.0;
    if (g) b += 1.0;
    if (p == g) agree += 1.0;
  }
  BinaryMetrics m;
  const double uni = a + b - inter;
  m.iou = uni == 0.0 ? 1.0 : inter / uni;
  m.dice = a + b == 0.0 ? 1.0 : 2.0 * inter / (a + b);
  m.pa = agree / double(pred.size());
  return m;
}

// ---------------------------------------------------------------------------
// Dataset-level evaluation
// ---------------------------------------------------------------------------

struct EvalProtocol {
  bool align = true;             // affine-invariant depth protocol
  double binary_threshold = 0.5;
  double matting_divisor = 1000.0;
};

struct MetricsReport {
  std::string task;
  std::vector<std::pair<std::string, double>> metrics;  // ordered
  int sample_count = 0;
  std::string nfe;    // "ensemble × steps"
  bool align = true;  // protocol echo

  double value(const std::string& name) const {
    for (const auto& [k, v] : metrics)
      if (k == name) return v;
    throw usage_error("report has no metric '" + name + "'");
  }
};

namespace detail {

inline TensorF sample_input(const DenseSample& s) {
  const int H = s.height(), W = s.width();
  TensorF x({3, H, W});
  for (int y = 0; y < H; ++y)
    for (int x0 = 0; x0 < W; ++x0)
      for (int c = 0; c < 3; ++c)
        x.at(c, y, x0) = 2.0f * s.rgb.at(y, x0, c) - 1.0f;
  return x;
}

inline TensorF sample_mask(const DenseSample& s) {
  TensorF m({s.height(), s.width()});
  for (size_t i = 0; i < m.size(); ++i) m.v[i] = s.mask.v[i] ? 1.0f : 0.0f;
  return m;
}

// (H, W, 3) stored normals -> (3, H, W) planes.
inline TensorF sample_normals(const DenseSample& s) {
  const int H = s.height(), W = s.width();
  TensorF n({3, H, W});
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x)
      for (int c = 0; c < 3; ++c) n.at(c, y, x) = s.normal.at(y, x, c);
  return n;
}

// Accumulates one sample's metrics for `task` given the decoded prediction.
inline void accumulate_task_metrics(const std::string& task,
                                    const TensorF& decoded,
                                    const DenseSample& s,
                                    const EvalProtocol& proto,
                                    std::vector<std::pair<std::string, double>>& acc) {
  auto add = [&acc](const std::string& name, double v) {
    for (auto& [k, sum] : acc)
      if (k == name) {
        sum += v;
        return;
      }
    acc.emplace_back(name, v);
  };
  if (task == "depth") {
    const TensorF mask = sample_mask(s);
    add("absrel", metric_absrel(decoded, s.depth, mask, proto.align));
    add("delta1", metric_delta1(decoded, s.depth, mask, proto.align));
  } else if (task == "normal") {
    const TensorF mask = sample_mask(s);
    const TensorF gt = sample_normals(s);
    const NormalMetrics nm = metric_normal(decoded, gt, mask);
    add("mean_angle", nm.mean_angle_deg);
    add("frac_11.25", nm.frac_below_1125);
  } else if (task == "matting") {
    const MattingMetrics mm =
        metric_matting(decoded, s.matte, proto.matting_divisor);
    add("sad", mm.sad);
    add("mad", mm.mad);
    add("mse", mm.mse);
    add("conn", mm.conn);
    const BinaryMetrics bm =
        metric_binary(decoded, s.matte, proto.binary_threshold);
    add("iou", bm.iou);
    add("pa", bm.pa);
    add("dice", bm.dice);
  } else {
    throw config_error("unknown task '" + task + "'");
  }
}

inline MetricsReport finish_report(const std::string& task,
                                   std::vector<std::pair<std::string, double>> acc,
                                   int count, const std::string& nfe,
                                   const EvalProtocol& proto) {
  MetricsReport r;
  r.task = task;
  r.sample_count = count;
  r.nfe = nfe;
  r.align = proto.align;
  for (auto& [k, sum] : acc) r.metrics.emplace_back(k, sum / double(count));
  return r;
}

}  // namespace detail

// Runs the single-step predictor over every sample and averages per-sample
// metrics. Exactly one network evaluation per sample: NFE is "1 × 1".
inline MetricsReport evaluate(PredictorState& state,
                              const std::vector<DenseSample>& samples,
                              const std::string& task,
                              const EvalProtocol& proto = {}) {
  if (samples.empty()) throw usage_error("evaluation dataset is empty");
  require_task_compatible(state.config, task);
  const uint64_t nfe_before = state.nfe;
  std::vector<std::pair<std::string, double>> acc;
  for (const DenseSample& s : samples) {
    const TensorF x = detail::sample_input(s);
    const TensorF raw = student_forward(state, x).first;
    TensorF decoded;
    if (task == "depth")
      decoded = decode_depth(sigmoid_plane(raw), state.config.depth_scale);
    else if (task == "normal")
      decoded = decode_normals(raw);
    else
      decoded = sigmoid_plane(raw);
    detail::accumulate_task_metrics(task, decoded, s, proto, acc);
  }
  if (state.nfe - nfe_before != samples.size())
    throw usage_error("evaluation used more than one network call per sample");
  return detail::finish_report(task, std::move(acc), int(samples.size()),
                               "1 × 1", proto);
}

// Protocol check: feeds the ground truth back as the prediction. Every
// metric must come out ideal; no network is involved (NFE "1 × 0").
inline MetricsReport evaluate_oracle(const std::vector<DenseSample>& samples,
                                     const std::string& task,
                                     const EvalProtocol& proto = {}) {
  if (samples.empty()) throw usage_error("evaluation dataset is empty");
  std::vector<std::pair<std::string, double>> acc;
  for (const DenseSample& s : samples) {
    TensorF decoded;
    if (task == "depth")
      decoded = s.depth;
    else if (task == "normal")
      decoded = detail::sample_normals(s);
    else if (task == "matting")
      decoded = s.matte;
    else
      throw config_error("unknown task '" + task + "'");
    detail::accumulate_task_metrics(task, decoded, s, proto, acc);
  }
  return detail::finish_report(task, std::move(acc), int(samples.size()),
                               "1 × 0", proto);
}

}  // namespace dp
