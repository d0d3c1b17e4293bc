#pragma once

#include <algorithm>
#include <type_traits>
#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "denseprior/errors.hpp"
#include "denseprior/taps.hpp"
#include "denseprior/tensor.hpp"

namespace dp {

// Weighted-sum coefficients of the task losses and the joint objective.
struct LossWeights {
  double lambda_joint = 1.0;
  double depth_mse = 8.0, depth_aff = 2.0, depth_grad = 100.0;
  double normal_mse = 8.0, normal_ang = 3.0;
  double matting_mse = 5.0, matting_l1 = 10.0, matting_grad = 50.0;

  void validate() const {
    const double all[] = {lambda_joint, depth_mse,   depth_aff,
                          depth_grad,   normal_mse,  normal_ang,
                          matting_mse,  matting_l1,  matting_grad};
    for (double w : all)
      if (!(w > 0.0)) throw config_error("loss weights must be positive");
  }
};

// One loss evaluation: weighted total plus named raw components.
struct LossParts {
  double total = 0.0;
  std::map<std::string, double> comps;
};

// Per-step objective record.
struct LossBreakdown {
  double total = 0.0;
  double agg = 0.0;
  double task = 0.0;
  std::map<std::string, double> comps;
};

inline double loss_total(double agg, double task, double lambda) {
  if (!(lambda > 0.0)) throw config_error("lambda must be > 0");
  return agg + lambda * task;
}

namespace detail {

constexpr double kNormEps = 1e-8;    // zero-vector guard in cosine/normalize
constexpr double kDotClamp = 1e-7;   // arccos clamp distance from +-1
constexpr double kLogClamp = 1e-6;   // depth positivity clamp under log

template <typename T>
inline bool on(const Tensor<T>& mask, size_t i) {
  return mask.v[i] > T(0.5);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// dist_negcos: negative mean cosine similarity, cosine taken per spatial
// location over the channel axis. Tensors are planar (C, H, W).
// Optional accumulation of d(dist)/da and d(dist)/db, scaled by grad_scale.
// ---------------------------------------------------------------------------
template <typename T>
double dist_negcos(const Tensor<T>& a, const Tensor<T>& b,
                   std::type_identity_t<Tensor<T>*> grad_a = nullptr,
                   std::type_identity_t<Tensor<T>*> grad_b = nullptr,
                   std::type_identity_t<T> grad_scale = T(1)) {
  require_same_shape(a, b, "dist_negcos");
  if (a.ndim() != 3) throw shape_error("dist_negcos expects (C, H, W)");
  const int C = a.shape[0];
  const size_t HW = size_t(a.shape[1]) * size_t(a.shape[2]);
  const double eps = detail::kNormEps;
  double acc = 0.0;
  for (size_t p = 0; p < HW; ++p) {
    double dot = 0.0, na2 = 0.0, nb2 = 0.0;
    for (int c = 0; c < C; ++c) {
      const double av = double(a.v[size_t(c) * HW + p]);
      const double bv = double(b.v[size_t(c) * HW + p]);
      dot += av * bv;
      na2 += av * av;
      nb2 += bv * bv;
    }
    const double na = std::sqrt(na2), nb = std::sqrt(nb2);
    const double den = (na + eps) * (nb + eps);
    const double cosv = dot / den;
    acc += cosv;
    if (grad_a || grad_b) {
      // d(-cos)/da_c = -(b_c/den - cos * a_c * (nb+eps)/(den*na)), mean over HW.
      const double k = -double(grad_scale) / double(HW);
      for (int c = 0; c < C; ++c) {
        const size_t i = size_t(c) * HW + p;
        const double av = double(a.v[i]), bv = double(b.v[i]);
        if (grad_a) {
          const double ra = na > 0.0 ? cosv * av / (na * (na + eps)) : 0.0;
          grad_a->v[i] += T(k * (bv / den - ra));
        }
        if (grad_b) {
          const double rb = nb > 0.0 ? cosv * bv / (nb * (nb + eps)) : 0.0;
          grad_b->v[i] += T(k * (av / den - rb));
        }
      }
    }
  }
  return -acc / double(HW);
}

// ---------------------------------------------------------------------------
// loss_agg: sum over taps of dist_negcos(projected, teacher).
// ---------------------------------------------------------------------------
template <typename T>
double loss_agg(const TapBundleT<T>& projected, const TapBundleT<T>& teacher,
                std::type_identity_t<std::vector<Tensor<T>>*> grad_projected = nullptr,
                std::type_identity_t<T> grad_scale = T(1)) {
  if (projected.tag != TapTag::student_clean)
    throw usage_error("loss_agg: first bundle must be projected student taps");
  if (teacher.tag != TapTag::teacher_at_t)
    throw usage_error("loss_agg: second bundle must be teacher taps");
  if (projected.taps.size() != teacher.taps.size())
    throw usage_error("loss_agg: bundles have different tap counts");
  for (size_t k = 0; k < teacher.taps.size(); ++k)
    if (!same_shape(projected.taps[k], teacher.taps[k]))
      throw usage_error("loss_agg: tap " + std::to_string(k) + " shape mismatch");
  if (grad_projected && grad_projected->size() != projected.taps.size())
    throw usage_error("loss_agg: gradient bundle size mismatch");
  double acc = 0.0;
  for (size_t k = 0; k < teacher.taps.size(); ++k) {
    Tensor<T>* gk = grad_projected ? &(*grad_projected)[k] : nullptr;
    acc += dist_negcos(projected.taps[k], teacher.taps[k], gk,
                       static_cast<Tensor<T>*>(nullptr), grad_scale);
  }
  return acc;
}

// ---------------------------------------------------------------------------
// ssi_normalize: median-centered, mean-absolute-deviation-scaled depth.
// Masked-out pixels are zeroed in the output.
// ---------------------------------------------------------------------------
namespace detail {

// Median of masked values with the index (or indices) that realize it.
template <typename T>
struct MedianInfo {
  double value = 0.0;
  size_t lo = 0, hi = 0;  // lo == hi for odd counts
  size_t count = 0;
};

template <typename T>
MedianInfo<T> masked_median(const Tensor<T>& d, const Tensor<T>& mask) {
  std::vector<std::pair<double, size_t>> vals;
  vals.reserve(d.size());
  for (size_t i = 0; i < d.size(); ++i)
    if (on(mask, i)) vals.emplace_back(double(d.v[i]), i);
  if (vals.size() < 2)
    throw degenerate_error("mask must select at least 2 pixels");
  std::sort(vals.begin(), vals.end());
  MedianInfo<T> m;
  m.count = vals.size();
  const size_t n = vals.size();
  if (n % 2 == 1) {
    m.lo = m.hi = vals[n / 2].second;
    m.value = vals[n / 2].first;
  } else {
    m.lo = vals[n / 2 - 1].second;
    m.hi = vals[n / 2].second;
    m.value = 0.5 * (vals[n / 2 - 1].first + vals[n / 2].first);
  }
  return m;
}

}  // namespace detail

template <typename T>
Tensor<T> ssi_normalize(const Tensor<T>& d, const Tensor<T>& mask) {
  require_same_shape(d, mask, "ssi_normalize");
  const auto med = detail::masked_median(d, mask);
  double scale = 0.0;
  for (size_t i = 0; i < d.size(); ++i)
    if (detail::on(mask, i)) scale += std::abs(double(d.v[i]) - med.value);
  scale /= double(med.count);
  if (!(scale > 0.0))
    throw degenerate_error("constant masked depth: zero scale statistic");
  Tensor<T> out(d.shape);
  for (size_t i = 0; i < d.size(); ++i)
    out.v[i] = detail::on(mask, i) ? T((double(d.v[i]) - med.value) / scale) : T(0);
  return out;
}

// ---------------------------------------------------------------------------
// Masked multiscale log-gradient machinery shared by loss_depth and its
// gradient. R = log(clamped pred) - log(clamped gt); each coarser scale is a
// masked 2x2 average (mean of valid children, valid if any child is).
// ---------------------------------------------------------------------------
namespace detail {

template <typename T>
struct GradPyramidLevel {
  Tensor<double> r;      // (H, W) log-ratio at this scale
  Tensor<double> valid;  // 0/1
  int h = 0, w = 0;
};

// term = mean over valid horizontal pairs of |dx R| + mean over valid vertical
// pairs of |dy R| at one scale; 0 if a direction has no valid pairs.
inline double pair_term(const GradPyramidLevel<double>& L, Tensor<double>* dr) {
  double sx = 0.0, sy = 0.0;
  long nx = 0, ny = 0;
  for (int y = 0; y < L.h; ++y)
    for (int x = 0; x + 1 < L.w; ++x)
      if (L.valid.at(y, x) > 0.5 && L.valid.at(y, x + 1) > 0.5) {
        sx += std::abs(L.r.at(y, x + 1) - L.r.at(y, x));
        ++nx;
      }
  for (int y = 0; y + 1 < L.h; ++y)
    for (int x = 0; x < L.w; ++x)
      if (L.valid.at(y, x) > 0.5 && L.valid.at(y + 1, x) > 0.5) {
        sy += std::abs(L.r.at(y + 1, x) - L.r.at(y, x));
        ++ny;
      }
  if (dr) {
    for (int y = 0; y < L.h; ++y)
      for (int x = 0; x + 1 < L.w; ++x)
        if (L.valid.at(y, x) > 0.5 && L.valid.at(y, x + 1) > 0.5) {
          const double s =
              (L.r.at(y, x + 1) > L.r.at(y, x) ? 1.0 : -1.0) / double(nx);
          dr->at(y, x + 1) += s;
          dr->at(y, x) -= s;
        }
    for (int y = 0; y + 1 < L.h; ++y)
      for (int x = 0; x < L.w; ++x)
        if (L.valid.at(y, x) > 0.5 && L.valid.at(y + 1, x) > 0.5) {
          const double s =
              (L.r.at(y + 1, x) > L.r.at(y, x) ? 1.0 : -1.0) / double(ny);
          dr->at(y + 1, x) += s;
          dr->at(y, x) -= s;
        }
  }
  return (nx ? sx / double(nx) : 0.0) + (ny ? sy / double(ny) : 0.0);
}

inline GradPyramidLevel<double> downsample(const GradPyramidLevel<double>& L) {
  GradPyramidLevel<double> out;
  out.h = L.h / 2;
  out.w = L.w / 2;
  out.r.reshape({out.h, out.w});
  out.valid.reshape({out.h, out.w});
  for (int y = 0; y < out.h; ++y)
    for (int x = 0; x < out.w; ++x) {
      double acc = 0.0;
      int n = 0;
      for (int dy = 0; dy < 2; ++dy)
        for (int dx = 0; dx < 2; ++dx)
          if (L.valid.at(2 * y + dy, 2 * x + dx) > 0.5) {
            acc += L.r.at(2 * y + dy, 2 * x + dx);
            ++n;
          }
      if (n) {
        out.r.at(y, x) = acc / double(n);
        out.valid.at(y, x) = 1.0;
      }
    }
  return out;
}

// Scatter d(term)/d(coarse R) back onto the finer level.
inline void upsample_grad(const GradPyramidLevel<double>& fine,
                          const GradPyramidLevel<double>& coarse,
                          const Tensor<double>& d_coarse,
                          Tensor<double>& d_fine) {
  for (int y = 0; y < coarse.h; ++y)
    for (int x = 0; x < coarse.w; ++x) {
      if (coarse.valid.at(y, x) < 0.5) continue;
      int n = 0;
      for (int dy = 0; dy < 2; ++dy)
        for (int dx = 0; dx < 2; ++dx)
          if (fine.valid.at(2 * y + dy, 2 * x + dx) > 0.5) ++n;
      const double g = d_coarse.at(y, x) / double(n);
      for (int dy = 0; dy < 2; ++dy)
        for (int dx = 0; dx < 2; ++dx)
          if (fine.valid.at(2 * y + dy, 2 * x + dx) > 0.5)
            d_fine.at(2 * y + dy, 2 * x + dx) += g;
    }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// loss_depth: weighted MSE + scale/shift-invariant L1 + multiscale
// log-gradient, all restricted to the validity mask.
// ---------------------------------------------------------------------------
template <typename T>
LossParts loss_depth(const Tensor<T>& pred, const Tensor<T>& gt,
                     const Tensor<T>& mask, const LossWeights& w,
                     std::type_identity_t<Tensor<T>*> grad = nullptr,
                     std::type_identity_t<T> grad_scale = T(1)) {
  w.validate();
  require_same_shape(pred, gt, "loss_depth");
  require_same_shape(pred, mask, "loss_depth");
  if (pred.ndim() != 2) throw shape_error("loss_depth expects (H, W)");
  const int H = pred.shape[0], W = pred.shape[1];

  size_t n_mask = 0;
  for (size_t i = 0; i < mask.size(); ++i)
    if (detail::on(mask, i)) ++n_mask;
  if (n_mask < 2) throw degenerate_error("mask must select at least 2 pixels");

  // --- MSE ---
  double mse = 0.0;
  for (size_t i = 0; i < pred.size(); ++i)
    if (detail::on(mask, i)) {
      const double d = double(pred.v[i]) - double(gt.v[i]);
      mse += d * d;
    }
  mse /= double(n_mask);

  // --- scale/shift-invariant L1 ---
  const auto pm = detail::masked_median(pred, mask);
  const auto gm = detail::masked_median(gt, mask);
  double ps = 0.0, gs = 0.0;
  for (size_t i = 0; i < pred.size(); ++i)
    if (detail::on(mask, i)) {
      ps += std::abs(double(pred.v[i]) - pm.value);
      gs += std::abs(double(gt.v[i]) - gm.value);
    }
  ps /= double(n_mask);
  gs /= double(n_mask);
  if (!(ps > 0.0) || !(gs > 0.0))
    throw degenerate_error("constant masked depth: zero scale statistic");
  double aff = 0.0;
  for (size_t i = 0; i < pred.size(); ++i)
    if (detail::on(mask, i)) {
      const double ph = (double(pred.v[i]) - pm.value) / ps;
      const double gh = (double(gt.v[i]) - gm.value) / gs;
      aff += std::abs(ph - gh);
    }
  aff /= double(n_mask);

  // --- multiscale log-gradient ---
  long clamped = 0;
  detail::GradPyramidLevel<double> lvl;
  lvl.h = H;
  lvl.w = W;
  lvl.r.reshape({H, W});
  lvl.valid.reshape({H, W});
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      const size_t i = size_t(y) * W + x;
      if (!detail::on(mask, i)) continue;
      double p = double(pred.v[i]), g = double(gt.v[i]);
      if (p < detail::kLogClamp) {
        p = detail::kLogClamp;
        ++clamped;
      }
      if (g < detail::kLogClamp) {
        g = detail::kLogClamp;
        ++clamped;
      }
      lvl.r.at(y, x) = std::log(p) - std::log(g);
      lvl.valid.at(y, x) = 1.0;
    }
  constexpr int kScales = 4;
  std::vector<detail::GradPyramidLevel<double>> pyr;
  pyr.push_back(std::move(lvl));
  for (int s = 1; s < kScales; ++s) {
    if (pyr.back().h < 2 || pyr.back().w < 2) break;
    pyr.push_back(detail::downsample(pyr.back()));
  }
  double gsum = 0.0;
  std::vector<Tensor<double>> dr;
  if (grad) {
    dr.resize(pyr.size());
    for (size_t s = 0; s < pyr.size(); ++s)
      dr[s].reshape({pyr[s].h, pyr[s].w});
  }
  for (size_t s = 0; s < pyr.size(); ++s)
    gsum += detail::pair_term(pyr[s], grad ? &dr[s] : nullptr);
  const double gterm = gsum / double(kScales);

  LossParts out;
  out.comps["mse"] = mse;
  out.comps["aff"] = aff;
  out.comps["grad"] = gterm;
  out.comps["log_clamped"] = double(clamped);
  out.total = w.depth_mse * mse + w.depth_aff * aff + w.depth_grad * gterm;

  if (grad) {
    require_same_shape(pred, *grad, "loss_depth grad");
    // MSE.
    for (size_t i = 0; i < pred.size(); ++i)
      if (detail::on(mask, i))
        grad->v[i] += T(double(grad_scale) * w.depth_mse * 2.0 *
                        (double(pred.v[i]) - double(gt.v[i])) / double(n_mask));
    // SSI L1: chain through (pred - median)/scale.
    {
      double sum_g = 0.0, sum_gph = 0.0;
      std::vector<double> ghat(pred.size(), 0.0);
      for (size_t i = 0; i < pred.size(); ++i)
        if (detail::on(mask, i)) {
          const double ph = (double(pred.v[i]) - pm.value) / ps;
          const double gh = (double(gt.v[i]) - gm.value) / gs;
          const double gi = (ph > gh ? 1.0 : -1.0) / double(n_mask);
          ghat[i] = gi;
          sum_g += gi;
          sum_gph += gi * ph;
        }
      // d(median)/d(pred_j) support and d(scale)/d(pred_j).
      double sgn_sum = 0.0;
      for (size_t i = 0; i < pred.size(); ++i)
        if (detail::on(mask, i))
          sgn_sum += (double(pred.v[i]) > pm.value
                          ? 1.0
                          : (double(pred.v[i]) < pm.value ? -1.0 : 0.0));
      const double med_w = pm.lo == pm.hi ? 1.0 : 0.5;
      for (size_t j = 0; j < pred.size(); ++j) {
        if (!detail::on(mask, j)) continue;
        const double mj = (j == pm.lo ? med_w : 0.0) + (j == pm.hi && pm.hi != pm.lo ? med_w : 0.0);
        const double sgn_j = double(pred.v[j]) > pm.value
                                 ? 1.0
                                 : (double(pred.v[j]) < pm.value ? -1.0 : 0.0);
        const double sj = (sgn_j - mj * sgn_sum) / double(n_mask);
        const double d = ghat[j] / ps - mj * sum_g / ps - sj * sum_gph / ps;
        grad->v[j] += T(double(grad_scale) * w.depth_aff * d);
      }
    }
    // Log-gradient: pull coarse gradients down the pyramid, then through log.
    for (size_t s = pyr.size(); s-- > 1;)
      detail::upsample_grad(pyr[s - 1], pyr[s], dr[s], dr[s - 1]);
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x) {
        const size_t i = size_t(y) * W + x;
        if (!detail::on(mask, i)) continue;
        const double p = double(pred.v[i]);
        if (p < detail::kLogClamp) continue;  // clamped: zero slope
        grad->v[i] += T(double(grad_scale) * w.depth_grad *
                        dr[0].at(y, x) / (double(kScales) * p));
      }
  }
  return out;
}

// ---------------------------------------------------------------------------
// loss_normal: MSE on epsilon-normalized prediction + mean angular error
// through a clamped arccos, in radians.
// ---------------------------------------------------------------------------
template <typename T>
LossParts loss_normal(const Tensor<T>& pred, const Tensor<T>& gt,
                      const Tensor<T>& mask, const LossWeights& w,
                      std::type_identity_t<Tensor<T>*> grad = nullptr,
                     std::type_identity_t<T> grad_scale = T(1)) {
  w.validate();
  require_same_shape(pred, gt, "loss_normal");
  if (pred.ndim() != 3 || pred.shape[0] != 3)
    throw shape_error("loss_normal expects (3, H, W)");
  if (mask.ndim() != 2 || mask.shape[0] != pred.shape[1] ||
      mask.shape[1] != pred.shape[2])
    throw shape_error("loss_normal mask must be (H, W)");
  const size_t HW = size_t(pred.shape[1]) * size_t(pred.shape[2]);
  const double eps = detail::kNormEps;
  const double lo = -1.0 + detail::kDotClamp, hi = 1.0 - detail::kDotClamp;

  size_t n_mask = 0;
  long zero_pred = 0;
  double mse = 0.0, ang = 0.0;
  for (size_t p = 0; p < HW; ++p) {
    if (!(mask.v[p] > T(0.5))) continue;
    ++n_mask;
    double pv[3], gv[3];
    double norm2 = 0.0;
    for (int c = 0; c < 3; ++c) {
      pv[c] = double(pred.v[size_t(c) * HW + p]);
      gv[c] = double(gt.v[size_t(c) * HW + p]);
      norm2 += pv[c] * pv[c];
    }
    const double norm = std::sqrt(norm2);
    if (norm == 0.0) ++zero_pred;
    double dot = 0.0;
    for (int c = 0; c < 3; ++c) {
      const double nc = pv[c] / (norm + eps);
      const double d = nc - gv[c];
      mse += d * d;
      dot += nc * gv[c];
    }
    ang += std::acos(std::clamp(dot, lo, hi));
  }
  if (n_mask == 0) throw degenerate_error("empty mask");
  mse /= double(3 * n_mask);
  ang /= double(n_mask);

  LossParts out;
  out.comps["mse"] = mse;
  out.comps["ang"] = ang;
  out.comps["zero_pred"] = double(zero_pred);
  out.total = w.normal_mse * mse + w.normal_ang * ang;

  if (grad) {
    require_same_shape(pred, *grad, "loss_normal grad");
    for (size_t p = 0; p < HW; ++p) {
      if (!(mask.v[p] > T(0.5))) continue;
      double pv[3], gv[3], nv[3];
      double norm2 = 0.0;
      for (int c = 0; c < 3; ++c) {
        pv[c] = double(pred.v[size_t(c) * HW + p]);
        gv[c] = double(gt.v[size_t(c) * HW + p]);
        norm2 += pv[c] * pv[c];
      }
      const double norm = std::sqrt(norm2);
      double dot = 0.0;
      for (int c = 0; c < 3; ++c) {
        nv[c] = pv[c] / (norm + eps);
        dot += nv[c] * gv[c];
      }
      // d(loss)/d(n_c), then through the normalization Jacobian.
      double dn[3];
      const double dotc = std::clamp(dot, lo, hi);
      const double dang = (dot > lo && dot < hi)
                              ? -1.0 / std::sqrt(1.0 - dotc * dotc)
                              : 0.0;
      for (int c = 0; c < 3; ++c)
        dn[c] = w.normal_mse * 2.0 * (nv[c] - gv[c]) / double(3 * n_mask) +
                w.normal_ang * dang * gv[c] / double(n_mask);
      for (int c = 0; c < 3; ++c) {
        double acc = dn[c] / (norm + eps);
        if (norm > 0.0) {
          double dnp = 0.0;
          for (int k = 0; k < 3; ++k) dnp += dn[k] * pv[k];
          acc -= dnp * pv[c] / (norm * (norm + eps) * (norm + eps));
        }
        grad->v[size_t(c) * HW + p] += T(double(grad_scale) * acc);
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// loss_matting: MSE + L1 + single-scale difference-gradient, full image.
// ---------------------------------------------------------------------------
template <typename T>
LossParts loss_matting(const Tensor<T>& pred, const Tensor<T>& gt,
                       const LossWeights& w,
                       std::type_identity_t<Tensor<T>*> grad = nullptr,
                       std::type_identity_t<T> grad_scale = T(1)) {
  w.validate();
  require_same_shape(pred, gt, "loss_matting");
  if (pred.ndim() != 2) throw shape_error("loss_matting expects (H, W)");
  for (size_t i = 0; i < pred.size(); ++i) {
    if (!(pred.v[i] >= T(0) && pred.v[i] <= T(1)))
      throw range_error("matte prediction outside [0, 1]");
    if (!(gt.v[i] >= T(0) && gt.v[i] <= T(1)))
      throw range_error("matte target outside [0, 1]");
  }
  const int H = pred.shape[0], W = pred.shape[1];
  const size_t N = pred.size();

  double mse = 0.0, l1 = 0.0;
  for (size_t i = 0; i < N; ++i) {
    const double d = double(pred.v[i]) - double(gt.v[i]);
    mse += d * d;
    l1 += std::abs(d);
  }
  mse /= double(N);
  l1 /= double(N);

  double sx = 0.0, sy = 0.0;
  const long nx = long(H) * (W - 1), ny = long(H - 1) * W;
  auto diff = [&](int y, int x) {
    return double(pred.at(y, x)) - double(gt.at(y, x));
  };
  for (int y = 0; y < H; ++y)
    for (int x = 0; x + 1 < W; ++x) sx += std::abs(diff(y, x + 1) - diff(y, x));
  for (int y = 0; y + 1 < H; ++y)
    for (int x = 0; x < W; ++x) sy += std::abs(diff(y + 1, x) - diff(y, x));
  const double gterm = (nx ? sx / double(nx) : 0.0) + (ny ? sy / double(ny) : 0.0);

  LossParts out;
  out.comps["mse"] = mse;
  out.comps["l1"] = l1;
  out.comps["grad"] = gterm;
  out.total = w.matting_mse * mse + w.matting_l1 * l1 + w.matting_grad * gterm;

  if (grad) {
    require_same_shape(pred, *grad, "loss_matting grad");
    const double gs = double(grad_scale);
    for (size_t i = 0; i < N; ++i) {
      const double d = double(pred.v[i]) - double(gt.v[i]);
      grad->v[i] += T(gs * (w.matting_mse * 2.0 * d / double(N) +
                            w.matting_l1 * (d > 0 ? 1.0 : (d < 0 ? -1.0 : 0.0)) /
                                double(N)));
    }
    for (int y = 0; y < H; ++y)
      for (int x = 0; x + 1 < W; ++x) {
        const double s =
            (diff(y, x + 1) > diff(y, x) ? 1.0 : -1.0) / double(nx);
        grad->at(y, x + 1) += T(gs * w.matting_grad * s);
        grad->at(y, x) -= T(gs * w.matting_grad * s);
      }
    for (int y = 0; y + 1 < H; ++y)
      for (int x = 0; x < W; ++x) {
        const double s =
            (diff(y + 1, x) > diff(y, x) ? 1.0 : -1.0) / double(ny);
        grad->at(y + 1, x) += T(gs * w.matting_grad * s);
        grad->at(y, x) -= T(gs * w.matting_grad * s);
      }
  }
  return out;
}

}  // namespace dp
