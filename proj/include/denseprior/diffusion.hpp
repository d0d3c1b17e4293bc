#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "denseprior/errors.hpp"
#include "denseprior/rng.hpp"
#include "denseprior/tensor.hpp"

namespace dp {

// Cumulative signal-retention coefficients for the forward corruption
// process z_t = sqrt(abar_t) z + sqrt(1 - abar_t) eps.
struct NoiseSchedule {
  int T = 0;
  std::vector<double> alpha_bar;  // length T, strictly decreasing, (0, 1]
};

// Linearly spaced betas from beta_start to beta_end; abar_t = prod(1 - beta_s).
inline NoiseSchedule make_schedule(const std::string& kind, int T,
                                   double beta_start = 1e-4,
                                   double beta_end = 0.02) {
  if (kind != "linear-beta")
    throw config_error("unknown schedule kind '" + kind + "'");
  if (T < 2) throw config_error("schedule needs T >= 2, got " + std::to_string(T));
  if (!(beta_start > 0.0 && beta_end < 1.0 && beta_start <= beta_end))
    throw config_error("betas must satisfy 0 < start <= end < 1");
  NoiseSchedule s;
  s.T = T;
  s.alpha_bar.resize(T);
  double prod = 1.0;
  for (int t = 0; t < T; ++t) {
    const double beta = beta_start + (beta_end - beta_start) * double(t) / double(T - 1);
    prod *= 1.0 - beta;
    s.alpha_bar[t] = prod;
  }
  for (int t = 0; t < T; ++t) {
    if (!(s.alpha_bar[t] > 0.0 && s.alpha_bar[t] <= 1.0))
      throw config_error("schedule left (0, 1] at t=" + std::to_string(t));
    if (t > 0 && !(s.alpha_bar[t] < s.alpha_bar[t - 1]))
      throw config_error("schedule not strictly decreasing at t=" + std::to_string(t));
  }
  return s;
}

inline void require_timestep(const NoiseSchedule& sched, int t) {
  if (t < 0 || t >= sched.T)
    throw range_error("timestep " + std::to_string(t) + " outside [0, " +
                      std::to_string(sched.T) + ")");
}

// z_t = sqrt(abar_t) z + sqrt(1 - abar_t) eps, elementwise.
template <typename T>
Tensor<T> forward_noise(const Tensor<T>& z, int t, const Tensor<T>& eps,
                        const NoiseSchedule& sched) {
  require_same_shape(z, eps, "forward_noise");
  require_timestep(sched, t);
  const double ab = sched.alpha_bar[size_t(t)];
  const T ws = T(std::sqrt(ab));
  const T wn = T(std::sqrt(1.0 - ab));
  Tensor<T> out(z.shape);
  for (size_t i = 0; i < z.size(); ++i) out.v[i] = ws * z.v[i] + wn * eps.v[i];
  return out;
}

// `count` timesteps, independent uniform over [0, T).
inline std::vector<int> sample_timestep(Rng& rng, const NoiseSchedule& sched,
                                        int count) {
  if (count < 1) throw usage_error("sample_timestep: count must be >= 1");
  std::vector<int> out(static_cast<size_t>(count), 0);
  for (int i = 0; i < count; ++i) out[size_t(i)] = rng.below_int(sched.T);
  return out;
}

// Mean squared error of a noise prediction -- the pretraining objective.
template <typename T>
double teacher_denoise_loss(const Tensor<T>& eps_pred, const Tensor<T>& eps) {
  require_same_shape(eps_pred, eps, "teacher_denoise_loss");
  double acc = 0.0;
  for (size_t i = 0; i < eps.size(); ++i) {
    const double d = double(eps_pred.v[i]) - double(eps.v[i]);
    acc += d * d;
  }
  return acc / double(eps.size());
}

// d(loss)/d(eps_pred), accumulated into grad scaled by `scale`.
template <typename T>
void teacher_denoise_loss_grad(const Tensor<T>& eps_pred, const Tensor<T>& eps,
                               Tensor<T>& grad, T scale = T(1)) {
  require_same_shape(eps_pred, eps, "teacher_denoise_loss_grad");
  require_same_shape(eps_pred, grad, "teacher_denoise_loss_grad");
  const T k = scale * T(2) / T(double(eps.size()));
  for (size_t i = 0; i < eps.size(); ++i)
    grad.v[i] += k * (eps_pred.v[i] - eps.v[i]);
}

}  // namespace dp
