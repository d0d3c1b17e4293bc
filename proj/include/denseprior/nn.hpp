#pragma once

// Neural-network building blocks with explicit forward/backward passes over
// CHW float planes: padded 3x3 convolution, 1x1 convolution, group
// normalization, SiLU, fully-connected vectors, 2x average pooling, nearest
// 2x upsampling, sinusoidal timestep embeddings, Adam, and parameter
// utilities. The convolution kernels are branch-free over a zero-padded
// image so the inner loops vectorize; the weight-gradient kernel fuses
// several rows per reduction sweep, which keeps small feature planes fast.
// Everything is single-threaded with a fixed accumulation order, so results
// are bit-reproducible.

#include <cmath>
#include <cstdint>
#include <cstring>
#include <functional>
#include <map>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include "denseprior/errors.hpp"
#include "denseprior/rng.hpp"
#include "denseprior/tensor.hpp"

namespace dp {

// A trainable tensor and its gradient accumulator.
struct Param {
  TensorF w;
  TensorF g;

  void init_shape(std::vector<int> shape) {
    w = TensorF(shape);
    g = TensorF(std::move(shape));
  }
  void zero_grad() { std::fill(g.v.begin(), g.v.end(), 0.0f); }
  size_t size() const { return w.size(); }
};

using ParamList = std::vector<std::pair<std::string, Param*>>;

inline void zero_grads(const ParamList& params) {
  for (auto& [name, p] : params) p->zero_grad();
}

// FNV-1a over names and raw weight bytes; order-sensitive, so equal
// checksums of the same parameter list mean bit-equal weights.
inline uint64_t params_checksum(const ParamList& params) {
  uint64_t h = 1469598103934665603ull;
  auto eat = [&h](const void* data, size_t n) {
    const unsigned char* b = static_cast<const unsigned char*>(data);
    for (size_t i = 0; i < n; ++i) {
      h ^= b[i];
      h *= 1099511628211ull;
    }
  };
  for (const auto& [name, p] : params) {
    eat(name.data(), name.size());
    eat(p->w.v.data(), p->w.v.size() * sizeof(float));
  }
  return h;
}

namespace nn {

// --- elementary kernels ------------------------------------------------------

// Copies a CHW image into a zero-padded (C, H+2, W+2) buffer.
inline void pad_image(const float* in, float* pad, int C, int H, int W) {
  const int Wp = W + 2, Hp = H + 2;
  for (int c = 0; c < C; ++c) {
    float* p = pad + size_t(c) * Hp * Wp;
    std::memset(p, 0, sizeof(float) * size_t(Wp));
    std::memset(p + size_t(Hp - 1) * Wp, 0, sizeof(float) * size_t(Wp));
    for (int y = 0; y < H; ++y) {
      float* row = p + size_t(y + 1) * Wp;
      row[0] = 0.0f;
      row[Wp - 1] = 0.0f;
      std::memcpy(row + 1, in + (size_t(c) * H + y) * W, sizeof(float) * size_t(W));
    }
  }
}

// out[k] = bias[k] + sum_c pad[c] * w[k][c], 3x3 taps, stride 1.
inline void conv3x3_on_padded(const float* pad, const float* w,
                              const float* bias, float* out, int C, int K,
                              int H, int W) {
  const int Wp = W + 2, Hp = H + 2;
  const size_t HW = size_t(H) * W;
  for (int k = 0; k < K; ++k) {
    float* o = out + size_t(k) * HW;
    const float bk = bias ? bias[k] : 0.0f;
    for (size_t i = 0; i < HW; ++i) o[i] = bk;
  }
  for (int c = 0; c < C; ++c) {
    const float* pc = pad + size_t(c) * Hp * Wp;
    for (int k = 0; k < K; ++k) {
      const float* wkc = w + (size_t(k) * C + c) * 9;
      float* o = out + size_t(k) * HW;
      const float a0 = wkc[0], a1 = wkc[1], a2 = wkc[2];
      const float b0 = wkc[3], b1 = wkc[4], b2 = wkc[5];
      const float c0 = wkc[6], c1 = wkc[7], c2 = wkc[8];
      for (int y = 0; y < H; ++y) {
        float* orow = o + size_t(y) * W;
        const float* r0 = pc + size_t(y) * Wp;
        const float* r1 = r0 + Wp;
        const float* r2 = r1 + Wp;
        #pragma omp simd
        for (int x = 0; x < W; ++x)
          orow[x] += a0 * r0[x] + a1 * r0[x + 1] + a2 * r0[x + 2] +
                     b0 * r1[x] + b1 * r1[x + 1] + b2 * r1[x + 2] +
                     c0 * r2[x] + c1 * r2[x + 1] + c2 * r2[x + 2];
      }
    }
  }
}

// dw[k][c][ky][kx] += sum_{y,x} dout[k][y][x] * padin[c][y+ky][x+kx],
// with R output rows fused per reduction sweep.
template <int R>
inline void conv3x3_dw_fused(const float* dout, const float* padin, float* dw,
                             int C, int K, int H, int W) {
  const int PW = W + 2;
  for (int k = 0; k < K; ++k) {
    const float* go = dout + size_t(k) * H * W;
    for (int c = 0; c < C; ++c) {
      const float* pi = padin + size_t(c) * (H + 2) * PW;
      float* w9 = dw + (size_t(k) * C + c) * 9;
      for (int ky = 0; ky < 3; ++ky) {
        float s0 = 0.0f, s1 = 0.0f, s2 = 0.0f;
        int y = 0;
        for (; y + R <= H; y += R) {
          const float* g = go + size_t(y) * W;
          const float* r = pi + size_t(y + ky) * PW;
          #pragma omp simd reduction(+ : s0, s1, s2)
          for (int x = 0; x < W; ++x) {
            float a0 = 0.0f, a1 = 0.0f, a2 = 0.0f;
            for (int j = 0; j < R; ++j) {
              const float gv = g[size_t(j) * W + x];
              const float* rr = r + size_t(j) * PW;
              a0 += gv * rr[x];
              a1 += gv * rr[x + 1];
              a2 += gv * rr[x + 2];
            }
            s0 += a0;
            s1 += a1;
            s2 += a2;
          }
        }
        for (; y < H; ++y) {
          const float* g = go + size_t(y) * W;
          const float* r = pi + size_t(y + ky) * PW;
          #pragma omp simd reduction(+ : s0, s1, s2)
          for (int x = 0; x < W; ++x) {
            s0 += g[x] * r[x];
            s1 += g[x] * r[x + 1];
            s2 += g[x] * r[x + 2];
          }
        }
        w9[ky * 3 + 0] += s0;
        w9[ky * 3 + 1] += s1;
        w9[ky * 3 + 2] += s2;
      }
    }
  }
}

inline void conv3x3_dw(const float* dout, const float* padin, float* dw, int C,
                       int K, int H, int W) {
  if (H % 8 == 0 && H <= 16)
    conv3x3_dw_fused<8>(dout, padin, dw, C, K, H, W);
  else if (H >= 4)
    conv3x3_dw_fused<4>(dout, padin, dw, C, K, H, W);
  else
    conv3x3_dw_fused<1>(dout, padin, dw, C, K, H, W);
}

}  // namespace nn

// --- layer blocks -------------------------------------------------------------
// Each block caches what its backward pass needs during forward; backward
// must follow the matching forward (single-threaded training loop contract).
// backward() accumulates into parameter gradients and returns d(input).

// 3x3 convolution, stride 1, zero padding. w: (K, C, 3, 3), b: (K).
struct Conv3Block {
  int cin = 0, cout = 0;
  Param w, b;
  std::vector<float> pad_cache;  // padded input, (cin, H+2, W+2)
  int h_ = 0, w_ = 0;

  void init(Rng& rng, int cin_, int cout_, double scale = 1.0) {
    cin = cin_;
    cout = cout_;
    w.init_shape({cout, cin, 3, 3});
    b.init_shape({cout});
    const double std = scale * std::sqrt(2.0 / (9.0 * cin));
    for (float& v : w.w.v) v = float(rng.normal() * std);
  }

  void collect(const std::string& prefix, ParamList& out) {
    out.emplace_back(prefix + ".w", &w);
    out.emplace_back(prefix + ".b", &b);
  }

  TensorF forward(const TensorF& x) {
    h_ = x.shape[1];
    w_ = x.shape[2];
    pad_cache.resize(size_t(cin) * (h_ + 2) * (w_ + 2));
    nn::pad_image(x.v.data(), pad_cache.data(), cin, h_, w_);
    TensorF y({cout, h_, w_});
    nn::conv3x3_on_padded(pad_cache.data(), w.w.v.data(), b.w.v.data(),
                          y.v.data(), cin, cout, h_, w_);
    return y;
  }

  TensorF backward(const TensorF& dy, bool need_dx = true) {
    // d(bias)
    const size_t hw = size_t(h_) * w_;
    for (int k = 0; k < cout; ++k) {
      double s = 0.0;
      const float* g = dy.v.data() + size_t(k) * hw;
      #pragma omp simd reduction(+ : s)
      for (size_t i = 0; i < hw; ++i) s += g[i];
      b.g.v[size_t(k)] += float(s);
    }
    // d(weights) from the cached padded input
    nn::conv3x3_dw(dy.v.data(), pad_cache.data(), w.g.v.data(), cin, cout, h_, w_);
    if (!need_dx) return TensorF();
    // d(input): correlate dy with spatially flipped, (k,c)-transposed weights.
    std::vector<float> wt(size_t(cin) * cout * 9);
    for (int k = 0; k < cout; ++k)
      for (int c = 0; c < cin; ++c)
        for (int i = 0; i < 9; ++i)
          wt[(size_t(c) * cout + k) * 9 + i] =
              w.w.v[(size_t(k) * cin + c) * 9 + (8 - i)];
    std::vector<float> pad_dy(size_t(cout) * (h_ + 2) * (w_ + 2));
    nn::pad_image(dy.v.data(), pad_dy.data(), cout, h_, w_);
    TensorF dx({cin, h_, w_});
    nn::conv3x3_on_padded(pad_dy.data(), wt.data(), nullptr, dx.v.data(), cout,
                          cin, h_, w_);
    return dx;
  }
};

// Pointwise (1x1) convolution. w: (K, C), b: (K).
struct Conv1Block {
  int cin = 0, cout = 0;
  Param w, b;
  TensorF in_cache;

  void init(Rng& rng, int cin_, int cout_, double scale = 1.0) {
    cin = cin_;
    cout = cout_;
    w.init_shape({cout, cin});
    b.init_shape({cout});
    const double std = scale * std::sqrt(2.0 / cin);
    for (float& v : w.w.v) v = float(rng.normal() * std);
  }

  void collect(const std::string& prefix, ParamList& out) {
    out.emplace_back(prefix + ".w", &w);
    out.emplace_back(prefix + ".b", &b);
  }

  TensorF forward(const TensorF& x) {
    in_cache = x;
    const int h = x.shape[1], wd = x.shape[2];
    const size_t hw = size_t(h) * wd;
    TensorF y({cout, h, wd});
    for (int k = 0; k < cout; ++k) {
      float* o = y.v.data() + size_t(k) * hw;
      const float bk = b.w.v[size_t(k)];
      for (size_t i = 0; i < hw; ++i) o[i] = bk;
      for (int c = 0; c < cin; ++c) {
        const float wkc = w.w.v[size_t(k) * cin + c];
        const float* xi = x.v.data() + size_t(c) * hw;
        #pragma omp simd
        for (size_t i = 0; i < hw; ++i) o[i] += wkc * xi[i];
      }
    }
    return y;
  }

  TensorF backward(const TensorF& dy, bool need_dx = true) {
    const int h = in_cache.shape[1], wd = in_cache.shape[2];
    const size_t hw = size_t(h) * wd;
    for (int k = 0; k < cout; ++k) {
      const float* g = dy.v.data() + size_t(k) * hw;
      double bs = 0.0;
      for (size_t i = 0; i < hw; ++i) bs += g[i];
      b.g.v[size_t(k)] += float(bs);
      for (int c = 0; c < cin; ++c) {
        const float* xi = in_cache.v.data() + size_t(c) * hw;
        float s = 0.0f;
        #pragma omp simd reduction(+ : s)
        for (size_t i = 0; i < hw; ++i) s += g[i] * xi[i];
        w.g.v[size_t(k) * cin + c] += s;
      }
    }
    if (!need_dx) return TensorF();
    TensorF dx({cin, h, wd});
    for (int c = 0; c < cin; ++c) {
      float* o = dx.v.data() + size_t(c) * hw;
      for (int k = 0; k < cout; ++k) {
        const float wkc = w.w.v[size_t(k) * cin + c];
        const float* g = dy.v.data() + size_t(k) * hw;
        #pragma omp simd
        for (size_t i = 0; i < hw; ++i) o[i] += wkc * g[i];
      }
    }
    return dx;
  }
};

// Group normalization with per-channel affine. Groups = gcd(C, 8).
struct GroupNormBlock {
  static constexpr float kEps = 1e-5f;
  int channels = 0, groups = 0;
  Param gamma, beta;
  TensorF xhat_cache;
  std::vector<float> inv_std_;

  void init(int channels_) {
    channels = channels_;
    groups = int(std::gcd(channels_, 8));
    gamma.init_shape({channels});
    beta.init_shape({channels});
    std::fill(gamma.w.v.begin(), gamma.w.v.end(), 1.0f);
  }

  void collect(const std::string& prefix, ParamList& out) {
    out.emplace_back(prefix + ".g", &gamma);
    out.emplace_back(prefix + ".b", &beta);
  }

  TensorF forward(const TensorF& x) {
    const int h = x.shape[1], wd = x.shape[2];
    const size_t hw = size_t(h) * wd;
    const int cpg = channels / groups;
    xhat_cache = TensorF({channels, h, wd});
    inv_std_.assign(size_t(groups), 0.0f);
    TensorF y({channels, h, wd});
    for (int g = 0; g < groups; ++g) {
      const size_t base = size_t(g) * cpg * hw;
      const size_t m = size_t(cpg) * hw;
      double mean = 0.0;
      #pragma omp simd reduction(+ : mean)
      for (size_t i = 0; i < m; ++i) mean += x.v[base + i];
      mean /= double(m);
      double var = 0.0;
      #pragma omp simd reduction(+ : var)
      for (size_t i = 0; i < m; ++i) {
        const double d = x.v[base + i] - mean;
        var += d * d;
      }
      var /= double(m);
      const float is = float(1.0 / std::sqrt(var + kEps));
      inv_std_[size_t(g)] = is;
      const float mu = float(mean);
      for (int cc = 0; cc < cpg; ++cc) {
        const int c = g * cpg + cc;
        const float ga = gamma.w.v[size_t(c)], be = beta.w.v[size_t(c)];
        const float* xi = x.v.data() + size_t(c) * hw;
        float* xh = xhat_cache.v.data() + size_t(c) * hw;
        float* o = y.v.data() + size_t(c) * hw;
        #pragma omp simd
        for (size_t i = 0; i < hw; ++i) {
          xh[i] = (xi[i] - mu) * is;
          o[i] = ga * xh[i] + be;
        }
      }
    }
    return y;
  }

  TensorF backward(const TensorF& dy) {
    const int h = xhat_cache.shape[1], wd = xhat_cache.shape[2];
    const size_t hw = size_t(h) * wd;
    const int cpg = channels / groups;
    TensorF dx({channels, h, wd});
    for (int g = 0; g < groups; ++g) {
      const size_t m = size_t(cpg) * hw;
      double sum_dxh = 0.0, sum_dxh_xh = 0.0;
      for (int cc = 0; cc < cpg; ++cc) {
        const int c = g * cpg + cc;
        const float ga = gamma.w.v[size_t(c)];
        const float* gv = dy.v.data() + size_t(c) * hw;
        const float* xh = xhat_cache.v.data() + size_t(c) * hw;
        double dgam = 0.0, dbet = 0.0;
        #pragma omp simd reduction(+ : dgam, dbet, sum_dxh, sum_dxh_xh)
        for (size_t i = 0; i < hw; ++i) {
          dgam += double(gv[i]) * xh[i];
          dbet += gv[i];
          const double dxh = double(gv[i]) * ga;
          sum_dxh += dxh;
          sum_dxh_xh += dxh * xh[i];
        }
        gamma.g.v[size_t(c)] += float(dgam);
        beta.g.v[size_t(c)] += float(dbet);
      }
      const float mean_dxh = float(sum_dxh / double(m));
      const float mean_dxh_xh = float(sum_dxh_xh / double(m));
      const float is = inv_std_[size_t(g)];
      for (int cc = 0; cc < cpg; ++cc) {
        const int c = g * cpg + cc;
        const float ga = gamma.w.v[size_t(c)];
        const float* gv = dy.v.data() + size_t(c) * hw;
        const float* xh = xhat_cache.v.data() + size_t(c) * hw;
        float* o = dx.v.data() + size_t(c) * hw;
        #pragma omp simd
        for (size_t i = 0; i < hw; ++i)
          o[i] = is * (gv[i] * ga - mean_dxh - xh[i] * mean_dxh_xh);
      }
    }
    return dx;
  }
};

// SiLU over a tensor, with input cached for the backward pass.
struct SiluOp {
  TensorF in_cache;

  TensorF forward(const TensorF& x) {
    in_cache = x;
    TensorF y(x.shape);
    for (size_t i = 0; i < x.size(); ++i) {
      const float s = 1.0f / (1.0f + std::exp(-x.v[i]));
      y.v[i] = x.v[i] * s;
    }
    return y;
  }

  TensorF backward(const TensorF& dy) {
    TensorF dx(in_cache.shape);
    for (size_t i = 0; i < dx.size(); ++i) {
      const float s = 1.0f / (1.0f + std::exp(-in_cache.v[i]));
      dx.v[i] = dy.v[i] * s * (1.0f + in_cache.v[i] * (1.0f - s));
    }
    return dx;
  }
};

// Fully connected map over flat vectors. w: (Out, In), b: (Out).
struct LinearBlock {
  int nin = 0, nout = 0;
  Param w, b;
  std::vector<float> in_cache;

  void init(Rng& rng, int nin_, int nout_, double scale = 1.0) {
    nin = nin_;
    nout = nout_;
    w.init_shape({nout, nin});
    b.init_shape({nout});
    const double std = scale * std::sqrt(1.0 / nin);
    for (float& v : w.w.v) v = float(rng.normal() * std);
  }

  void collect(const std::string& prefix, ParamList& out) {
    out.emplace_back(prefix + ".w", &w);
    out.emplace_back(prefix + ".b", &b);
  }

  std::vector<float> forward(const std::vector<float>& x) {
    if (int(x.size()) != nin)
      throw shape_error("linear layer input size mismatch");
    in_cache = x;
    std::vector<float> y(size_t(nout), 0.0f);
    for (int k = 0; k < nout; ++k) {
      float s = b.w.v[size_t(k)];
      const float* wr = w.w.v.data() + size_t(k) * nin;
      #pragma omp simd reduction(+ : s)
      for (int i = 0; i < nin; ++i) s += wr[i] * x[size_t(i)];
      y[size_t(k)] = s;
    }
    return y;
  }

  std::vector<float> backward(const std::vector<float>& dy) {
    std::vector<float> dx(size_t(nin), 0.0f);
    for (int k = 0; k < nout; ++k) {
      const float g = dy[size_t(k)];
      b.g.v[size_t(k)] += g;
      float* wg = w.g.v.data() + size_t(k) * nin;
      const float* wr = w.w.v.data() + size_t(k) * nin;
      #pragma omp simd
      for (int i = 0; i < nin; ++i) {
        wg[i] += g * in_cache[size_t(i)];
        dx[size_t(i)] += g * wr[i];
      }
    }
    return dx;
  }
};

// SiLU over flat vectors (timestep-embedding pathway).
struct SiluVecOp {
  std::vector<float> in_cache;

  std::vector<float> forward(const std::vector<float>& x) {
    in_cache = x;
    std::vector<float> y(x.size());
    for (size_t i = 0; i < x.size(); ++i) {
      const float s = 1.0f / (1.0f + std::exp(-x[i]));
      y[i] = x[i] * s;
    }
    return y;
  }

  std::vector<float> backward(const std::vector<float>& dy) {
    std::vector<float> dx(in_cache.size());
    for (size_t i = 0; i < dx.size(); ++i) {
      const float s = 1.0f / (1.0f + std::exp(-in_cache[i]));
      dx[i] = dy[i] * s * (1.0f + in_cache[i] * (1.0f - s));
    }
    return dx;
  }
};

// 2x2 average pooling, stride 2.
inline TensorF avgpool2_forward(const TensorF& x) {
  const int c = x.shape[0], h = x.shape[1], w = x.shape[2];
  TensorF y({c, h / 2, w / 2});
  for (int ci = 0; ci < c; ++ci)
    for (int yy = 0; yy < h / 2; ++yy)
      for (int xx = 0; xx < w / 2; ++xx)
        y.at(ci, yy, xx) = 0.25f * (x.at(ci, 2 * yy, 2 * xx) +
                                    x.at(ci, 2 * yy, 2 * xx + 1) +
                                    x.at(ci, 2 * yy + 1, 2 * xx) +
                                    x.at(ci, 2 * yy + 1, 2 * xx + 1));
  return y;
}

inline TensorF avgpool2_backward(const TensorF& dy) {
  const int c = dy.shape[0], h = dy.shape[1] * 2, w = dy.shape[2] * 2;
  TensorF dx({c, h, w});
  for (int ci = 0; ci < c; ++ci)
    for (int yy = 0; yy < dy.shape[1]; ++yy)
      for (int xx = 0; xx < dy.shape[2]; ++xx) {
        const float g = 0.25f * dy.at(ci, yy, xx);
        dx.at(ci, 2 * yy, 2 * xx) = g;
        dx.at(ci, 2 * yy, 2 * xx + 1) = g;
        dx.at(ci, 2 * yy + 1, 2 * xx) = g;
        dx.at(ci, 2 * yy + 1, 2 * xx + 1) = g;
      }
  return dx;
}

// Nearest-neighbor 2x upsampling.
inline TensorF upsample2_forward(const TensorF& x) {
  const int c = x.shape[0], h = x.shape[1], w = x.shape[2];
  TensorF y({c, h * 2, w * 2});
  for (int ci = 0; ci < c; ++ci)
    for (int yy = 0; yy < h; ++yy)
      for (int xx = 0; xx < w; ++xx) {
        const float v = x.at(ci, yy, xx);
        y.at(ci, 2 * yy, 2 * xx) = v;
        y.at(ci, 2 * yy, 2 * xx + 1) = v;
        y.at(ci, 2 * yy + 1, 2 * xx) = v;
        y.at(ci, 2 * yy + 1, 2 * xx + 1) = v;
      }
  return y;
}

inline TensorF upsample2_backward(const TensorF& dy) {
  const int c = dy.shape[0], h = dy.shape[1] / 2, w = dy.shape[2] / 2;
  TensorF dx({c, h, w});
  for (int ci = 0; ci < c; ++ci)
    for (int yy = 0; yy < h; ++yy)
      for (int xx = 0; xx < w; ++xx)
        dx.at(ci, yy, xx) = dy.at(ci, 2 * yy, 2 * xx) +
                            dy.at(ci, 2 * yy, 2 * xx + 1) +
                            dy.at(ci, 2 * yy + 1, 2 * xx) +
                            dy.at(ci, 2 * yy + 1, 2 * xx + 1);
  return dx;
}

// Sinusoidal timestep embedding: [sin(t*f_i), cos(t*f_i)] with log-spaced
// frequencies f_i = 10000^(-i / (dim/2)). dim must be even.
inline std::vector<float> sinusoidal_embedding(int t, int dim) {
  if (dim < 2 || dim % 2 != 0)
    throw config_error("timestep embedding dim must be even and >= 2");
  const int half = dim / 2;
  std::vector<float> e(size_t(dim), 0.0f);
  for (int i = 0; i < half; ++i) {
    const double f = std::exp(-std::log(10000.0) * double(i) / double(half));
    e[size_t(i)] = float(std::sin(t * f));
    e[size_t(half + i)] = float(std::cos(t * f));
  }
  return e;
}

// --- optimizer ----------------------------------------------------------------

// Adam with optional decoupled weight decay. Slot state is keyed by
// parameter name, so one optimizer instance survives checkpoint reloads of
// the same parameter set.
class Adam {
 public:
  double lr = 1e-4;
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  double weight_decay = 0.0;

  explicit Adam(double lr_ = 1e-4, double weight_decay_ = 0.0)
      : lr(lr_), weight_decay(weight_decay_) {}

  int64_t steps_taken() const { return t_; }

  void step(const ParamList& params) {
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1, double(t_));
    const double bc2 = 1.0 - std::pow(beta2, double(t_));
    for (const auto& [name, p] : params) {
      Slot& s = slots_[name];
      if (s.m.size() != p->size()) {
        s.m.assign(p->size(), 0.0f);
        s.v.assign(p->size(), 0.0f);
      }
      for (size_t i = 0; i < p->size(); ++i) {
        const double g = p->g.v[i];
        s.m[i] = float(beta1 * s.m[i] + (1.0 - beta1) * g);
        s.v[i] = float(beta2 * s.v[i] + (1.0 - beta2) * g * g);
        const double mhat = s.m[i] / bc1;
        const double vhat = s.v[i] / bc2;
        double upd = lr * mhat / (std::sqrt(vhat) + eps);
        if (weight_decay > 0.0) upd += lr * weight_decay * p->w.v[i];
        p->w.v[i] = float(p->w.v[i] - upd);
      }
    }
  }

 private:
  struct Slot {
    std::vector<float> m, v;
  };
  int64_t t_ = 0;
  std::map<std::string, Slot> slots_;
};

}  // namespace dp
