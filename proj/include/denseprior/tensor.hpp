#pragma once

#include <cstddef>
#include <initializer_list>
#include <numeric>
#include <string>
#include <vector>

#include "denseprior/errors.hpp"

namespace dp {

// Dense row-major tensor (last index fastest). Float for training, double
// for finite-difference verification; shape is dynamic.
template <typename T>
struct Tensor {
  std::vector<int> shape;
  std::vector<T> v;

  Tensor() = default;
  explicit Tensor(std::vector<int> s) { reshape(std::move(s)); }
  Tensor(std::vector<int> s, std::initializer_list<T> init) {
    reshape(std::move(s));
    if (init.size() != v.size()) throw shape_error("initializer size mismatch");
    std::copy(init.begin(), init.end(), v.begin());
  }

  void reshape(std::vector<int> s) {
    size_t n = 1;
    for (int d : s) {
      if (d <= 0) throw shape_error("non-positive dimension " + std::to_string(d));
      n *= size_t(d);
    }
    shape = std::move(s);
    v.assign(n, T(0));
  }

  size_t size() const { return v.size(); }
  T* data() { return v.data(); }
  const T* data() const { return v.data(); }
  T& operator[](size_t i) { return v[i]; }
  const T& operator[](size_t i) const { return v[i]; }

  void fill(T x) { std::fill(v.begin(), v.end(), x); }

  int dim(size_t i) const { return shape[i]; }
  int ndim() const { return int(shape.size()); }

  // (H, W)
  T& at(int y, int x) { return v[size_t(y) * shape[1] + x]; }
  const T& at(int y, int x) const { return v[size_t(y) * shape[1] + x]; }
  // (C, H, W) planar or (H, W, C) interleaved -- caller knows which.
  T& at(int a, int b, int c) {
    return v[(size_t(a) * shape[1] + b) * shape[2] + c];
  }
  const T& at(int a, int b, int c) const {
    return v[(size_t(a) * shape[1] + b) * shape[2] + c];
  }

  template <typename U>
  Tensor<U> cast() const {
    Tensor<U> o(shape);
    for (size_t i = 0; i < v.size(); ++i) o.v[i] = U(v[i]);
    return o;
  }
};

template <typename T>
inline bool same_shape(const Tensor<T>& a, const Tensor<T>& b) {
  return a.shape == b.shape;
}

template <typename T>
inline void require_same_shape(const Tensor<T>& a, const Tensor<T>& b,
                               const char* who) {
  if (!same_shape(a, b)) throw shape_error(std::string(who) + ": shape mismatch");
}

using TensorF = Tensor<float>;
using TensorD = Tensor<double>;

}  // namespace dp
