#pragma once

#include <vector>

#include "denseprior/tensor.hpp"

namespace dp {

// Where a bundle of intermediate feature maps came from.
enum class TapTag { student_clean, teacher_at_t };

// Feature maps extracted at the designated decoder blocks, one (C, H, W)
// tensor per tap, in tap-index order.
template <typename T>
struct TapBundleT {
  TapTag tag = TapTag::student_clean;
  int t = -1;  // timestep for teacher_at_t bundles; -1 otherwise
  std::vector<Tensor<T>> taps;
};

using TapBundle = TapBundleT<float>;

}  // namespace dp
