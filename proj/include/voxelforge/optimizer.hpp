#pragma once

// Adam with coupled L2 regularisation.

#include <cstdint>
#include <span>
#include <vector>

#include "voxelforge/tensor.hpp"

namespace vxf {

struct AdamConfig {
  double learning_rate = 1e-4;
  double weight_decay = 1e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  void validate() const;
};

template <class Real>
struct AdamState {
  std::vector<std::vector<Real>> m;
  std::vector<std::vector<Real>> v;
  std::int64_t t = 0;

  /// Zero moments shaped like `params`.
  static AdamState zeros_like(std::span<const Tensor<Real>> params);
};

/// g' = g + weight_decay * theta; m, v updated with g'; bias-corrected step
/// theta -= lr * m_hat / (sqrt(v_hat) + eps). Increments t.
template <class Real>
void adam_step(std::span<Tensor<Real>> params, AdamState<Real>& state, const AdamConfig& cfg);

}  // namespace vxf
