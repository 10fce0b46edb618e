#pragma once

// Differentiable operators over Tensor. Each op computes in the precision
// the active cast policy assigns to its category and records a backward rule
// when a tape is active and some input requires a gradient.

#include <cstdint>

#include "voxelforge/tensor.hpp"

namespace vxf {

template <class Real>
Tensor<Real> add(const Tensor<Real>& a, const Tensor<Real>& b);

template <class Real>
Tensor<Real> mul(const Tensor<Real>& a, const Tensor<Real>& b);

template <class Real>
Tensor<Real> scale(const Tensor<Real>& x, Real alpha);

/// Scalar sum of all elements, accumulated in double.
template <class Real>
Tensor<Real> sum(const Tensor<Real>& x);

template <class Real>
Tensor<Real> relu(const Tensor<Real>& x);

template <class Real>
Tensor<Real> sigmoid(const Tensor<Real>& x);

/// Identifies one dropout site at one training step. The mask is a pure
/// function of (seed, layer, step, element index).
struct DropoutKey {
  std::uint64_t seed = 0;
  std::uint64_t layer = 0;
  std::uint64_t step = 0;
};

/// Inverted dropout. Identity when !training or p == 0.
template <class Real>
Tensor<Real> dropout(const Tensor<Real>& x, double p, bool training, const DropoutKey& key);

/// x [N, Cin, D, H, W], w [Cout, Cin, k, k, k], b [Cout] or undefined.
template <class Real>
Tensor<Real> conv3d(const Tensor<Real>& x, const Tensor<Real>& w, const Tensor<Real>& b,
                    std::int64_t stride, std::int64_t pad);

/// x [N, C, ...]; gamma and beta [C].
template <class Real>
Tensor<Real> group_norm(const Tensor<Real>& x, std::int64_t groups, const Tensor<Real>& gamma,
                        const Tensor<Real>& beta, double eps = 1e-5);

/// [N, C, D, H, W] -> [N, C, 2D, 2H, 2W], half-pixel centres, edge clamped.
template <class Real>
Tensor<Real> trilinear_upsample2x(const Tensor<Real>& x);

/// Retags (and for half, rounds) a float tensor; gradients pass through.
template <class Real>
Tensor<Real> cast(const Tensor<Real>& x, Precision precision);

}  // namespace vxf
