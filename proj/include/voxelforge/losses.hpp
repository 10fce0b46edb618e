#pragma once

// Soft dice loss for training and the raw dice metric for evaluation.

#include <cstdint>
#include <span>

#include "voxelforge/tensor.hpp"
#include "voxelforge/volume.hpp"

namespace vxf {

struct DiceConfig {
  double smooth_denominator = 1e-5;
  double smooth_numerator = 0.0;
  bool include_sigmoid = true;  // the loss consumes logits

  void validate() const;
};

/// (2 sum(p g) + smooth_numerator) / (sum(p^2) + sum(g^2) + smooth_denominator),
/// accumulated in double.
template <class Real>
double dice_coefficient(std::span<const Real> p, std::span<const Real> g, const DiceConfig& cfg = {});

/// 1 - mean over (sample, channel) of the soft dice of sigmoid(logits)
/// against `target`. Both tensors are [N, C, ...]. Computes in the loss
/// precision of the active cast policy.
template <class Real>
Tensor<Real> dice_loss(const Tensor<Real>& logits, const Tensor<Real>& target, const DiceConfig& cfg = {});

struct DiceScores {
  double tc = 0.0;
  double wt = 0.0;
  double et = 0.0;
  double mean = 0.0;
};

/// Raw dice per channel of binary masks ordered (TC, WT, ET), with an empty
/// prediction of an empty target scoring 1.
DiceScores dice_metric(std::span<const float> pred, std::span<const float> gt);
DiceScores dice_metric(const Volume& pred, const Volume& gt);

}  // namespace vxf
