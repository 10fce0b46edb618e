#pragma once

// Dynamic loss scaling for half-precision backward passes.

#include <cstdint>
#include <span>

#include "voxelforge/tensor.hpp"

namespace vxf {

struct LossScalerConfig {
  double initial_scale = 65536.0;
  double growth_factor = 2.0;
  double backoff_factor = 0.5;
  std::int64_t growth_interval = 200;

  /// Scale and factors must be powers of two, growth > 1 > backoff > 0.
  void validate() const;
};

class LossScaler {
 public:
  explicit LossScaler(const LossScalerConfig& config = {});

  double scale() const noexcept { return scale_; }
  std::int64_t good_steps() const noexcept { return good_steps_; }
  const LossScalerConfig& config() const noexcept { return config_; }

  /// Restores a saved state; throws UsageError for a non power of two scale
  /// or a counter outside [0, growth_interval).
  void restore(double scale, std::int64_t good_steps);

  void on_overflow() noexcept;
  void on_finite_step() noexcept;

 private:
  LossScalerConfig config_;
  double scale_;
  std::int64_t good_steps_ = 0;
};

enum class StepDecision { kProceed, kSkip };

bool is_power_of_two(double x) noexcept;

/// Runs backward with d(loss)/d(loss) = scale. A non-finite loss is an
/// overflow: backward is not run, the scaler backs off and false is returned.
template <class Real>
bool scaled_backward(const Tensor<Real>& loss, LossScaler& scaler);

/// Divides every parameter gradient by the scale. Any non-finite gradient
/// means skip: the scaler backs off and gradients are left as they were.
/// Otherwise the good-step counter advances (growing the scale at the
/// interval) and the step may proceed.
template <class Real>
StepDecision unscale_check_step(std::span<Tensor<Real>> params, LossScaler& scaler);

}  // namespace vxf
