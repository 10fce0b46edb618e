#include "voxelforge/loss_scaler.hpp"

#include <cmath>

#include "voxelforge/errors.hpp"

namespace vxf {

bool is_power_of_two(double x) noexcept {
  if (!(x > 0.0) || !std::isfinite(x)) return false;
  int exp = 0;
  return std::frexp(x, &exp) == 0.5;
}

void LossScalerConfig::validate() const {
  if (!is_power_of_two(initial_scale)) throw UsageError("loss scale must be a power of two");
  if (!is_power_of_two(growth_factor) || growth_factor <= 1.0)
    throw UsageError("loss scale growth factor must be a power of two above 1");
  if (!is_power_of_two(backoff_factor) || backoff_factor >= 1.0)
    throw UsageError("loss scale backoff factor must be a power of two below 1");
  if (growth_interval < 1) throw UsageError("loss scale growth interval must be >= 1");
}

LossScaler::LossScaler(const LossScalerConfig& config) : config_(config), scale_(config.initial_scale) {
  config_.validate();
}

void LossScaler::restore(double scale, std::int64_t good_steps) {
  if (!is_power_of_two(scale)) throw UsageError("restored loss scale is not a power of two");
  if (good_steps < 0 || good_steps >= config_.growth_interval)
    throw UsageError("restored good-step counter out of range");
  scale_ = scale;
  good_steps_ = good_steps;
}

void LossScaler::on_overflow() noexcept {
  scale_ *= config_.backoff_factor;
  good_steps_ = 0;
}

void LossScaler::on_finite_step() noexcept {
  if (++good_steps_ == config_.growth_interval) {
    scale_ *= config_.growth_factor;
    good_steps_ = 0;
  }
}

template <class Real>
bool scaled_backward(const Tensor<Real>& loss, LossScaler& scaler) {
  if (!std::isfinite(static_cast<double>(loss.item()))) {
    scaler.on_overflow();
    return false;
  }
  backward(loss, static_cast<Real>(scaler.scale()));
  return true;
}

template <class Real>
StepDecision unscale_check_step(std::span<Tensor<Real>> params, LossScaler& scaler) {
  for (const Tensor<Real>& p : params) {
    if (!p.has_grad()) continue;
    for (Real g : p.grad())
      if (!std::isfinite(g)) {
        scaler.on_overflow();
        return StepDecision::kSkip;
      }
  }
  const Real inv = static_cast<Real>(1.0 / scaler.scale());
  for (Tensor<Real>& p : params) {
    if (!p.has_grad()) continue;
    for (Real& g : p.mutable_grad()) g *= inv;
  }
  scaler.on_finite_step();
  return StepDecision::kProceed;
}

template bool scaled_backward(const Tensor<float>&, LossScaler&);
template bool scaled_backward(const Tensor<double>&, LossScaler&);
template StepDecision unscale_check_step(std::span<Tensor<float>>, LossScaler&);
template StepDecision unscale_check_step(std::span<Tensor<double>>, LossScaler&);

}  // namespace vxf
