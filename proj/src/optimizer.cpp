#include "voxelforge/optimizer.hpp"

#include <cmath>

#include "voxelforge/errors.hpp"

namespace vxf {

void AdamConfig::validate() const {
  if (!(learning_rate > 0.0)) throw UsageError("learning_rate must be positive");
  if (!(weight_decay >= 0.0)) throw UsageError("weight_decay must be non-negative");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0))
    throw UsageError("Adam betas must be in [0, 1)");
  if (!(eps > 0.0)) throw UsageError("adam_eps must be positive");
}

template <class Real>
AdamState<Real> AdamState<Real>::zeros_like(std::span<const Tensor<Real>> params) {
  AdamState s;
  for (const auto& p : params) {
    s.m.emplace_back(p.data().size(), Real(0));
    s.v.emplace_back(p.data().size(), Real(0));
  }
  return s;
}

template <class Real>
void adam_step(std::span<Tensor<Real>> params, AdamState<Real>& state, const AdamConfig& cfg) {
  cfg.validate();
  if (state.m.size() != params.size() || state.v.size() != params.size())
    throw ShapeError("optimizer state does not match the parameter list");
  for (std::size_t i = 0; i < params.size(); ++i)
    if (state.m[i].size() != params[i].data().size() || state.v[i].size() != params[i].data().size())
      throw ShapeError("optimizer moment " + std::to_string(i) + " does not match its parameter");
  ++state.t;
  const Real b1 = static_cast<Real>(cfg.beta1), b2 = static_cast<Real>(cfg.beta2);
  const Real wd = static_cast<Real>(cfg.weight_decay);
  const Real lr = static_cast<Real>(cfg.learning_rate), eps = static_cast<Real>(cfg.eps);
  const Real c1 = static_cast<Real>(1.0 - std::pow(cfg.beta1, static_cast<double>(state.t)));
  const Real c2 = static_cast<Real>(1.0 - std::pow(cfg.beta2, static_cast<double>(state.t)));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto theta = params[i].mutable_data();
    const auto grad = params[i].grad();
    auto& m = state.m[i];
    auto& v = state.v[i];
    for (std::size_t k = 0; k < theta.size(); ++k) {
      const Real g = grad[k] + wd * theta[k];
      m[k] = b1 * m[k] + (Real(1) - b1) * g;
      v[k] = b2 * v[k] + (Real(1) - b2) * g * g;
      const Real m_hat = m[k] / c1;
      const Real v_hat = v[k] / c2;
      theta[k] -= lr * m_hat / (std::sqrt(v_hat) + eps);
    }
  }
}

template struct AdamState<float>;
template struct AdamState<double>;
template void adam_step(std::span<Tensor<float>>, AdamState<float>&, const AdamConfig&);
template void adam_step(std::span<Tensor<double>>, AdamState<double>&, const AdamConfig&);

}  // namespace vxf
