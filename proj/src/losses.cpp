#include "voxelforge/losses.hpp"

#include <cmath>

#include "voxelforge/errors.hpp"

namespace vxf {
namespace {

double logistic(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double binary_dice(std::span<const float> p, std::span<const float> g) {
  double inter = 0.0, sp = 0.0, sg = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if ((p[i] != 0.0f && p[i] != 1.0f) || (g[i] != 0.0f && g[i] != 1.0f))
      throw DataError("dice_metric expects binary masks");
    inter += p[i] * g[i];
    sp += p[i];
    sg += g[i];
  }
  if (sp + sg == 0.0) return 1.0;
  return 2.0 * inter / (sp + sg);
}

}  // namespace

void DiceConfig::validate() const {
  if (!(smooth_denominator >= 0.0) || !(smooth_numerator >= 0.0))
    throw UsageError("dice smoothing terms must be non-negative");
}

template <class Real>
double dice_coefficient(std::span<const Real> p, std::span<const Real> g, const DiceConfig& cfg) {
  cfg.validate();
  if (p.size() != g.size()) throw ShapeError("dice_coefficient: operands differ in size");
  double pg = 0.0, pp = 0.0, gg = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double a = p[i], b = g[i];
    pg += a * b;
    pp += a * a;
    gg += b * b;
  }
  return (2.0 * pg + cfg.smooth_numerator) / (pp + gg + cfg.smooth_denominator);
}

template <class Real>
Tensor<Real> dice_loss(const Tensor<Real>& logits, const Tensor<Real>& target, const DiceConfig& cfg) {
  cfg.validate();
  if (!logits.defined() || !target.defined()) throw UsageError("dice_loss: undefined argument");
  if (logits.shape() != target.shape())
    throw ShapeError("dice_loss: logits " + shape_string(logits.shape()) + " vs target " +
                     shape_string(target.shape()));
  if (logits.rank() < 2) throw ShapeError("dice_loss: expected [N, C, ...]");
  const std::int64_t pairs = logits.dim(0) * logits.dim(1);
  const std::int64_t S = logits.numel() / pairs;
  const Precision cp = compute_precision<Real>(OpCategory::kLoss);
  const auto l = logits.data();
  const auto g = target.data();

  auto p = std::make_shared<std::vector<double>>(l.size());
  auto terms = std::make_shared<std::vector<double>>(static_cast<std::size_t>(2 * pairs));
  double total = 0.0;
  for (std::int64_t k = 0; k < pairs; ++k) {
    double pg = 0.0, pp = 0.0, gg = 0.0;
    for (std::int64_t i = k * S; i < (k + 1) * S; ++i) {
      const double pi = cfg.include_sigmoid ? logistic(l[i]) : static_cast<double>(l[i]);
      (*p)[i] = pi;
      pg += pi * g[i];
      pp += pi * pi;
      gg += static_cast<double>(g[i]) * g[i];
    }
    const double num = 2.0 * pg + cfg.smooth_numerator;
    const double den = pp + gg + cfg.smooth_denominator;
    (*terms)[2 * k] = num;
    (*terms)[2 * k + 1] = den;
    total += num / den;
  }
  const double loss = 1.0 - total / static_cast<double>(pairs);
  Tensor<Real> out = Tensor<Real>::from_data({}, {static_cast<Real>(loss)}, cp);
  if (should_record<Real>({&logits, &target})) {
    auto sl = logits.storage();
    auto st = target.storage();
    auto* so = out.storage().get();
    const bool sig = cfg.include_sigmoid;
    Tape<Real>::current()->record(out.storage(), [sl, st, so, p, terms, pairs, S, sig, cp] {
      if (!sl->requires_grad) return;
      const double seed = so->grad[0];
      const double w = -seed / static_cast<double>(pairs);
      std::vector<Real> dl(sl->data.size());
      for (std::int64_t k = 0; k < pairs; ++k) {
        const double num = (*terms)[2 * k], den = (*terms)[2 * k + 1];
        const double inv = 1.0 / (den * den);
        for (std::int64_t i = k * S; i < (k + 1) * S; ++i) {
          const double pi = (*p)[i];
          double d = (2.0 * st->data[i] * den - num * 2.0 * pi) * inv;
          if (sig) d *= pi * (1.0 - pi);
          dl[i] = static_cast<Real>(w * d);
        }
      }
      accumulate_gradient<Real>(*sl, dl, cp);
    });
  }
  return out;
}

DiceScores dice_metric(std::span<const float> pred, std::span<const float> gt) {
  if (pred.size() != gt.size()) throw ShapeError("dice_metric: masks differ in size");
  if (pred.size() % 3 != 0) throw ShapeError("dice_metric: expected three channels");
  const std::size_t n = pred.size() / 3;
  DiceScores s;
  s.tc = binary_dice(pred.subspan(0, n), gt.subspan(0, n));
  s.wt = binary_dice(pred.subspan(n, n), gt.subspan(n, n));
  s.et = binary_dice(pred.subspan(2 * n, n), gt.subspan(2 * n, n));
  s.mean = (s.tc + s.wt + s.et) / 3.0;
  return s;
}

DiceScores dice_metric(const Volume& pred, const Volume& gt) {
  if (pred.channels() != 3 || gt.channels() != 3 || pred.dims() != gt.dims())
    throw ShapeError("dice_metric: expected two 3-channel masks on the same grid");
  return dice_metric(pred.data(), gt.data());
}

template double dice_coefficient(std::span<const float>, std::span<const float>, const DiceConfig&);
template double dice_coefficient(std::span<const double>, std::span<const double>, const DiceConfig&);
template Tensor<float> dice_loss(const Tensor<float>&, const Tensor<float>&, const DiceConfig&);
template Tensor<double> dice_loss(const Tensor<double>&, const Tensor<double>&, const DiceConfig&);

}  // namespace vxf
