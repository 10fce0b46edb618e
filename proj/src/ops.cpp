#include "voxelforge/ops.hpp"

#include <algorithm>
#include <cmath>

#include "voxelforge/conv_kernels.hpp"
#include "voxelforge/errors.hpp"
#include "voxelforge/rng.hpp"

namespace vxf {
namespace {

template <class Real>
using StoragePtr = std::shared_ptr<TensorStorage<Real>>;

template <class Real>
using Buffer = std::shared_ptr<const std::vector<Real>>;

template <class Real>
void require(const Tensor<Real>& t, const char* op) {
  if (!t.defined()) throw UsageError(std::string(op) + ": undefined tensor argument");
}

template <class Real>
void record(const Tensor<Real>& out, std::function<void()> fn) {
  Tape<Real>::current()->record(out.storage(), std::move(fn));
}

// Operand as the op sees it: rounded to half when the op computes in half
// and the tensor is not already half-valued, otherwise the stored values.
template <class Real>
Buffer<Real> operand(const Tensor<Real>& t, Precision compute) {
  if (compute == Precision::kHalf && t.precision() != Precision::kHalf) {
    auto copy = std::make_shared<std::vector<Real>>(t.data().begin(), t.data().end());
    apply_precision<Real>(*copy, Precision::kHalf);
    return copy;
  }
  return Buffer<Real>(t.storage(), &t.storage()->data);
}

template <class Real, class Fn>
Tensor<Real> unary(const Tensor<Real>& x, OpCategory category, Fn&& fn) {
  const Precision cp = compute_precision<Real>(category);
  const Buffer<Real> in = operand(x, cp);
  std::vector<Real> y(in->size());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = fn((*in)[i]);
  return Tensor<Real>::from_data(x.shape(), std::move(y), cp);
}

struct UpsampleTap {
  std::int64_t i0, i1;
  double w1;
};

std::vector<UpsampleTap> upsample_taps(std::int64_t n) {
  std::vector<UpsampleTap> taps(static_cast<std::size_t>(2 * n));
  for (std::int64_t o = 0; o < 2 * n; ++o) {
    const double src = std::max(0.0, (static_cast<double>(o) + 0.5) / 2.0 - 0.5);
    const auto i0 = static_cast<std::int64_t>(std::floor(src));
    taps[static_cast<std::size_t>(o)] = {i0, std::min(i0 + 1, n - 1), src - static_cast<double>(i0)};
  }
  return taps;
}

}  // namespace

template <class Real>
Tensor<Real> add(const Tensor<Real>& a, const Tensor<Real>& b) {
  require(a, "add");
  require(b, "add");
  if (a.shape() != b.shape())
    throw ShapeError("add: shape " + shape_string(a.shape()) + " vs " + shape_string(b.shape()));
  const Precision cp = compute_precision<Real>(OpCategory::kElementwise);
  const Buffer<Real> ad = operand(a, cp), bd = operand(b, cp);
  std::vector<Real> y(ad->size());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = (*ad)[i] + (*bd)[i];
  Tensor<Real> out = Tensor<Real>::from_data(a.shape(), std::move(y), cp);
  if (should_record<Real>({&a, &b})) {
    StoragePtr<Real> sa = a.storage(), sb = b.storage();
    auto* so = out.storage().get();
    record(out, [sa, sb, so, cp] {
      if (sa->requires_grad) accumulate_gradient<Real>(*sa, so->grad, cp);
      if (sb->requires_grad) accumulate_gradient<Real>(*sb, so->grad, cp);
    });
  }
  return out;
}

template <class Real>
Tensor<Real> mul(const Tensor<Real>& a, const Tensor<Real>& b) {
  require(a, "mul");
  require(b, "mul");
  if (a.shape() != b.shape())
    throw ShapeError("mul: shape " + shape_string(a.shape()) + " vs " + shape_string(b.shape()));
  const Precision cp = compute_precision<Real>(OpCategory::kElementwise);
  const Buffer<Real> ad = operand(a, cp), bd = operand(b, cp);
  std::vector<Real> y(ad->size());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = (*ad)[i] * (*bd)[i];
  Tensor<Real> out = Tensor<Real>::from_data(a.shape(), std::move(y), cp);
  if (should_record<Real>({&a, &b})) {
    StoragePtr<Real> sa = a.storage(), sb = b.storage();
    auto* so = out.storage().get();
    record(out, [sa, sb, so, ad, bd, cp] {
      const auto& gy = so->grad;
      std::vector<Real> g(gy.size());
      if (sa->requires_grad) {
        for (std::size_t i = 0; i < g.size(); ++i) g[i] = gy[i] * (*bd)[i];
        accumulate_gradient<Real>(*sa, g, cp);
      }
      if (sb->requires_grad) {
        for (std::size_t i = 0; i < g.size(); ++i) g[i] = gy[i] * (*ad)[i];
        accumulate_gradient<Real>(*sb, g, cp);
      }
    });
  }
  return out;
}

template <class Real>
Tensor<Real> scale(const Tensor<Real>& x, Real alpha) {
  require(x, "scale");
  Tensor<Real> out = unary(x, OpCategory::kElementwise, [alpha](Real v) { return alpha * v; });
  if (should_record<Real>({&x})) {
    StoragePtr<Real> sx = x.storage();
    auto* so = out.storage().get();
    const Precision cp = out.precision();
    record(out, [sx, so, alpha, cp] {
      std::vector<Real> g(so->grad.size());
      for (std::size_t i = 0; i < g.size(); ++i) g[i] = alpha * so->grad[i];
      accumulate_gradient<Real>(*sx, g, cp);
    });
  }
  return out;
}

template <class Real>
Tensor<Real> sum(const Tensor<Real>& x) {
  require(x, "sum");
  const Precision cp = compute_precision<Real>(OpCategory::kReduction);
  double s = 0.0;
  for (Real v : x.data()) s += static_cast<double>(v);
  Tensor<Real> out = Tensor<Real>::from_data({}, {static_cast<Real>(s)}, cp);
  if (should_record<Real>({&x})) {
    StoragePtr<Real> sx = x.storage();
    auto* so = out.storage().get();
    record(out, [sx, so, cp] {
      std::vector<Real> g(sx->data.size(), so->grad[0]);
      accumulate_gradient<Real>(*sx, g, cp);
    });
  }
  return out;
}

template <class Real>
Tensor<Real> relu(const Tensor<Real>& x) {
  require(x, "relu");
  Tensor<Real> out = unary(x, OpCategory::kElementwise, [](Real v) { return v > Real(0) ? v : Real(0); });
  if (should_record<Real>({&x})) {
    StoragePtr<Real> sx = x.storage();
    auto* so = out.storage().get();
    const Precision cp = out.precision();
    record(out, [sx, so, cp] {
      std::vector<Real> g(so->grad.size());
      for (std::size_t i = 0; i < g.size(); ++i) g[i] = so->data[i] > Real(0) ? so->grad[i] : Real(0);
      accumulate_gradient<Real>(*sx, g, cp);
    });
  }
  return out;
}

template <class Real>
Tensor<Real> sigmoid(const Tensor<Real>& x) {
  require(x, "sigmoid");
  Tensor<Real> out = unary(x, OpCategory::kElementwise, [](Real v) {
    if (v >= Real(0)) return Real(1) / (Real(1) + std::exp(-v));
    const Real e = std::exp(v);
    return e / (Real(1) + e);
  });
  if (should_record<Real>({&x})) {
    StoragePtr<Real> sx = x.storage();
    auto* so = out.storage().get();
    const Precision cp = out.precision();
    record(out, [sx, so, cp] {
      std::vector<Real> g(so->grad.size());
      for (std::size_t i = 0; i < g.size(); ++i) {
        const Real y = so->data[i];
        g[i] = so->grad[i] * y * (Real(1) - y);
      }
      accumulate_gradient<Real>(*sx, g, cp);
    });
  }
  return out;
}

template <class Real>
Tensor<Real> dropout(const Tensor<Real>& x, double p, bool training, const DropoutKey& key) {
  require(x, "dropout");
  if (!(p >= 0.0 && p < 1.0)) throw UsageError("dropout probability must be in [0, 1)");
  if (!training || p == 0.0) return x;
  const std::uint64_t stream = derive_seed(key.seed, {key.layer, key.step});
  const auto keep = static_cast<Real>(1.0 / (1.0 - p));
  auto mask = std::make_shared<std::vector<Real>>(static_cast<std::size_t>(x.numel()));
  for (std::size_t i = 0; i < mask->size(); ++i)
    (*mask)[i] = counter_uniform(stream, i) < p ? Real(0) : keep;
  const Precision cp = compute_precision<Real>(OpCategory::kElementwise);
  const Buffer<Real> in = operand(x, cp);
  std::vector<Real> y(in->size());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = (*in)[i] * (*mask)[i];
  Tensor<Real> out = Tensor<Real>::from_data(x.shape(), std::move(y), cp);
  if (should_record<Real>({&x})) {
    StoragePtr<Real> sx = x.storage();
    auto* so = out.storage().get();
    record(out, [sx, so, mask, cp] {
      std::vector<Real> g(so->grad.size());
      for (std::size_t i = 0; i < g.size(); ++i) g[i] = so->grad[i] * (*mask)[i];
      accumulate_gradient<Real>(*sx, g, cp);
    });
  }
  return out;
}

template <class Real>
Tensor<Real> conv3d(const Tensor<Real>& x, const Tensor<Real>& w, const Tensor<Real>& b,
                    std::int64_t stride, std::int64_t pad) {
  require(x, "conv3d");
  require(w, "conv3d");
  if (x.rank() != 5) throw ShapeError("conv3d: input must be [N, C, D, H, W], got " + shape_string(x.shape()));
  if (w.rank() != 5 || w.dim(2) != w.dim(3) || w.dim(2) != w.dim(4))
    throw ShapeError("conv3d: weight must be [Cout, Cin, k, k, k], got " + shape_string(w.shape()));
  if (w.dim(1) != x.dim(1))
    throw ShapeError("conv3d: weight expects " + std::to_string(w.dim(1)) + " input channels, input has " +
                     std::to_string(x.dim(1)));
  if (b.defined() && b.shape() != Shape{w.dim(0)})
    throw ShapeError("conv3d: bias must be [" + std::to_string(w.dim(0)) + "], got " + shape_string(b.shape()));
  const auto g = kernels::Conv3dGeometry::make(x.dim(0), x.dim(1), w.dim(0), w.dim(2), stride, pad,
                                               {x.dim(2), x.dim(3), x.dim(4)});
  const Precision cp = compute_precision<Real>(OpCategory::kConvolution);
  const Buffer<Real> xin = operand(x, cp), win = operand(w, cp);
  const Buffer<Real> bin = b.defined() ? operand(b, cp) : nullptr;
  std::vector<Real> y(static_cast<std::size_t>(g.batch * g.out_channels * voxel_count(g.out)));
  kernels::conv3d_forward(g, xin->data(), win->data(), bin ? bin->data() : nullptr, y.data());
  Tensor<Real> out = Tensor<Real>::from_data({g.batch, g.out_channels, g.out[0], g.out[1], g.out[2]},
                                             std::move(y), cp);
  if (should_record<Real>({&x, &w, &b})) {
    StoragePtr<Real> sx = x.storage(), sw = w.storage();
    StoragePtr<Real> sb = b.defined() ? b.storage() : nullptr;
    auto* so = out.storage().get();
    record(out, [g, sx, sw, sb, so, xin, win, cp] {
      const Real* gy = so->grad.data();
      if (sx->requires_grad) {
        std::vector<Real> dx(sx->data.size());
        kernels::conv3d_backward_data(g, gy, win->data(), dx.data());
        accumulate_gradient<Real>(*sx, dx, cp);
      }
      const bool want_b = sb && sb->requires_grad;
      if (sw->requires_grad || want_b) {
        std::vector<Real> dw(sw->data.size());
        std::vector<Real> db(static_cast<std::size_t>(g.out_channels));
        kernels::conv3d_backward_filter(g, xin->data(), gy, dw.data(), want_b ? db.data() : nullptr);
        if (sw->requires_grad) accumulate_gradient<Real>(*sw, dw, cp);
        if (want_b) accumulate_gradient<Real>(*sb, db, cp);
      }
    });
  }
  return out;
}

template <class Real>
Tensor<Real> group_norm(const Tensor<Real>& x, std::int64_t groups, const Tensor<Real>& gamma,
                        const Tensor<Real>& beta, double eps) {
  require(x, "group_norm");
  require(gamma, "group_norm");
  require(beta, "group_norm");
  if (x.rank() < 2) throw ShapeError("group_norm: input must be [N, C, ...]");
  const std::int64_t N = x.dim(0), C = x.dim(1);
  if (groups < 1 || C % groups != 0)
    throw ShapeError("group_norm: " + std::to_string(C) + " channels not divisible into " +
                     std::to_string(groups) + " groups");
  if (gamma.shape() != Shape{C} || beta.shape() != Shape{C})
    throw ShapeError("group_norm: gamma and beta must be [" + std::to_string(C) + "]");
  if (!(eps > 0.0)) throw UsageError("group_norm: eps must be positive");
  const std::int64_t S = x.numel() / (N * C);
  const std::int64_t cpg = C / groups;
  const double m = static_cast<double>(cpg * S);
  const Precision cp = compute_precision<Real>(OpCategory::kNormalization);

  auto stats = std::make_shared<std::vector<double>>(static_cast<std::size_t>(2 * N * groups));
  const auto xs = x.data();
  const auto gs = gamma.data();
  const auto bs = beta.data();
  std::vector<Real> y(xs.size());
  for (std::int64_t n = 0; n < N; ++n)
    for (std::int64_t gi = 0; gi < groups; ++gi) {
      const std::int64_t base = (n * C + gi * cpg) * S;
      const std::int64_t len = cpg * S;
      double s = 0.0;
      for (std::int64_t i = 0; i < len; ++i) s += xs[base + i];
      const double mean = s / m;
      double v = 0.0;
      for (std::int64_t i = 0; i < len; ++i) {
        const double d = xs[base + i] - mean;
        v += d * d;
      }
      const double rstd = 1.0 / std::sqrt(v / m + eps);
      (*stats)[static_cast<std::size_t>(2 * (n * groups + gi))] = mean;
      (*stats)[static_cast<std::size_t>(2 * (n * groups + gi) + 1)] = rstd;
      for (std::int64_t c = 0; c < cpg; ++c) {
        const std::int64_t ch = gi * cpg + c;
        const double ga = gs[ch], be = bs[ch];
        const std::int64_t off = base + c * S;
        for (std::int64_t i = 0; i < S; ++i)
          y[off + i] = static_cast<Real>((xs[off + i] - mean) * rstd * ga + be);
      }
    }
  Tensor<Real> out = Tensor<Real>::from_data(x.shape(), std::move(y), cp);
  if (should_record<Real>({&x, &gamma, &beta})) {
    StoragePtr<Real> sx = x.storage(), sg = gamma.storage(), sbeta = beta.storage();
    auto* so = out.storage().get();
    record(out, [sx, sg, sbeta, so, stats, N, C, S, groups, cpg, m, cp] {
      const auto& gy = so->grad;
      const auto& xd = sx->data;
      const auto& ga = sg->data;
      std::vector<double> dgamma(static_cast<std::size_t>(C), 0.0), dbeta(dgamma.size(), 0.0);
      std::vector<Real> dx(sx->requires_grad ? xd.size() : 0);
      for (std::int64_t n = 0; n < N; ++n)
        for (std::int64_t gi = 0; gi < groups; ++gi) {
          const double mean = (*stats)[static_cast<std::size_t>(2 * (n * groups + gi))];
          const double rstd = (*stats)[static_cast<std::size_t>(2 * (n * groups + gi) + 1)];
          const std::int64_t base = (n * C + gi * cpg) * S;
          double sum_d = 0.0, sum_dx = 0.0;
          for (std::int64_t c = 0; c < cpg; ++c) {
            const std::int64_t ch = gi * cpg + c;
            const std::int64_t off = base + c * S;
            double dg = 0.0, db = 0.0;
            for (std::int64_t i = 0; i < S; ++i) {
              const double xhat = (xd[off + i] - mean) * rstd;
              const double g = gy[off + i];
              dg += g * xhat;
              db += g;
            }
            dgamma[ch] += dg;
            dbeta[ch] += db;
            sum_d += ga[ch] * db;
            sum_dx += ga[ch] * dg;
          }
          if (!sx->requires_grad) continue;
          const double mean_d = sum_d / m, mean_dx = sum_dx / m;
          for (std::int64_t c = 0; c < cpg; ++c) {
            const std::int64_t ch = gi * cpg + c;
            const std::int64_t off = base + c * S;
            for (std::int64_t i = 0; i < S; ++i) {
              const double xhat = (xd[off + i] - mean) * rstd;
              const double dxhat = gy[off + i] * static_cast<double>(ga[ch]);
              dx[off + i] = static_cast<Real>(rstd * (dxhat - mean_d - xhat * mean_dx));
            }
          }
        }
      if (sx->requires_grad) accumulate_gradient<Real>(*sx, dx, cp);
      if (sg->requires_grad) {
        std::vector<Real> d(dgamma.begin(), dgamma.end());
        accumulate_gradient<Real>(*sg, d, cp);
      }
      if (sbeta->requires_grad) {
        std::vector<Real> d(dbeta.begin(), dbeta.end());
        accumulate_gradient<Real>(*sbeta, d, cp);
      }
    });
  }
  return out;
}

template <class Real>
Tensor<Real> trilinear_upsample2x(const Tensor<Real>& x) {
  require(x, "trilinear_upsample2x");
  if (x.rank() != 5) throw ShapeError("trilinear_upsample2x: input must be [N, C, D, H, W]");
  const std::int64_t NC = x.dim(0) * x.dim(1);
  const Dims3 in{x.dim(2), x.dim(3), x.dim(4)};
  const Dims3 out_dims{2 * in[0], 2 * in[1], 2 * in[2]};
  const auto td = std::make_shared<const std::vector<UpsampleTap>>(upsample_taps(in[0]));
  const auto th = std::make_shared<const std::vector<UpsampleTap>>(upsample_taps(in[1]));
  const auto tw = std::make_shared<const std::vector<UpsampleTap>>(upsample_taps(in[2]));
  const Precision cp = compute_precision<Real>(OpCategory::kElementwise);
  const Buffer<Real> xin = operand(x, cp);
  const std::int64_t in_vox = voxel_count(in), out_vox = voxel_count(out_dims);
  std::vector<Real> y(static_cast<std::size_t>(NC * out_vox));
  for (std::int64_t nc = 0; nc < NC; ++nc) {
    const Real* src = xin->data() + nc * in_vox;
    Real* dst = y.data() + nc * out_vox;
    for (std::int64_t od = 0; od < out_dims[0]; ++od) {
      const UpsampleTap& a = (*td)[od];
      for (std::int64_t oh = 0; oh < out_dims[1]; ++oh) {
        const UpsampleTap& b = (*th)[oh];
        const Real* r00 = src + (a.i0 * in[1] + b.i0) * in[2];
        const Real* r01 = src + (a.i0 * in[1] + b.i1) * in[2];
        const Real* r10 = src + (a.i1 * in[1] + b.i0) * in[2];
        const Real* r11 = src + (a.i1 * in[1] + b.i1) * in[2];
        const double w00 = (1 - a.w1) * (1 - b.w1), w01 = (1 - a.w1) * b.w1;
        const double w10 = a.w1 * (1 - b.w1), w11 = a.w1 * b.w1;
        Real* row = dst + (od * out_dims[1] + oh) * out_dims[2];
        for (std::int64_t ow = 0; ow < out_dims[2]; ++ow) {
          const UpsampleTap& c = (*tw)[ow];
          const double lo = w00 * r00[c.i0] + w01 * r01[c.i0] + w10 * r10[c.i0] + w11 * r11[c.i0];
          const double hi = w00 * r00[c.i1] + w01 * r01[c.i1] + w10 * r10[c.i1] + w11 * r11[c.i1];
          row[ow] = static_cast<Real>((1 - c.w1) * lo + c.w1 * hi);
        }
      }
    }
  }
  Tensor<Real> out = Tensor<Real>::from_data(
      {x.dim(0), x.dim(1), out_dims[0], out_dims[1], out_dims[2]}, std::move(y), cp);
  if (should_record<Real>({&x})) {
    StoragePtr<Real> sx = x.storage();
    auto* so = out.storage().get();
    record(out, [sx, so, td, th, tw, NC, in, out_dims, in_vox, out_vox, cp] {
      std::vector<double> acc(static_cast<std::size_t>(in_vox));
      std::vector<Real> dx(sx->data.size());
      for (std::int64_t nc = 0; nc < NC; ++nc) {
        std::fill(acc.begin(), acc.end(), 0.0);
        const Real* gy = so->grad.data() + nc * out_vox;
        for (std::int64_t od = 0; od < out_dims[0]; ++od) {
          const UpsampleTap& a = (*td)[od];
          for (std::int64_t oh = 0; oh < out_dims[1]; ++oh) {
            const UpsampleTap& b = (*th)[oh];
            double* r00 = acc.data() + (a.i0 * in[1] + b.i0) * in[2];
            double* r01 = acc.data() + (a.i0 * in[1] + b.i1) * in[2];
            double* r10 = acc.data() + (a.i1 * in[1] + b.i0) * in[2];
            double* r11 = acc.data() + (a.i1 * in[1] + b.i1) * in[2];
            const double w00 = (1 - a.w1) * (1 - b.w1), w01 = (1 - a.w1) * b.w1;
            const double w10 = a.w1 * (1 - b.w1), w11 = a.w1 * b.w1;
            const Real* row = gy + (od * out_dims[1] + oh) * out_dims[2];
            for (std::int64_t ow = 0; ow < out_dims[2]; ++ow) {
              const UpsampleTap& c = (*tw)[ow];
              const double g = row[ow];
              const double glo = (1 - c.w1) * g, ghi = c.w1 * g;
              r00[c.i0] += w00 * glo;
              r01[c.i0] += w01 * glo;
              r10[c.i0] += w10 * glo;
              r11[c.i0] += w11 * glo;
              r00[c.i1] += w00 * ghi;
              r01[c.i1] += w01 * ghi;
              r10[c.i1] += w10 * ghi;
              r11[c.i1] += w11 * ghi;
            }
          }
        }
        std::transform(acc.begin(), acc.end(), dx.begin() + nc * in_vox,
                       [](double v) { return static_cast<Real>(v); });
      }
      accumulate_gradient<Real>(*sx, dx, cp);
    });
  }
  return out;
}

template <class Real>
Tensor<Real> cast(const Tensor<Real>& x, Precision precision) {
  require(x, "cast");
  std::vector<Real> y(x.data().begin(), x.data().end());
  Tensor<Real> out = Tensor<Real>::from_data(x.shape(), std::move(y), precision);
  if (should_record<Real>({&x})) {
    StoragePtr<Real> sx = x.storage();
    auto* so = out.storage().get();
    record(out, [sx, so, precision] { accumulate_gradient<Real>(*sx, so->grad, precision); });
  }
  return out;
}

#define VXF_INSTANTIATE(Real)                                                                    \
  template Tensor<Real> add(const Tensor<Real>&, const Tensor<Real>&);                           \
  template Tensor<Real> mul(const Tensor<Real>&, const Tensor<Real>&);                           \
  template Tensor<Real> scale(const Tensor<Real>&, Real);                                        \
  template Tensor<Real> sum(const Tensor<Real>&);                                                \
  template Tensor<Real> relu(const Tensor<Real>&);                                               \
  template Tensor<Real> sigmoid(const Tensor<Real>&);                                            \
  template Tensor<Real> dropout(const Tensor<Real>&, double, bool, const DropoutKey&);           \
  template Tensor<Real> conv3d(const Tensor<Real>&, const Tensor<Real>&, const Tensor<Real>&,    \
                               std::int64_t, std::int64_t);                                      \
  template Tensor<Real> group_norm(const Tensor<Real>&, std::int64_t, const Tensor<Real>&,       \
                                   const Tensor<Real>&, double);                                 \
  template Tensor<Real> trilinear_upsample2x(const Tensor<Real>&);                               \
  template Tensor<Real> cast(const Tensor<Real>&, Precision);

VXF_INSTANTIATE(float)
VXF_INSTANTIATE(double)

#undef VXF_INSTANTIATE

}  // namespace vxf
