#include "voxelforge/conv_kernels.hpp"

#include <algorithm>
#include <cstring>
#include <vector>

#include "voxelforge/errors.hpp"
#include "voxelforge/parallel.hpp"

#if defined(__AVX512F__)
#define VXF_SIMD_BYTES 64
#elif defined(__AVX__)
#define VXF_SIMD_BYTES 32
#else
#define VXF_SIMD_BYTES 16
#endif

namespace vxf::kernels {
namespace {

typedef float VecF __attribute__((vector_size(VXF_SIMD_BYTES)));
typedef double VecD __attribute__((vector_size(VXF_SIMD_BYTES)));

template <class Real>
struct Simd;
template <>
struct Simd<float> {
  using Vec = VecF;
};
template <>
struct Simd<double> {
  using Vec = VecD;
};

template <class Real>
inline constexpr int kLanes = VXF_SIMD_BYTES / static_cast<int>(sizeof(Real));

// Register tile of the direct kernel: output channels x vectors.
inline constexpr int kCoBlock = VXF_SIMD_BYTES == 64 ? 8 : 4;
inline constexpr int kVecs = VXF_SIMD_BYTES == 32 ? 3 : 2;
// Output-channel block of the filter-gradient kernel.
inline constexpr int kFilterCoBlock = VXF_SIMD_BYTES == 64 ? 2 : 1;
inline constexpr std::int64_t kChunksPerTask = 32;

template <class Vec, class Real>
inline Vec loadu(const Real* p) noexcept {
  Vec v;
  std::memcpy(&v, p, sizeof(Vec));
  return v;
}

template <class Vec, class Real>
inline void storeu(Real* p, const Vec& v) noexcept {
  std::memcpy(p, &v, sizeof(Vec));
}

std::int64_t round_up(std::int64_t n, std::int64_t m) { return (n + m - 1) / m * m; }

// Source layout for the direct kernels. Each channel is split into stride^3
// phase grids of the zero-padded input, so that output voxel (d, h, w) sits
// at j = d*plane + h*row + w and every tap reads src[j + offset] for a fixed
// offset. Positions with h or w past the output extent are computed and
// discarded.
struct PhaseLayout {
  std::int64_t stride = 1, pad = 0, kernel = 1;
  Dims3 in{}, out{}, q{};
  std::int64_t row = 0, plane = 0;
  std::int64_t length = 0;       // output positions, rounded to the tile
  std::int64_t phase_span = 0;   // one phase grid plus read margin
  std::int64_t channel_span = 0;
  std::vector<std::int64_t> taps;  // per kernel tap, relative to a channel

  PhaseLayout(const Conv3dGeometry& g, std::int64_t chunk)
      : stride(g.stride), pad(g.pad), kernel(g.kernel), in(g.in), out(g.out) {
    const std::int64_t reach = (kernel - 1) / stride;
    for (int a = 0; a < 3; ++a)
      q[a] = std::max((in[a] + 2 * pad + stride - 1) / stride, out[a] + reach);
    row = q[2];
    plane = q[1] * q[2];
    length = round_up(out[0] * plane, chunk);
    phase_span = round_up(std::max(length + reach * (plane + row + 1), q[0] * plane), chunk) + chunk;
    channel_span = stride * stride * stride * phase_span;
    for (std::int64_t kd = 0; kd < kernel; ++kd)
      for (std::int64_t kh = 0; kh < kernel; ++kh)
        for (std::int64_t kw = 0; kw < kernel; ++kw) {
          const std::int64_t phase = ((kd % stride) * stride + kh % stride) * stride + kw % stride;
          taps.push_back(phase * phase_span + (kd / stride) * plane + (kh / stride) * row + kw / stride);
        }
  }

  template <class Real>
  void pack(const Real* src, std::int64_t channels, Real* dst) const {
    const std::int64_t n = voxel_count(in);
    const std::int64_t s = stride;
    parallel_for(channels, [&](std::int64_t c) {
      Real* base = dst + c * channel_span;
      std::fill(base, base + channel_span, Real(0));
      const Real* x = src + c * n;
      for (std::int64_t pd = 0; pd < s; ++pd)
        for (std::int64_t ph = 0; ph < s; ++ph)
          for (std::int64_t pw = 0; pw < s; ++pw) {
            Real* grid = base + ((pd * s + ph) * s + pw) * phase_span;
            // Phase column c reads input column s*c + pw - pad.
            const std::int64_t c_lo = std::max<std::int64_t>(0, (pad - pw + s - 1) / s);
            const std::int64_t c_hi = std::min(q[2], (in[2] - 1 + pad - pw) / s + 1);
            for (std::int64_t a = 0; a < q[0]; ++a) {
              const std::int64_t id = s * a + pd - pad;
              if (id < 0 || id >= in[0]) continue;
              for (std::int64_t b = 0; b < q[1]; ++b) {
                const std::int64_t ih = s * b + ph - pad;
                if (ih < 0 || ih >= in[1]) continue;
                const Real* xr = x + (id * in[1] + ih) * in[2] + pw - pad;
                Real* gr = grid + a * plane + b * row;
                if (s == 1) {
                  std::copy(xr + c_lo, xr + c_hi, gr + c_lo);
                } else {
                  for (std::int64_t cc = c_lo; cc < c_hi; ++cc) gr[cc] = xr[s * cc];
                }
              }
            }
          }
    });
  }

  template <class Real>
  void scatter_output(const Real* src, std::int64_t channels, Real* dst) const {
    const std::int64_t n = voxel_count(out);
    parallel_for(channels, [&](std::int64_t c) {
      Real* o = dst + c * length;
      std::fill(o, o + length, Real(0));
      const Real* y = src + c * n;
      for (std::int64_t d = 0; d < out[0]; ++d)
        for (std::int64_t h = 0; h < out[1]; ++h)
          std::copy(y + (d * out[1] + h) * out[2], y + (d * out[1] + h + 1) * out[2],
                    o + d * plane + h * row);
    });
  }

  template <class Real>
  void gather_output(const Real* src, std::int64_t channels, const Real* bias, Real* dst) const {
    const std::int64_t n = voxel_count(out);
    parallel_for(channels, [&](std::int64_t c) {
      const Real* o = src + c * length;
      Real* y = dst + c * n;
      const Real b = bias ? bias[c] : Real(0);
      for (std::int64_t d = 0; d < out[0]; ++d)
        for (std::int64_t h = 0; h < out[1]; ++h) {
          const Real* r = o + d * plane + h * row;
          Real* yr = y + (d * out[1] + h) * out[2];
          for (std::int64_t w = 0; w < out[2]; ++w) yr[w] = r[w] + b;
        }
    });
  }
};

// out[co][j] = sum_e w[e][co] * src[j + offsets[e]] over one register tile.
// Entries are summed in groups of `group` (one input channel's taps) and each
// group's partial is added to `out`, which keeps float rounding error from
// growing with the channel count.
template <class Real, int CB, int V>
void stencil_tile(const Real* src, const std::int64_t* offsets, std::int64_t entries, std::int64_t group,
                  const Real* wr, Real* out, std::int64_t length) {
  using Vec = typename Simd<Real>::Vec;
  constexpr int L = kLanes<Real>;
  for (std::int64_t e0 = 0; e0 < entries; e0 += group) {
    Vec acc[CB][V];
    for (int c = 0; c < CB; ++c)
      for (int v = 0; v < V; ++v) acc[c][v] = Vec{};
    for (std::int64_t e = e0; e < e0 + group; ++e) {
      const Real* xt = src + offsets[e];
      Vec xv[V];
#pragma GCC unroll 4
      for (int v = 0; v < V; ++v) xv[v] = loadu<Vec>(xt + v * L);
      const Real* we = wr + e * CB;
#pragma GCC unroll 8
      for (int c = 0; c < CB; ++c) {
        const Vec wv = Vec{} + we[c];
#pragma GCC unroll 4
        for (int v = 0; v < V; ++v) acc[c][v] += wv * xv[v];
      }
    }
    if (e0 == 0) {
      for (int c = 0; c < CB; ++c)
        for (int v = 0; v < V; ++v) storeu(out + c * length + v * L, acc[c][v]);
    } else {
      for (int c = 0; c < CB; ++c)
        for (int v = 0; v < V; ++v) {
          Real* o = out + c * length + v * L;
          storeu(o, loadu<Vec>(o) + acc[c][v]);
        }
    }
  }
}

template <class Real>
constexpr std::int64_t stencil_chunk() {
  return static_cast<std::int64_t>(kVecs) * kLanes<Real>;
}

// Weights regrouped as [block][entry][kCoBlock], zero for padding channels.
template <class Real, class Weight>
std::vector<Real> pack_weights(std::int64_t out_channels, std::int64_t entries, Weight&& weight) {
  const std::int64_t blocks = (out_channels + kCoBlock - 1) / kCoBlock;
  std::vector<Real> wr(static_cast<std::size_t>(blocks * entries * kCoBlock), Real(0));
  for (std::int64_t co = 0; co < out_channels; ++co)
    for (std::int64_t e = 0; e < entries; ++e)
      wr[static_cast<std::size_t>(((co / kCoBlock) * entries + e) * kCoBlock + co % kCoBlock)] =
          weight(co, e);
  return wr;
}

// Runs the stencil for all output channels over `length` positions.
// `out` holds round_up(out_channels, kCoBlock) rows of `length`.
template <class Real>
void run_stencil(std::int64_t out_channels, const std::vector<std::int64_t>& offsets, std::int64_t group,
                 const std::vector<Real>& wr, const Real* src, std::int64_t length, Real* out) {
  constexpr std::int64_t chunk = stencil_chunk<Real>();
  const std::int64_t entries = static_cast<std::int64_t>(offsets.size());
  const std::int64_t blocks = (out_channels + kCoBlock - 1) / kCoBlock;
  const std::int64_t chunks = length / chunk;
  const std::int64_t tiles = (chunks + kChunksPerTask - 1) / kChunksPerTask;
  parallel_for(blocks * tiles, [&](std::int64_t task) {
    const std::int64_t b = task / tiles;
    const std::int64_t first = (task % tiles) * kChunksPerTask;
    const std::int64_t last = std::min(chunks, first + kChunksPerTask);
    const Real* wb = wr.data() + b * entries * kCoBlock;
    Real* ob = out + b * kCoBlock * length;
    for (std::int64_t ch = first; ch < last; ++ch) {
      const std::int64_t j0 = ch * chunk;
      stencil_tile<Real, kCoBlock, kVecs>(src + j0, offsets.data(), entries, group, wb, ob + j0, length);
    }
  });
}

template <class Real>
void direct_forward(const Conv3dGeometry& g, const Real* x, const Real* w, const Real* bias, Real* y) {
  const PhaseLayout layout(g, stencil_chunk<Real>());
  const std::int64_t taps = g.kernel_volume();
  std::vector<std::int64_t> offsets;
  offsets.reserve(static_cast<std::size_t>(g.in_channels * taps));
  for (std::int64_t ci = 0; ci < g.in_channels; ++ci)
    for (std::int64_t t = 0; t < taps; ++t) offsets.push_back(ci * layout.channel_span + layout.taps[t]);
  const auto wr = pack_weights<Real>(g.out_channels, g.in_channels * taps, [&](std::int64_t co, std::int64_t e) {
    return w[co * g.in_channels * taps + e];
  });
  const std::int64_t co_pad = round_up(g.out_channels, kCoBlock);
  std::vector<Real> xp(static_cast<std::size_t>(g.in_channels * layout.channel_span));
  std::vector<Real> ys(static_cast<std::size_t>(co_pad * layout.length));
  const std::int64_t in_n = g.in_channels * voxel_count(g.in);
  const std::int64_t out_n = g.out_channels * voxel_count(g.out);
  for (std::int64_t n = 0; n < g.batch; ++n) {
    layout.pack(x + n * in_n, g.in_channels, xp.data());
    run_stencil(g.out_channels, offsets, taps, wr, xp.data(), layout.length, ys.data());
    layout.gather_output(ys.data(), g.out_channels, bias, y + n * out_n);
  }
}

// Data gradient for general stride: input positions with padded index
// I = stride*a + r receive sum_m w[r + stride*m] * dy[a - m] per axis, which
// is a stride-1 correlation of dy (front-padded by `reach`) for each phase r.
template <class Real>
void direct_backward_data_phases(const Conv3dGeometry& g, const Real* dy, const Real* w, Real* dx) {
  constexpr std::int64_t chunk = stencil_chunk<Real>();
  const std::int64_t s = g.stride, K = g.kernel, p = g.pad, taps = g.kernel_volume();
  const std::int64_t reach = (K - 1) / s;
  Dims3 a_dims{}, src_dims{};
  for (int ax = 0; ax < 3; ++ax) {
    a_dims[ax] = (g.in[ax] + 2 * p + s - 1) / s;
    src_dims[ax] = std::max(a_dims[ax], g.out[ax]) + reach;
  }
  const std::int64_t row = src_dims[2], plane = src_dims[1] * src_dims[2];
  const std::int64_t length = round_up(a_dims[0] * plane, chunk);
  const std::int64_t span = round_up(std::max(length + reach * (plane + row + 1), src_dims[0] * plane), chunk) + chunk;
  const std::int64_t in_vox = voxel_count(g.in), out_vox = voxel_count(g.out);
  const std::int64_t ci_pad = round_up(g.in_channels, kCoBlock);

  std::vector<Real> src(static_cast<std::size_t>(g.out_channels * span));
  std::vector<Real> acc(static_cast<std::size_t>(ci_pad * length));
  for (std::int64_t n = 0; n < g.batch; ++n) {
    const Real* dyn = dy + n * g.out_channels * out_vox;
    Real* dxn = dx + n * g.in_channels * in_vox;
    // Phases without taps (stride > kernel) leave their positions at zero.
    std::fill(dxn, dxn + g.in_channels * in_vox, Real(0));
    parallel_for(g.out_channels, [&](std::int64_t co) {
      Real* base = src.data() + co * span;
      std::fill(base, base + span, Real(0));
      const Real* d = dyn + co * out_vox;
      for (std::int64_t od = 0; od < g.out[0]; ++od)
        for (std::int64_t oh = 0; oh < g.out[1]; ++oh)
          std::copy(d + (od * g.out[1] + oh) * g.out[2], d + (od * g.out[1] + oh + 1) * g.out[2],
                    base + (od + reach) * plane + (oh + reach) * row + reach);
    });
    for (std::int64_t rd = 0; rd < s; ++rd)
      for (std::int64_t rh = 0; rh < s; ++rh)
        for (std::int64_t rw = 0; rw < s; ++rw) {
          std::vector<std::int64_t> offsets;
          std::vector<std::int64_t> tap_of_entry;
          for (std::int64_t co = 0; co < g.out_channels; ++co)
            for (std::int64_t kd = rd; kd < K; kd += s)
              for (std::int64_t kh = rh; kh < K; kh += s)
                for (std::int64_t kw = rw; kw < K; kw += s) {
                  offsets.push_back(co * span + (reach - (kd - rd) / s) * plane +
                                    (reach - (kh - rh) / s) * row + (reach - (kw - rw) / s));
                  tap_of_entry.push_back(co * taps + (kd * K + kh) * K + kw);
                }
          if (offsets.empty()) continue;
          const auto wr = pack_weights<Real>(g.in_channels, static_cast<std::int64_t>(offsets.size()),
                                             [&](std::int64_t ci, std::int64_t e) {
                                               const std::int64_t tap = tap_of_entry[e];
                                               const std::int64_t co = tap / taps;
                                               return w[(co * g.in_channels + ci) * taps + tap % taps];
                                             });
          run_stencil(g.in_channels, offsets, static_cast<std::int64_t>(offsets.size()) / g.out_channels, wr,
                      src.data(), length, acc.data());
          // Scatter phase results to the input positions they cover.
          parallel_for(g.in_channels, [&](std::int64_t ci) {
            const Real* r = acc.data() + ci * length;
            Real* o = dxn + ci * in_vox;
            for (std::int64_t a = 0; a < a_dims[0]; ++a) {
              const std::int64_t id = s * a + rd - p;
              if (id < 0 || id >= g.in[0]) continue;
              for (std::int64_t b = 0; b < a_dims[1]; ++b) {
                const std::int64_t ih = s * b + rh - p;
                if (ih < 0 || ih >= g.in[1]) continue;
                for (std::int64_t c = 0; c < a_dims[2]; ++c) {
                  const std::int64_t iw = s * c + rw - p;
                  if (iw < 0 || iw >= g.in[2]) continue;
                  o[(id * g.in[1] + ih) * g.in[2] + iw] = r[a * plane + b * row + c];
                }
              }
            }
          });
        }
  }
}

template <class Real, int CB, int G>
void filter_tile(const Real* dys, std::int64_t length, const Real* xp, const std::int64_t* offsets,
                 Real* out /* [CB][G] */) {
  using Vec = typename Simd<Real>::Vec;
  constexpr int L = kLanes<Real>;
  Vec acc[CB][G];
  for (int c = 0; c < CB; ++c)
    for (int t = 0; t < G; ++t) acc[c][t] = Vec{};
  for (std::int64_t j = 0; j < length; j += L) {
    Vec yv[CB];
#pragma GCC unroll 2
    for (int c = 0; c < CB; ++c) yv[c] = loadu<Vec>(dys + c * length + j);
#pragma GCC unroll 9
    for (int t = 0; t < G; ++t) {
      const Vec xv = loadu<Vec>(xp + j + offsets[t]);
#pragma GCC unroll 2
      for (int c = 0; c < CB; ++c) acc[c][t] += yv[c] * xv;
    }
  }
  for (int c = 0; c < CB; ++c)
    for (int t = 0; t < G; ++t) {
      Real s = 0;
      for (int l = 0; l < L; ++l) s += acc[c][t][l];
      out[c * G + t] = s;
    }
}

template <class Real, int CB>
void filter_taps(const Real* dys, std::int64_t length, const Real* xp,
                 const std::vector<std::int64_t>& offsets, Real* out /* [CB][taps] */) {
  const std::int64_t taps = static_cast<std::int64_t>(offsets.size());
  std::int64_t t0 = 0;
  Real part[CB * 9];
  for (; t0 + 9 <= taps; t0 += 9) {
    filter_tile<Real, CB, 9>(dys, length, xp, offsets.data() + t0, part);
    for (int c = 0; c < CB; ++c)
      for (int t = 0; t < 9; ++t) out[c * taps + t0 + t] = part[c * 9 + t];
  }
  for (; t0 < taps; ++t0) {
    filter_tile<Real, CB, 1>(dys, length, xp, offsets.data() + t0, part);
    for (int c = 0; c < CB; ++c) out[c * taps + t0] = part[c];
  }
}

template <class Real>
void direct_backward_filter(const Conv3dGeometry& g, const Real* x, const Real* dy, Real* dw, Real* dbias) {
  const PhaseLayout layout(g, kLanes<Real>);
  const std::int64_t taps = g.kernel_volume();
  const std::int64_t in_n = g.in_channels * voxel_count(g.in);
  const std::int64_t out_vox = voxel_count(g.out);
  const std::int64_t out_n = g.out_channels * out_vox;
  std::vector<Real> xp(static_cast<std::size_t>(g.in_channels * layout.channel_span));
  std::vector<Real> dys(static_cast<std::size_t>(g.out_channels * layout.length));
  std::fill(dw, dw + g.out_channels * g.in_channels * taps, Real(0));
  if (dbias) std::fill(dbias, dbias + g.out_channels, Real(0));

  const std::int64_t co_blocks = (g.out_channels + kFilterCoBlock - 1) / kFilterCoBlock;
  for (std::int64_t n = 0; n < g.batch; ++n) {
    layout.pack(x + n * in_n, g.in_channels, xp.data());
    layout.scatter_output(dy + n * out_n, g.out_channels, dys.data());
    parallel_for(co_blocks * g.in_channels, [&](std::int64_t task) {
      const std::int64_t co0 = task / g.in_channels * kFilterCoBlock;
      const std::int64_t ci = task % g.in_channels;
      const Real* xc = xp.data() + ci * layout.channel_span;
      std::vector<Real> part(static_cast<std::size_t>(kFilterCoBlock * taps));
      const std::int64_t count = std::min<std::int64_t>(kFilterCoBlock, g.out_channels - co0);
      if (count == kFilterCoBlock) {
        filter_taps<Real, kFilterCoBlock>(dys.data() + co0 * layout.length, layout.length, xc, layout.taps,
                                          part.data());
      } else {
        filter_taps<Real, 1>(dys.data() + co0 * layout.length, layout.length, xc, layout.taps, part.data());
      }
      for (std::int64_t c = 0; c < count; ++c)
        for (std::int64_t t = 0; t < taps; ++t)
          dw[((co0 + c) * g.in_channels + ci) * taps + t] += part[static_cast<std::size_t>(c * taps + t)];
    });
    if (dbias)
      for (std::int64_t co = 0; co < g.out_channels; ++co) {
        const Real* d = dy + n * out_n + co * out_vox;
        Real s = 0;
        for (std::int64_t i = 0; i < out_vox; ++i) s += d[i];
        dbias[co] += s;
      }
  }
}

// Valid output range along one axis for tap offset `k`.
struct TapRange {
  std::int64_t lo, hi;
};

TapRange tap_range(std::int64_t out, std::int64_t in, std::int64_t stride, std::int64_t pad,
                   std::int64_t k) {
  // Input index o*stride - pad + k must lie in [0, in).
  std::int64_t lo = 0;
  if (pad - k > 0) lo = (pad - k + stride - 1) / stride;
  std::int64_t hi = out;
  const std::int64_t top = in - 1 + pad - k;
  if (top < 0) return {0, 0};
  hi = std::min(out, top / stride + 1);
  return {lo, std::max(lo, hi)};
}

}  // namespace

Conv3dGeometry Conv3dGeometry::make(std::int64_t batch, std::int64_t in_channels,
                                    std::int64_t out_channels, std::int64_t kernel,
                                    std::int64_t stride, std::int64_t pad, const Dims3& in) {
  if (batch < 1 || in_channels < 1 || out_channels < 1)
    throw ShapeError("convolution needs positive batch and channel counts");
  if (kernel < 1) throw ShapeError("kernel size must be >= 1");
  if (stride < 1) throw ShapeError("stride must be >= 1");
  if (pad < 0) throw ShapeError("padding must be >= 0");
  Conv3dGeometry g{batch, in_channels, out_channels, kernel, stride, pad, in, {}};
  for (int a = 0; a < 3; ++a) {
    const std::int64_t span = in[a] + 2 * pad - kernel;
    if (in[a] < 1 || span < 0)
      throw ShapeError("convolution output extent is not positive along axis " + std::to_string(a));
    g.out[a] = span / stride + 1;
  }
  return g;
}

template <class Real>
void conv3d_forward_loops(const Conv3dGeometry& g, const Real* x, const Real* w, const Real* bias,
                          Real* y) {
  const std::int64_t K = g.kernel, taps = g.kernel_volume(), s = g.stride, p = g.pad;
  const Dims3& in = g.in;
  const Dims3& out = g.out;
  const std::int64_t in_vox = voxel_count(in), out_vox = voxel_count(out);
  parallel_for(g.batch * g.out_channels, [&](std::int64_t task) {
    const std::int64_t n = task / g.out_channels, co = task % g.out_channels;
    Real* yo = y + task * out_vox;
    std::fill(yo, yo + out_vox, bias ? bias[co] : Real(0));
    for (std::int64_t ci = 0; ci < g.in_channels; ++ci) {
      const Real* xi = x + (n * g.in_channels + ci) * in_vox;
      const Real* wk = w + (co * g.in_channels + ci) * taps;
      for (std::int64_t kd = 0; kd < K; ++kd) {
        const TapRange rd = tap_range(out[0], in[0], s, p, kd);
        for (std::int64_t kh = 0; kh < K; ++kh) {
          const TapRange rh = tap_range(out[1], in[1], s, p, kh);
          for (std::int64_t kw = 0; kw < K; ++kw) {
            const TapRange rw = tap_range(out[2], in[2], s, p, kw);
            const Real wv = wk[(kd * K + kh) * K + kw];
            for (std::int64_t od = rd.lo; od < rd.hi; ++od) {
              const std::int64_t id = od * s - p + kd;
              for (std::int64_t oh = rh.lo; oh < rh.hi; ++oh) {
                const std::int64_t ih = oh * s - p + kh;
                const Real* row = xi + (id * in[1] + ih) * in[2] - p + kw;
                Real* orow = yo + (od * out[1] + oh) * out[2];
                for (std::int64_t ow = rw.lo; ow < rw.hi; ++ow) orow[ow] += wv * row[ow * s];
              }
            }
          }
        }
      }
    }
  });
}

template <class Real>
void conv3d_backward_data_loops(const Conv3dGeometry& g, const Real* dy, const Real* w, Real* dx) {
  const std::int64_t K = g.kernel, taps = g.kernel_volume(), s = g.stride, p = g.pad;
  const Dims3& in = g.in;
  const Dims3& out = g.out;
  const std::int64_t in_vox = voxel_count(in), out_vox = voxel_count(out);
  parallel_for(g.batch * g.in_channels, [&](std::int64_t task) {
    const std::int64_t n = task / g.in_channels, ci = task % g.in_channels;
    Real* xi = dx + task * in_vox;
    std::fill(xi, xi + in_vox, Real(0));
    for (std::int64_t co = 0; co < g.out_channels; ++co) {
      const Real* yo = dy + (n * g.out_channels + co) * out_vox;
      const Real* wk = w + (co * g.in_channels + ci) * taps;
      for (std::int64_t kd = 0; kd < K; ++kd) {
        const TapRange rd = tap_range(out[0], in[0], s, p, kd);
        for (std::int64_t kh = 0; kh < K; ++kh) {
          const TapRange rh = tap_range(out[1], in[1], s, p, kh);
          for (std::int64_t kw = 0; kw < K; ++kw) {
            const TapRange rw = tap_range(out[2], in[2], s, p, kw);
            const Real wv = wk[(kd * K + kh) * K + kw];
            for (std::int64_t od = rd.lo; od < rd.hi; ++od) {
              const std::int64_t id = od * s - p + kd;
              for (std::int64_t oh = rh.lo; oh < rh.hi; ++oh) {
                const std::int64_t ih = oh * s - p + kh;
                Real* row = xi + (id * in[1] + ih) * in[2] - p + kw;
                const Real* orow = yo + (od * out[1] + oh) * out[2];
                for (std::int64_t ow = rw.lo; ow < rw.hi; ++ow) row[ow * s] += wv * orow[ow];
              }
            }
          }
        }
      }
    }
  });
}

template <class Real>
void conv3d_backward_filter_loops(const Conv3dGeometry& g, const Real* x, const Real* dy, Real* dw,
                                  Real* dbias) {
  const std::int64_t K = g.kernel, taps = g.kernel_volume(), s = g.stride, p = g.pad;
  const Dims3& in = g.in;
  const Dims3& out = g.out;
  const std::int64_t in_vox = voxel_count(in), out_vox = voxel_count(out);
  parallel_for(g.out_channels, [&](std::int64_t co) {
    Real* wk_all = dw + co * g.in_channels * taps;
    std::fill(wk_all, wk_all + g.in_channels * taps, Real(0));
    Real bsum = 0;
    for (std::int64_t n = 0; n < g.batch; ++n) {
      const Real* yo = dy + (n * g.out_channels + co) * out_vox;
      if (dbias)
        for (std::int64_t i = 0; i < out_vox; ++i) bsum += yo[i];
      for (std::int64_t ci = 0; ci < g.in_channels; ++ci) {
        const Real* xi = x + (n * g.in_channels + ci) * in_vox;
        Real* wk = wk_all + ci * taps;
        for (std::int64_t kd = 0; kd < K; ++kd) {
          const TapRange rd = tap_range(out[0], in[0], s, p, kd);
          for (std::int64_t kh = 0; kh < K; ++kh) {
            const TapRange rh = tap_range(out[1], in[1], s, p, kh);
            for (std::int64_t kw = 0; kw < K; ++kw) {
              const TapRange rw = tap_range(out[2], in[2], s, p, kw);
              Real acc = 0;
              for (std::int64_t od = rd.lo; od < rd.hi; ++od) {
                const std::int64_t id = od * s - p + kd;
                for (std::int64_t oh = rh.lo; oh < rh.hi; ++oh) {
                  const std::int64_t ih = oh * s - p + kh;
                  const Real* row = xi + (id * in[1] + ih) * in[2] - p + kw;
                  const Real* orow = yo + (od * out[1] + oh) * out[2];
                  for (std::int64_t ow = rw.lo; ow < rw.hi; ++ow) acc += orow[ow] * row[ow * s];
                }
              }
              wk[(kd * K + kh) * K + kw] += acc;
            }
          }
        }
      }
    }
    if (dbias) dbias[co] = bsum;
  });
}

template <class Real>
void conv3d_forward(const Conv3dGeometry& g, const Real* x, const Real* w, const Real* bias, Real* y) {
  direct_forward(g, x, w, bias, y);
}

template <class Real>
void conv3d_backward_data(const Conv3dGeometry& g, const Real* dy, const Real* w, Real* dx) {
  if (!g.is_same_stride1()) {
    direct_backward_data_phases(g, dy, w, dx);
    return;
  }
  // The data gradient of a same-padded stride-1 correlation is another one,
  // with input/output channels swapped and the kernel reversed.
  const std::int64_t taps = g.kernel_volume();
  std::vector<Real> flipped(static_cast<std::size_t>(g.out_channels * g.in_channels * taps));
  for (std::int64_t co = 0; co < g.out_channels; ++co)
    for (std::int64_t ci = 0; ci < g.in_channels; ++ci)
      for (std::int64_t t = 0; t < taps; ++t)
        flipped[static_cast<std::size_t>((ci * g.out_channels + co) * taps + (taps - 1 - t))] =
            w[(co * g.in_channels + ci) * taps + t];
  Conv3dGeometry t = g;
  std::swap(t.in_channels, t.out_channels);
  direct_forward(t, dy, flipped.data(), static_cast<const Real*>(nullptr), dx);
}

template <class Real>
void conv3d_backward_filter(const Conv3dGeometry& g, const Real* x, const Real* dy, Real* dw,
                            Real* dbias) {
  direct_backward_filter(g, x, dy, dw, dbias);
}

#define VXF_INSTANTIATE(Real)                                                                    \
  template void conv3d_forward<Real>(const Conv3dGeometry&, const Real*, const Real*,            \
                                     const Real*, Real*);                                        \
  template void conv3d_backward_data<Real>(const Conv3dGeometry&, const Real*, const Real*,      \
                                           Real*);                                               \
  template void conv3d_backward_filter<Real>(const Conv3dGeometry&, const Real*, const Real*,    \
                                             Real*, Real*);                                      \
  template void conv3d_forward_loops<Real>(const Conv3dGeometry&, const Real*, const Real*,      \
                                           const Real*, Real*);                                  \
  template void conv3d_backward_data_loops<Real>(const Conv3dGeometry&, const Real*, const Real*, \
                                                 Real*);                                         \
  template void conv3d_backward_filter_loops<Real>(const Conv3dGeometry&, const Real*,           \
                                                   const Real*, Real*, Real*);

VXF_INSTANTIATE(float)
VXF_INSTANTIATE(double)

#undef VXF_INSTANTIATE

}  // namespace vxf::kernels
