#pragma once

// 3D convolution kernels over NCDHW buffers (cross-correlation semantics).
//
// This is the single boundary behind which convolution arithmetic lives;
// the autodiff op in ops.cpp only calls these three entry points. Inputs
// are split into stride^3 phase grids so every stride runs the same
// vectorised stencil; strided data gradients become one stride-1 stencil per
// phase. Summation order is fixed, so results do not depend on the thread
// count.

#include <cstdint>

#include "voxelforge/volume.hpp"

namespace vxf::kernels {

struct Conv3dGeometry {
  std::int64_t batch = 1;
  std::int64_t in_channels = 1;
  std::int64_t out_channels = 1;
  std::int64_t kernel = 1;
  std::int64_t stride = 1;
  std::int64_t pad = 0;
  Dims3 in{1, 1, 1};
  Dims3 out{1, 1, 1};

  /// Computes output extents floor((n + 2*pad - k) / stride) + 1 and
  /// validates them.
  static Conv3dGeometry make(std::int64_t batch, std::int64_t in_channels,
                             std::int64_t out_channels, std::int64_t kernel, std::int64_t stride,
                             std::int64_t pad, const Dims3& in);

  bool is_same_stride1() const noexcept { return stride == 1 && 2 * pad == kernel - 1; }
  std::int64_t kernel_volume() const noexcept { return kernel * kernel * kernel; }
};

/// y = conv(x, w) + bias. `bias` may be null. Overwrites y.
template <class Real>
void conv3d_forward(const Conv3dGeometry& g, const Real* x, const Real* w, const Real* bias, Real* y);

/// dx = d(loss)/dx given dy. Overwrites dx.
template <class Real>
void conv3d_backward_data(const Conv3dGeometry& g, const Real* dy, const Real* w, Real* dx);

/// dw (and dbias when non-null) given x and dy. Overwrites both.
template <class Real>
void conv3d_backward_filter(const Conv3dGeometry& g, const Real* x, const Real* dy, Real* dw,
                            Real* dbias);

/// Plain loop-nest versions of the above, used for strided convolutions and
/// as the in-library fallback.
template <class Real>
void conv3d_forward_loops(const Conv3dGeometry& g, const Real* x, const Real* w, const Real* bias,
                          Real* y);
template <class Real>
void conv3d_backward_data_loops(const Conv3dGeometry& g, const Real* dy, const Real* w, Real* dx);
template <class Real>
void conv3d_backward_filter_loops(const Conv3dGeometry& g, const Real* x, const Real* dy, Real* dw,
                                  Real* dbias);

}  // namespace vxf::kernels
