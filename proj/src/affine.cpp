#include "voxelforge/affine.hpp"

#include <algorithm>
#include <cmath>

namespace vxf {

Mat4 identity_affine() noexcept { return diagonal_affine(1.0, 1.0, 1.0); }

Mat4 diagonal_affine(double sx, double sy, double sz) noexcept {
  Mat4 m{};
  m[0][0] = sx;
  m[1][1] = sy;
  m[2][2] = sz;
  m[3][3] = 1.0;
  return m;
}

Mat4 matmul(const Mat4& a, const Mat4& b) noexcept {
  Mat4 r{};
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j) {
      double s = 0.0;
      for (int k = 0; k < 4; ++k) s += a[i][k] * b[k][j];
      r[i][j] = s;
    }
  return r;
}

Vec3 apply_affine(const Mat4& m, const Vec3& index) noexcept {
  Vec3 out{};
  for (int r = 0; r < 3; ++r)
    out[r] = m[r][0] * index[0] + m[r][1] * index[1] + m[r][2] * index[2] + m[r][3];
  return out;
}

double max_abs_difference(const Mat4& a, const Mat4& b) noexcept {
  double d = 0.0;
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j) d = std::max(d, std::abs(a[i][j] - b[i][j]));
  return d;
}

double determinant3(const Mat4& m) noexcept {
  return m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) -
         m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0]) +
         m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
}

bool has_homogeneous_last_row(const Mat4& m) noexcept {
  return m[3][0] == 0.0 && m[3][1] == 0.0 && m[3][2] == 0.0 && m[3][3] == 1.0;
}

}  // namespace vxf
