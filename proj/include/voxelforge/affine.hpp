#pragma once

#include <array>

namespace vxf {

/// Homogeneous 4x4 transform mapping voxel indices to world millimetres.
using Mat4 = std::array<std::array<double, 4>, 4>;
using Vec3 = std::array<double, 3>;

Mat4 identity_affine() noexcept;
Mat4 diagonal_affine(double sx, double sy, double sz) noexcept;
Mat4 matmul(const Mat4& a, const Mat4& b) noexcept;
Vec3 apply_affine(const Mat4& m, const Vec3& index) noexcept;
double max_abs_difference(const Mat4& a, const Mat4& b) noexcept;
double determinant3(const Mat4& m) noexcept;
bool has_homogeneous_last_row(const Mat4& m) noexcept;

}  // namespace vxf
