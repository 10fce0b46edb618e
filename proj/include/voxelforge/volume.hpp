#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "voxelforge/affine.hpp"
#include "voxelforge/nifti.hpp"

namespace vxf {

using Dims3 = std::array<std::int64_t, 3>;

enum class AxisCode : std::uint8_t { kR, kL, kA, kP, kS, kI };

/// Anatomical direction each voxel axis increases towards.
using Orientation = std::array<AxisCode, 3>;

inline constexpr Orientation kRas{AxisCode::kR, AxisCode::kA, AxisCode::kS};

char axis_letter(AxisCode code) noexcept;
std::string orientation_string(const Orientation& o);
/// Parses e.g. "LPS". Throws UsageError on invalid input.
Orientation parse_orientation(std::string_view text);
bool is_valid_orientation(const Orientation& o) noexcept;

/// Greedy dominant-component assignment over the direction columns.
Orientation orientation_from_affine(const Mat4& affine);

inline std::int64_t voxel_count(const Dims3& d) noexcept { return d[0] * d[1] * d[2]; }

/// Channel-major stack of 3D float grids. Within a channel the last axis is
/// contiguous, so index (c, i, j, k) lives at ((c*D0 + i)*D1 + j)*D2 + k.
/// Immutable once constructed.
class Volume {
 public:
  Volume() = default;
  Volume(std::int64_t channels, Dims3 dims, std::vector<float> data,
         const Mat4& affine = identity_affine());

  static Volume zeros(std::int64_t channels, Dims3 dims, const Mat4& affine = identity_affine());

  std::int64_t channels() const noexcept { return channels_; }
  const Dims3& dims() const noexcept { return dims_; }
  std::int64_t voxels() const noexcept { return voxel_count(dims_); }
  const Mat4& affine() const noexcept { return affine_; }
  const Orientation& orientation() const noexcept { return orientation_; }

  std::span<const float> data() const noexcept { return data_; }
  std::span<const float> channel(std::int64_t c) const;

  std::int64_t index(std::int64_t c, std::int64_t i, std::int64_t j, std::int64_t k) const noexcept {
    return ((c * dims_[0] + i) * dims_[1] + j) * dims_[2] + k;
  }
  float at(std::int64_t c, std::int64_t i, std::int64_t j, std::int64_t k) const noexcept {
    return data_[static_cast<std::size_t>(index(c, i, j, k))];
  }

  /// Same grid and affine, new voxel values.
  Volume with_data(std::vector<float> data) const;

  /// Moves the buffer out, for pipelines that build the next volume from it.
  std::vector<float> release_data() && { return std::move(data_); }

  friend bool operator==(const Volume&, const Volume&) = default;

 private:
  std::int64_t channels_ = 0;
  Dims3 dims_{0, 0, 0};
  std::vector<float> data_;
  Mat4 affine_ = identity_affine();
  Orientation orientation_ = kRas;
};

/// Integer label map on a single grid (BraTS coding: 0, 1, 2, 4).
class LabelVolume {
 public:
  LabelVolume() = default;
  LabelVolume(Dims3 dims, std::vector<std::uint8_t> data, const Mat4& affine = identity_affine());

  const Dims3& dims() const noexcept { return dims_; }
  std::int64_t voxels() const noexcept { return voxel_count(dims_); }
  const Mat4& affine() const noexcept { return affine_; }
  std::span<const std::uint8_t> data() const noexcept { return data_; }

  friend bool operator==(const LabelVolume&, const LabelVolume&) = default;

 private:
  Dims3 dims_{0, 0, 0};
  std::vector<std::uint8_t> data_;
  Mat4 affine_ = identity_affine();
};

/// Axis permutation and flips that take a volume to `target` orientation;
/// a voxel bijection with world coordinates preserved.
Volume reorient(const Volume& v, const Orientation& target);
LabelVolume reorient(const LabelVolume& v, const Orientation& target);

inline Volume reorient_to_ras(const Volume& v) { return reorient(v, kRas); }
inline LabelVolume reorient_to_ras(const LabelVolume& v) { return reorient(v, kRas); }

/// Centred crop and/or symmetric zero pad to `roi`. Per axis the window
/// starts at floor((n - r) / 2) when cropping; when padding, floor((r - n) / 2)
/// zeros go before the data.
Volume crop_or_pad_center(const Volume& v, const Dims3& roi);
LabelVolume crop_or_pad_center(const LabelVolume& v, const Dims3& roi);

/// Per-axis window offset used by crop_or_pad_center (negative when padding).
std::int64_t center_offset(std::int64_t extent, std::int64_t roi) noexcept;

/// Fixed channel order used throughout: FLAIR, T1, T1CE, T2.
inline constexpr std::array<const char*, 4> kModalityNames{"flair", "t1", "t1ce", "t2"};

Volume stack_modalities(const Volume& flair, const Volume& t1, const Volume& t1ce,
                        const Volume& t2);

/// NIFTI bridge. NIFTI stores the first index fastest; volumes store the
/// last index fastest, so these transpose.
Volume volume_from_nifti(const NiftiImage& image);
LabelVolume labels_from_nifti(const NiftiImage& image);
NiftiImage nifti_from_volume(const Volume& v, std::int16_t datatype = kNiftiFloat32);
NiftiImage nifti_from_labels(const LabelVolume& v);

}  // namespace vxf
