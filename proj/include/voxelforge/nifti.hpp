#pragma once

// Single-file NIFTI-1 (.nii / .nii.gz) reading and writing.
//
// Only little-endian files are accepted. Voxels are decoded to float in
// memory whatever the on-disk type; supported on-disk types are uint8, int16,
// float32 and float64.

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "voxelforge/affine.hpp"

namespace vxf {

enum NiftiDatatype : std::int16_t {
  kNiftiUint8 = 2,
  kNiftiInt16 = 4,
  kNiftiFloat32 = 16,
  kNiftiFloat64 = 64,
};

inline constexpr std::int32_t kNiftiHeaderSize = 348;
inline constexpr float kNiftiSingleFileOffset = 352.0f;

/// Decoded 348-byte NIFTI-1 header. Field names follow the format's own.
struct NiftiHeader {
  std::int32_t sizeof_hdr = kNiftiHeaderSize;
  std::uint8_t dim_info = 0;
  std::array<std::int16_t, 8> dim{};
  std::array<float, 3> intent_p{};
  std::int16_t intent_code = 0;
  std::int16_t datatype = kNiftiFloat32;
  std::int16_t bitpix = 32;
  std::int16_t slice_start = 0;
  std::array<float, 8> pixdim{};
  float vox_offset = kNiftiSingleFileOffset;
  float scl_slope = 1.0f;
  float scl_inter = 0.0f;
  std::int16_t slice_end = 0;
  std::uint8_t slice_code = 0;
  std::uint8_t xyzt_units = 0;
  float cal_max = 0.0f;
  float cal_min = 0.0f;
  float slice_duration = 0.0f;
  float toffset = 0.0f;
  std::array<char, 80> descrip{};
  std::array<char, 24> aux_file{};
  std::int16_t qform_code = 0;
  std::int16_t sform_code = 0;
  float quatern_b = 0.0f;
  float quatern_c = 0.0f;
  float quatern_d = 0.0f;
  float qoffset_x = 0.0f;
  float qoffset_y = 0.0f;
  float qoffset_z = 0.0f;
  std::array<float, 4> srow_x{};
  std::array<float, 4> srow_y{};
  std::array<float, 4> srow_z{};
  std::array<char, 16> intent_name{};
  std::array<char, 4> magic{'n', '+', '1', '\0'};

  int rank() const noexcept { return dim[0]; }
  std::int64_t voxel_count() const noexcept;

  friend bool operator==(const NiftiHeader&, const NiftiHeader&) = default;
};

/// Header plus voxels in file order (first index fastest) and the resolved
/// voxel-to-world affine.
struct NiftiImage {
  NiftiHeader header;
  std::vector<float> data;
  Mat4 affine = identity_affine();
};

int bitpix_for(std::int16_t datatype);

NiftiImage read_nifti(const std::filesystem::path& path);
NiftiImage read_nifti(std::span<const std::uint8_t> bytes);

/// Uncompressed single-file encoding: header, four zero extension bytes and
/// the voxel block at offset 352.
std::vector<std::uint8_t> encode_nifti(const NiftiImage& image);

/// Writes `image`; the output is gzip-wrapped when the path ends in ".gz".
void write_nifti(const NiftiImage& image, const std::filesystem::path& path);

/// Rotation from the unit quaternion (b, c, d), scaled by pixdim with the
/// qfac sign on the third column and translated by qoffset.
Mat4 quaternion_affine(const NiftiHeader& header);

/// sform if sform_code > 0, else qform if qform_code > 0, else diag(pixdim).
Mat4 resolve_affine(const NiftiHeader& header);

/// Stores `affine` as the sform (code 1) and pixdim as its column norms.
void set_sform(NiftiHeader& header, const Mat4& affine);

/// Builds a consistent header + image for a 3D grid (dims in file order).
NiftiImage make_nifti_image(const std::array<std::int64_t, 3>& dims, std::vector<float> data,
                            const Mat4& affine, std::int16_t datatype = kNiftiFloat32);

bool is_gzip(std::span<const std::uint8_t> bytes) noexcept;
std::vector<std::uint8_t> gzip_compress(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> gzip_decompress(std::span<const std::uint8_t> bytes);

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);
void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

}  // namespace vxf
