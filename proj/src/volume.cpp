#include "voxelforge/volume.hpp"

#include <cmath>

#include "voxelforge/errors.hpp"

namespace vxf {
namespace {

int world_axis(AxisCode code) noexcept { return static_cast<int>(code) / 2; }
bool is_positive(AxisCode code) noexcept { return static_cast<int>(code) % 2 == 0; }
AxisCode code_for(int world, bool positive) noexcept {
  return static_cast<AxisCode>(world * 2 + (positive ? 0 : 1));
}

std::string dims_string(const Dims3& d) {
  return std::to_string(d[0]) + "x" + std::to_string(d[1]) + "x" + std::to_string(d[2]);
}

struct AxisMap {
  std::array<int, 3> source{};  // input axis feeding each output axis
  std::array<bool, 3> flip{};
  Dims3 dims{};
  Mat4 affine{};
};

AxisMap plan_reorientation(const Dims3& dims, const Mat4& affine, const Orientation& current,
                           const Orientation& target) {
  if (!is_valid_orientation(target))
    throw UsageError("invalid target orientation " + orientation_string(target));
  AxisMap map;
  map.affine = affine;
  for (int a = 0; a < 3; ++a) {
    for (int j = 0; j < 3; ++j) {
      if (world_axis(current[j]) == world_axis(target[a])) {
        map.source[a] = j;
        map.flip[a] = is_positive(current[j]) != is_positive(target[a]);
      }
    }
    map.dims[a] = dims[map.source[a]];
  }
  for (int a = 0; a < 3; ++a) {
    const int j = map.source[a];
    const double sign = map.flip[a] ? -1.0 : 1.0;
    for (int r = 0; r < 3; ++r) map.affine[r][a] = sign * affine[r][j];
  }
  for (int a = 0; a < 3; ++a) {
    if (!map.flip[a]) continue;
    const int j = map.source[a];
    for (int r = 0; r < 3; ++r)
      map.affine[r][3] += affine[r][j] * static_cast<double>(dims[j] - 1);
  }
  return map;
}

template <class T>
std::vector<T> permute_grid(std::span<const T> in, std::int64_t channels, const Dims3& in_dims,
                            const AxisMap& map) {
  std::vector<T> out(in.size());
  const Dims3& od = map.dims;
  const std::array<std::int64_t, 3> in_stride{in_dims[1] * in_dims[2], in_dims[2], 1};
  // Input offset contribution of each output axis, plus the base for flips.
  std::array<std::int64_t, 3> step{};
  std::int64_t base = 0;
  for (int a = 0; a < 3; ++a) {
    const int j = map.source[a];
    if (map.flip[a]) {
      base += (in_dims[j] - 1) * in_stride[j];
      step[a] = -in_stride[j];
    } else {
      step[a] = in_stride[j];
    }
  }
  const std::int64_t n = voxel_count(in_dims);
  for (std::int64_t c = 0; c < channels; ++c) {
    const T* src = in.data() + c * n;
    T* dst = out.data() + c * n;
    std::int64_t o = 0;
    for (std::int64_t i = 0; i < od[0]; ++i)
      for (std::int64_t j = 0; j < od[1]; ++j) {
        std::int64_t s = base + i * step[0] + j * step[1];
        for (std::int64_t k = 0; k < od[2]; ++k, s += step[2]) dst[o++] = src[s];
      }
  }
  return out;
}

template <class T>
std::vector<T> window_grid(std::span<const T> in, std::int64_t channels, const Dims3& in_dims,
                           const Dims3& roi, const std::array<std::int64_t, 3>& offset) {
  const std::int64_t n_out = voxel_count(roi);
  const std::int64_t n_in = voxel_count(in_dims);
  std::vector<T> out(static_cast<std::size_t>(channels * n_out), T{});
  for (std::int64_t c = 0; c < channels; ++c)
    for (std::int64_t i = 0; i < roi[0]; ++i) {
      const std::int64_t si = i + offset[0];
      if (si < 0 || si >= in_dims[0]) continue;
      for (std::int64_t j = 0; j < roi[1]; ++j) {
        const std::int64_t sj = j + offset[1];
        if (sj < 0 || sj >= in_dims[1]) continue;
        for (std::int64_t k = 0; k < roi[2]; ++k) {
          const std::int64_t sk = k + offset[2];
          if (sk < 0 || sk >= in_dims[2]) continue;
          out[static_cast<std::size_t>(c * n_out + (i * roi[1] + j) * roi[2] + k)] =
              in[static_cast<std::size_t>(c * n_in + (si * in_dims[1] + sj) * in_dims[2] + sk)];
        }
      }
    }
  return out;
}

Mat4 shifted_affine(const Mat4& affine, const std::array<std::int64_t, 3>& offset) {
  Mat4 m = affine;
  for (int r = 0; r < 3; ++r)
    for (int j = 0; j < 3; ++j) m[r][3] += affine[r][j] * static_cast<double>(offset[j]);
  return m;
}

void check_roi(const Dims3& roi) {
  for (auto r : roi)
    if (r < 1) throw UsageError("ROI extents must be >= 1, got " + dims_string(roi));
}

std::int64_t channel_count_of(const NiftiImage& image) {
  const auto& dim = image.header.dim;
  if (dim[0] < 1 || dim[0] > 4)
    throw DataError("expected a 1-4 dimensional NIFTI image, rank is " + std::to_string(dim[0]));
  return dim[0] == 4 ? dim[4] : 1;
}

Dims3 spatial_dims_of(const NiftiImage& image) {
  const auto& dim = image.header.dim;
  Dims3 d{1, 1, 1};
  for (int i = 0; i < 3 && i < dim[0]; ++i) d[i] = dim[i + 1];
  return d;
}

}  // namespace

char axis_letter(AxisCode code) noexcept { return "RLAPSI"[static_cast<int>(code)]; }

std::string orientation_string(const Orientation& o) {
  return {axis_letter(o[0]), axis_letter(o[1]), axis_letter(o[2])};
}

Orientation parse_orientation(std::string_view text) {
  if (text.size() != 3) throw UsageError("orientation must have three letters");
  Orientation o{};
  for (int i = 0; i < 3; ++i) {
    const auto pos = std::string_view("RLAPSI").find(text[i]);
    if (pos == std::string_view::npos)
      throw UsageError("invalid orientation letter '" + std::string(1, text[i]) + "'");
    o[i] = static_cast<AxisCode>(pos);
  }
  if (!is_valid_orientation(o)) throw UsageError("orientation repeats an anatomical axis");
  return o;
}

bool is_valid_orientation(const Orientation& o) noexcept {
  std::array<bool, 3> seen{};
  for (auto code : o) {
    if (static_cast<int>(code) > 5 || seen[world_axis(code)]) return false;
    seen[world_axis(code)] = true;
  }
  return true;
}

Orientation orientation_from_affine(const Mat4& affine) {
  const double det = determinant3(affine);
  double scale = 0.0;
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) scale = std::max(scale, std::abs(affine[r][c]));
  if (scale == 0.0 || std::abs(det) <= 1e-12 * scale * scale * scale)
    throw DataError("affine direction matrix is singular");

  Orientation result{};
  std::array<bool, 3> voxel_done{}, world_done{};
  for (int round = 0; round < 3; ++round) {
    int best_j = -1, best_w = -1;
    double best = -1.0;
    for (int j = 0; j < 3; ++j) {
      if (voxel_done[j]) continue;
      for (int w = 0; w < 3; ++w) {
        if (world_done[w]) continue;
        if (std::abs(affine[w][j]) > best) {
          best = std::abs(affine[w][j]);
          best_j = j;
          best_w = w;
        }
      }
    }
    voxel_done[best_j] = true;
    world_done[best_w] = true;
    result[best_j] = code_for(best_w, affine[best_w][best_j] >= 0.0);
  }
  return result;
}

Volume::Volume(std::int64_t channels, Dims3 dims, std::vector<float> data, const Mat4& affine)
    : channels_(channels), dims_(dims), data_(std::move(data)), affine_(affine) {
  if (channels_ < 1) throw ShapeError("volume needs at least one channel");
  for (auto d : dims_)
    if (d < 1) throw ShapeError("volume extents must be >= 1, got " + dims_string(dims_));
  if (static_cast<std::int64_t>(data_.size()) != channels_ * voxel_count(dims_))
    throw ShapeError("volume data length " + std::to_string(data_.size()) + " != " +
                     std::to_string(channels_) + " x " + dims_string(dims_));
  if (!has_homogeneous_last_row(affine_)) throw DataError("affine last row must be (0,0,0,1)");
  orientation_ = orientation_from_affine(affine_);
}

Volume Volume::zeros(std::int64_t channels, Dims3 dims, const Mat4& affine) {
  return Volume(channels, dims, std::vector<float>(static_cast<std::size_t>(channels * voxel_count(dims))),
                affine);
}

std::span<const float> Volume::channel(std::int64_t c) const {
  if (c < 0 || c >= channels_) throw ShapeError("channel index out of range");
  return std::span<const float>(data_).subspan(static_cast<std::size_t>(c * voxels()),
                                               static_cast<std::size_t>(voxels()));
}

Volume Volume::with_data(std::vector<float> data) const {
  return Volume(channels_, dims_, std::move(data), affine_);
}

LabelVolume::LabelVolume(Dims3 dims, std::vector<std::uint8_t> data, const Mat4& affine)
    : dims_(dims), data_(std::move(data)), affine_(affine) {
  for (auto d : dims_)
    if (d < 1) throw ShapeError("label extents must be >= 1, got " + dims_string(dims_));
  if (static_cast<std::int64_t>(data_.size()) != voxel_count(dims_))
    throw ShapeError("label data length does not match " + dims_string(dims_));
  if (!has_homogeneous_last_row(affine_)) throw DataError("affine last row must be (0,0,0,1)");
}

Volume reorient(const Volume& v, const Orientation& target) {
  if (v.orientation() == target) return v;
  const AxisMap map = plan_reorientation(v.dims(), v.affine(), v.orientation(), target);
  return Volume(v.channels(), map.dims, permute_grid(v.data(), v.channels(), v.dims(), map),
                map.affine);
}

LabelVolume reorient(const LabelVolume& v, const Orientation& target) {
  const Orientation current = orientation_from_affine(v.affine());
  if (current == target) return v;
  const AxisMap map = plan_reorientation(v.dims(), v.affine(), current, target);
  return LabelVolume(map.dims, permute_grid(v.data(), 1, v.dims(), map), map.affine);
}

std::int64_t center_offset(std::int64_t extent, std::int64_t roi) noexcept {
  return extent >= roi ? (extent - roi) / 2 : -((roi - extent) / 2);
}

Volume crop_or_pad_center(const Volume& v, const Dims3& roi) {
  check_roi(roi);
  if (roi == v.dims()) return v;
  const std::array<std::int64_t, 3> offset{center_offset(v.dims()[0], roi[0]),
                                           center_offset(v.dims()[1], roi[1]),
                                           center_offset(v.dims()[2], roi[2])};
  return Volume(v.channels(), roi, window_grid(v.data(), v.channels(), v.dims(), roi, offset),
                shifted_affine(v.affine(), offset));
}

LabelVolume crop_or_pad_center(const LabelVolume& v, const Dims3& roi) {
  check_roi(roi);
  if (roi == v.dims()) return v;
  const std::array<std::int64_t, 3> offset{center_offset(v.dims()[0], roi[0]),
                                           center_offset(v.dims()[1], roi[1]),
                                           center_offset(v.dims()[2], roi[2])};
  return LabelVolume(roi, window_grid(v.data(), 1, v.dims(), roi, offset),
                     shifted_affine(v.affine(), offset));
}

Volume stack_modalities(const Volume& flair, const Volume& t1, const Volume& t1ce,
                        const Volume& t2) {
  const std::array<const Volume*, 4> parts{&flair, &t1, &t1ce, &t2};
  for (std::size_t m = 0; m < parts.size(); ++m) {
    const Volume& p = *parts[m];
    if (p.channels() != 1)
      throw ShapeError(std::string(kModalityNames[m]) + " must be single-channel");
    if (p.dims() != flair.dims())
      throw ShapeError(std::string(kModalityNames[m]) + " grid " + dims_string(p.dims()) +
                       " does not match flair grid " + dims_string(flair.dims()));
    if (p.orientation() != flair.orientation() ||
        max_abs_difference(p.affine(), flair.affine()) > 1e-4)
      throw ShapeError(std::string(kModalityNames[m]) + " affine does not match flair");
  }
  std::vector<float> data;
  data.reserve(static_cast<std::size_t>(4 * flair.voxels()));
  for (const Volume* p : parts) data.insert(data.end(), p->data().begin(), p->data().end());
  return Volume(4, flair.dims(), std::move(data), flair.affine());
}

Volume volume_from_nifti(const NiftiImage& image) {
  const std::int64_t channels = channel_count_of(image);
  const Dims3 d = spatial_dims_of(image);
  const std::int64_t n = voxel_count(d);
  if (static_cast<std::int64_t>(image.data.size()) != channels * n)
    throw ShapeError("NIFTI data length does not match its dims");
  std::vector<float> data(image.data.size());
  for (std::int64_t c = 0; c < channels; ++c)
    for (std::int64_t k = 0; k < d[2]; ++k)
      for (std::int64_t j = 0; j < d[1]; ++j)
        for (std::int64_t i = 0; i < d[0]; ++i)
          data[static_cast<std::size_t>(((c * d[0] + i) * d[1] + j) * d[2] + k)] =
              image.data[static_cast<std::size_t>(c * n + i + d[0] * (j + d[1] * k))];
  return Volume(channels, d, std::move(data), image.affine);
}

LabelVolume labels_from_nifti(const NiftiImage& image) {
  const Volume v = volume_from_nifti(image);
  if (v.channels() != 1) throw ShapeError("label map must be single-channel");
  std::vector<std::uint8_t> labels(static_cast<std::size_t>(v.voxels()));
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const float x = v.data()[i];
    if (!(x >= 0.0f && x <= 255.0f && x == std::nearbyint(x)))
      throw DataError("label map contains non-integer or out-of-range value " + std::to_string(x));
    labels[i] = static_cast<std::uint8_t>(x);
  }
  return LabelVolume(v.dims(), std::move(labels), v.affine());
}

NiftiImage nifti_from_volume(const Volume& v, std::int16_t datatype) {
  const Dims3& d = v.dims();
  const std::int64_t n = v.voxels();
  std::vector<float> data(static_cast<std::size_t>(v.channels() * n));
  for (std::int64_t c = 0; c < v.channels(); ++c)
    for (std::int64_t k = 0; k < d[2]; ++k)
      for (std::int64_t j = 0; j < d[1]; ++j)
        for (std::int64_t i = 0; i < d[0]; ++i)
          data[static_cast<std::size_t>(c * n + i + d[0] * (j + d[1] * k))] = v.at(c, i, j, k);
  if (v.channels() == 1) return make_nifti_image(d, std::move(data), v.affine(), datatype);
  NiftiImage image = make_nifti_image(d, std::vector<float>(static_cast<std::size_t>(n)), v.affine(),
                                      datatype);
  image.header.dim[0] = 4;
  image.header.dim[4] = static_cast<std::int16_t>(v.channels());
  image.header.pixdim[4] = 1.0f;
  image.data = std::move(data);
  return image;
}

NiftiImage nifti_from_labels(const LabelVolume& v) {
  std::vector<float> values(v.data().begin(), v.data().end());
  return nifti_from_volume(Volume(1, v.dims(), std::move(values), v.affine()), kNiftiUint8);
}

}  // namespace vxf
