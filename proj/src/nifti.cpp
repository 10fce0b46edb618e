#include "voxelforge/nifti.hpp"

#include <zlib.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>

#include "voxelforge/errors.hpp"

namespace vxf {

static_assert(std::endian::native == std::endian::little,
              "NIFTI codec assumes a little-endian host");

namespace {

template <class T>
T load(std::span<const std::uint8_t> bytes, std::size_t offset) {
  T value;
  std::memcpy(&value, bytes.data() + offset, sizeof(T));
  return value;
}

template <class T, std::size_t N>
void load_array(std::span<const std::uint8_t> bytes, std::size_t offset, std::array<T, N>& out) {
  std::memcpy(out.data(), bytes.data() + offset, sizeof(T) * N);
}

template <class T>
void store(std::vector<std::uint8_t>& bytes, std::size_t offset, T value) {
  std::memcpy(bytes.data() + offset, &value, sizeof(T));
}

template <class T, std::size_t N>
void store_array(std::vector<std::uint8_t>& bytes, std::size_t offset, const std::array<T, N>& in) {
  std::memcpy(bytes.data() + offset, in.data(), sizeof(T) * N);
}

NiftiHeader decode_header(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < static_cast<std::size_t>(kNiftiHeaderSize))
    throw DataError("truncated NIFTI stream: " + std::to_string(bytes.size()) +
                    " bytes, header needs 348");
  NiftiHeader h;
  h.sizeof_hdr = load<std::int32_t>(bytes, 0);
  if (h.sizeof_hdr != kNiftiHeaderSize) {
    if (static_cast<std::int32_t>(__builtin_bswap32(static_cast<std::uint32_t>(h.sizeof_hdr))) == kNiftiHeaderSize)
      throw DataError("big-endian NIFTI files are not supported");
    throw DataError("invalid NIFTI sizeof_hdr " + std::to_string(h.sizeof_hdr));
  }
  load_array(bytes, 344, h.magic);
  if (h.magic == std::array<char, 4>{'n', 'i', '1', '\0'})
    throw DataError("two-file NIFTI (.hdr/.img) is not supported");
  if (h.magic != std::array<char, 4>{'n', '+', '1', '\0'}) {
    if (h.magic[0] == 'n' && h.magic[2] == '2')
      throw DataError("NIFTI-2 is not supported");
    throw DataError("unknown NIFTI magic");
  }

  h.dim_info = load<std::uint8_t>(bytes, 39);
  load_array(bytes, 40, h.dim);
  load_array(bytes, 56, h.intent_p);
  h.intent_code = load<std::int16_t>(bytes, 68);
  h.datatype = load<std::int16_t>(bytes, 70);
  h.bitpix = load<std::int16_t>(bytes, 72);
  h.slice_start = load<std::int16_t>(bytes, 74);
  load_array(bytes, 76, h.pixdim);
  h.vox_offset = load<float>(bytes, 108);
  h.scl_slope = load<float>(bytes, 112);
  h.scl_inter = load<float>(bytes, 116);
  h.slice_end = load<std::int16_t>(bytes, 120);
  h.slice_code = load<std::uint8_t>(bytes, 122);
  h.xyzt_units = load<std::uint8_t>(bytes, 123);
  h.cal_max = load<float>(bytes, 124);
  h.cal_min = load<float>(bytes, 128);
  h.slice_duration = load<float>(bytes, 132);
  h.toffset = load<float>(bytes, 136);
  load_array(bytes, 148, h.descrip);
  load_array(bytes, 228, h.aux_file);
  h.qform_code = load<std::int16_t>(bytes, 252);
  h.sform_code = load<std::int16_t>(bytes, 254);
  h.quatern_b = load<float>(bytes, 256);
  h.quatern_c = load<float>(bytes, 260);
  h.quatern_d = load<float>(bytes, 264);
  h.qoffset_x = load<float>(bytes, 268);
  h.qoffset_y = load<float>(bytes, 272);
  h.qoffset_z = load<float>(bytes, 276);
  load_array(bytes, 280, h.srow_x);
  load_array(bytes, 296, h.srow_y);
  load_array(bytes, 312, h.srow_z);
  load_array(bytes, 328, h.intent_name);
  return h;
}

void validate_header(const NiftiHeader& h) {
  if (h.dim[0] < 1 || h.dim[0] > 7)
    throw DataError("NIFTI dim[0] must be in [1, 7], got " + std::to_string(h.dim[0]));
  for (int i = 1; i <= h.dim[0]; ++i)
    if (h.dim[i] < 1)
      throw DataError("NIFTI dim[" + std::to_string(i) + "] must be >= 1");
  const int expected_bits = bitpix_for(h.datatype);
  if (h.bitpix != expected_bits)
    throw DataError("NIFTI bitpix " + std::to_string(h.bitpix) + " inconsistent with datatype " +
                    std::to_string(h.datatype));
}

std::vector<std::uint8_t> encode_header(const NiftiHeader& h) {
  std::vector<std::uint8_t> out(kNiftiHeaderSize, 0);
  store<std::int32_t>(out, 0, kNiftiHeaderSize);
  store<std::uint8_t>(out, 38, 'r');  // "regular", kept for old readers
  store<std::uint8_t>(out, 39, h.dim_info);
  store_array(out, 40, h.dim);
  store_array(out, 56, h.intent_p);
  store<std::int16_t>(out, 68, h.intent_code);
  store<std::int16_t>(out, 70, h.datatype);
  store<std::int16_t>(out, 72, static_cast<std::int16_t>(bitpix_for(h.datatype)));
  store<std::int16_t>(out, 74, h.slice_start);
  store_array(out, 76, h.pixdim);
  store<float>(out, 108, kNiftiSingleFileOffset);
  store<float>(out, 112, h.scl_slope);
  store<float>(out, 116, h.scl_inter);
  store<std::int16_t>(out, 120, h.slice_end);
  store<std::uint8_t>(out, 122, h.slice_code);
  store<std::uint8_t>(out, 123, h.xyzt_units);
  store<float>(out, 124, h.cal_max);
  store<float>(out, 128, h.cal_min);
  store<float>(out, 132, h.slice_duration);
  store<float>(out, 136, h.toffset);
  store_array(out, 148, h.descrip);
  store_array(out, 228, h.aux_file);
  store<std::int16_t>(out, 252, h.qform_code);
  store<std::int16_t>(out, 254, h.sform_code);
  store<float>(out, 256, h.quatern_b);
  store<float>(out, 260, h.quatern_c);
  store<float>(out, 264, h.quatern_d);
  store<float>(out, 268, h.qoffset_x);
  store<float>(out, 272, h.qoffset_y);
  store<float>(out, 276, h.qoffset_z);
  store_array(out, 280, h.srow_x);
  store_array(out, 296, h.srow_y);
  store_array(out, 312, h.srow_z);
  store_array(out, 328, h.intent_name);
  const std::array<char, 4> magic{'n', '+', '1', '\0'};
  store_array(out, 344, magic);
  return out;
}

template <class T>
void decode_voxels(std::span<const std::uint8_t> block, std::vector<float>& out) {
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = static_cast<float>(load<T>(block, i * sizeof(T)));
}

template <class T>
void encode_integer_voxels(const std::vector<float>& in, std::vector<std::uint8_t>& out,
                           std::size_t offset) {
  for (std::size_t i = 0; i < in.size(); ++i) {
    const float v = in[i];
    if (!(v == std::nearbyint(v)) || v < static_cast<float>(std::numeric_limits<T>::min()) ||
        v > static_cast<float>(std::numeric_limits<T>::max()))
      throw DataError("voxel value " + std::to_string(v) +
                      " is not representable in the integer NIFTI datatype");
    store<T>(out, offset + i * sizeof(T), static_cast<T>(v));
  }
}

}  // namespace

std::int64_t NiftiHeader::voxel_count() const noexcept {
  std::int64_t n = 1;
  for (int i = 1; i <= dim[0] && i < 8; ++i) n *= std::max<std::int16_t>(dim[i], 0);
  return n;
}

int bitpix_for(std::int16_t datatype) {
  switch (datatype) {
    case kNiftiUint8: return 8;
    case kNiftiInt16: return 16;
    case kNiftiFloat32: return 32;
    case kNiftiFloat64: return 64;
    default:
      throw DataError("unsupported NIFTI datatype code " + std::to_string(datatype));
  }
}

NiftiImage read_nifti(std::span<const std::uint8_t> bytes) {
  std::vector<std::uint8_t> inflated;
  if (is_gzip(bytes)) {
    inflated = gzip_decompress(bytes);
    bytes = inflated;
  }
  NiftiImage image;
  image.header = decode_header(bytes);
  NiftiHeader& h = image.header;
  validate_header(h);

  if (!(h.vox_offset >= kNiftiSingleFileOffset) || h.vox_offset != std::floor(h.vox_offset))
    throw DataError("invalid NIFTI vox_offset " + std::to_string(h.vox_offset));
  const auto offset = static_cast<std::size_t>(h.vox_offset);
  const std::int64_t count = h.voxel_count();
  const std::size_t bytes_per_voxel = static_cast<std::size_t>(h.bitpix / 8);
  const std::size_t needed = offset + static_cast<std::size_t>(count) * bytes_per_voxel;
  if (bytes.size() < needed)
    throw DataError("NIFTI data shorter than header promises: have " +
                    std::to_string(bytes.size()) + " bytes, need " + std::to_string(needed));

  image.data.resize(static_cast<std::size_t>(count));
  const auto block = bytes.subspan(offset);
  switch (h.datatype) {
    case kNiftiUint8: decode_voxels<std::uint8_t>(block, image.data); break;
    case kNiftiInt16: decode_voxels<std::int16_t>(block, image.data); break;
    case kNiftiFloat32: decode_voxels<float>(block, image.data); break;
    case kNiftiFloat64: decode_voxels<double>(block, image.data); break;
    default: break;  // rejected by validate_header
  }

  // Scaling is folded into the decoded values; the in-memory header then
  // describes float data with identity scaling.
  if (h.scl_slope != 0.0f && !(h.scl_slope == 1.0f && h.scl_inter == 0.0f)) {
    for (float& v : image.data) v = v * h.scl_slope + h.scl_inter;
    h.scl_slope = 1.0f;
    h.scl_inter = 0.0f;
    h.datatype = kNiftiFloat32;
    h.bitpix = 32;
  }
  image.affine = resolve_affine(h);
  return image;
}

NiftiImage read_nifti(const std::filesystem::path& path) {
  const auto bytes = read_file_bytes(path);
  try {
    return read_nifti(std::span<const std::uint8_t>(bytes));
  } catch (const DataError& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

std::vector<std::uint8_t> encode_nifti(const NiftiImage& image) {
  const NiftiHeader& h = image.header;
  if (h.dim[0] > 4) throw DataError("NIFTI rank > 4 is not supported for writing");
  NiftiHeader checked = h;
  checked.bitpix = static_cast<std::int16_t>(bitpix_for(h.datatype));
  validate_header(checked);
  if (static_cast<std::int64_t>(image.data.size()) != h.voxel_count())
    throw DataError("NIFTI data length " + std::to_string(image.data.size()) +
                    " does not match header voxel count " + std::to_string(h.voxel_count()));

  std::vector<std::uint8_t> out = encode_header(h);
  const std::size_t bytes_per_voxel = static_cast<std::size_t>(bitpix_for(h.datatype) / 8);
  const std::size_t offset = static_cast<std::size_t>(kNiftiSingleFileOffset);
  out.resize(offset + image.data.size() * bytes_per_voxel, 0);
  switch (h.datatype) {
    case kNiftiUint8: encode_integer_voxels<std::uint8_t>(image.data, out, offset); break;
    case kNiftiInt16: encode_integer_voxels<std::int16_t>(image.data, out, offset); break;
    case kNiftiFloat32:
      std::memcpy(out.data() + offset, image.data.data(), image.data.size() * sizeof(float));
      break;
    case kNiftiFloat64:
      for (std::size_t i = 0; i < image.data.size(); ++i)
        store<double>(out, offset + i * sizeof(double), static_cast<double>(image.data[i]));
      break;
    default: break;
  }
  return out;
}

void write_nifti(const NiftiImage& image, const std::filesystem::path& path) {
  auto bytes = encode_nifti(image);
  if (path.extension() == ".gz") bytes = gzip_compress(bytes);
  write_file_bytes(path, bytes);
}

Mat4 quaternion_affine(const NiftiHeader& h) {
  constexpr double kTolerance = 1e-5;
  double b = h.quatern_b, c = h.quatern_c, d = h.quatern_d;
  const double norm2 = b * b + c * c + d * d;
  if (norm2 > 1.0 + kTolerance)
    throw DataError("qform quaternion (b, c, d) has squared norm " + std::to_string(norm2) +
                    " > 1");
  double a = 0.0;
  if (norm2 < 1.0) {
    a = std::sqrt(1.0 - norm2);
  } else {
    const double s = 1.0 / std::sqrt(norm2);
    b *= s;
    c *= s;
    d *= s;
  }
  const double qfac = h.pixdim[0] < 0.0f ? -1.0 : 1.0;
  const double sx = h.pixdim[1], sy = h.pixdim[2], sz = qfac * h.pixdim[3];

  const double r[3][3] = {
      {a * a + b * b - c * c - d * d, 2 * (b * c - a * d), 2 * (b * d + a * c)},
      {2 * (b * c + a * d), a * a + c * c - b * b - d * d, 2 * (c * d - a * b)},
      {2 * (b * d - a * c), 2 * (c * d + a * b), a * a + d * d - c * c - b * b},
  };
  Mat4 m{};
  const double scale[3] = {sx, sy, sz};
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) m[i][j] = r[i][j] * scale[j];
  m[0][3] = h.qoffset_x;
  m[1][3] = h.qoffset_y;
  m[2][3] = h.qoffset_z;
  m[3][3] = 1.0;
  return m;
}

Mat4 resolve_affine(const NiftiHeader& h) {
  if (h.sform_code > 0) {
    Mat4 m{};
    for (int j = 0; j < 4; ++j) {
      m[0][j] = h.srow_x[j];
      m[1][j] = h.srow_y[j];
      m[2][j] = h.srow_z[j];
    }
    m[3][3] = 1.0;
    return m;
  }
  if (h.qform_code > 0) return quaternion_affine(h);
  auto spacing = [&](int i) { return h.pixdim[i] > 0.0f ? double{h.pixdim[i]} : 1.0; };
  return diagonal_affine(spacing(1), spacing(2), spacing(3));
}

void set_sform(NiftiHeader& h, const Mat4& affine) {
  h.sform_code = 1;
  for (int j = 0; j < 4; ++j) {
    h.srow_x[j] = static_cast<float>(affine[0][j]);
    h.srow_y[j] = static_cast<float>(affine[1][j]);
    h.srow_z[j] = static_cast<float>(affine[2][j]);
  }
  if (h.pixdim[0] == 0.0f) h.pixdim[0] = 1.0f;
  for (int j = 0; j < 3; ++j) {
    const double n = std::sqrt(affine[0][j] * affine[0][j] + affine[1][j] * affine[1][j] +
                               affine[2][j] * affine[2][j]);
    h.pixdim[j + 1] = static_cast<float>(n);
  }
}

NiftiImage make_nifti_image(const std::array<std::int64_t, 3>& dims, std::vector<float> data,
                            const Mat4& affine, std::int16_t datatype) {
  NiftiImage image;
  NiftiHeader& h = image.header;
  h.dim = {3, 1, 1, 1, 1, 1, 1, 1};
  for (int i = 0; i < 3; ++i) {
    if (dims[i] < 1 || dims[i] > std::numeric_limits<std::int16_t>::max())
      throw DataError("NIFTI-1 dimension out of range: " + std::to_string(dims[i]));
    h.dim[i + 1] = static_cast<std::int16_t>(dims[i]);
  }
  h.datatype = datatype;
  h.bitpix = static_cast<std::int16_t>(bitpix_for(datatype));
  h.pixdim = {1, 1, 1, 1, 0, 0, 0, 0};
  h.xyzt_units = 2;  // millimetres
  set_sform(h, affine);
  if (static_cast<std::int64_t>(data.size()) != h.voxel_count())
    throw DataError("voxel buffer length does not match dims");
  image.data = std::move(data);
  image.affine = resolve_affine(h);
  return image;
}

bool is_gzip(std::span<const std::uint8_t> bytes) noexcept {
  return bytes.size() >= 2 && bytes[0] == 0x1f && bytes[1] == 0x8b;
}

std::vector<std::uint8_t> gzip_compress(std::span<const std::uint8_t> bytes) {
  z_stream stream{};
  if (deflateInit2(&stream, 6, Z_DEFLATED, 15 + 16, 8, Z_DEFAULT_STRATEGY) != Z_OK)
    throw DataError("zlib deflateInit2 failed");
  std::vector<std::uint8_t> out(deflateBound(&stream, static_cast<uLong>(bytes.size())) + 32);
  stream.next_in = const_cast<Bytef*>(bytes.data());
  stream.avail_in = static_cast<uInt>(bytes.size());
  stream.next_out = out.data();
  stream.avail_out = static_cast<uInt>(out.size());
  const int rc = deflate(&stream, Z_FINISH);
  const auto produced = stream.total_out;
  deflateEnd(&stream);
  if (rc != Z_STREAM_END) throw DataError("gzip compression failed");
  out.resize(produced);
  return out;
}

std::vector<std::uint8_t> gzip_decompress(std::span<const std::uint8_t> bytes) {
  std::vector<std::uint8_t> out;
  std::vector<std::uint8_t> chunk(1 << 16);
  std::size_t consumed = 0;
  // Concatenated gzip members decode to the concatenation of their payloads.
  while (consumed < bytes.size() && is_gzip(bytes.subspan(consumed))) {
    z_stream stream{};
    if (inflateInit2(&stream, 15 + 16) != Z_OK) throw DataError("zlib inflateInit2 failed");
    stream.next_in = const_cast<Bytef*>(bytes.data() + consumed);
    stream.avail_in = static_cast<uInt>(bytes.size() - consumed);
    int rc = Z_OK;
    while (rc != Z_STREAM_END) {
      stream.next_out = chunk.data();
      stream.avail_out = static_cast<uInt>(chunk.size());
      rc = inflate(&stream, Z_NO_FLUSH);
      if (rc != Z_OK && rc != Z_STREAM_END) {
        inflateEnd(&stream);
        throw DataError("corrupt or truncated gzip stream");
      }
      out.insert(out.end(), chunk.data(), chunk.data() + (chunk.size() - stream.avail_out));
      if (rc == Z_OK && stream.avail_in == 0 && stream.avail_out != 0) {
        inflateEnd(&stream);
        throw DataError("truncated gzip stream");
      }
    }
    consumed += stream.total_in;
    inflateEnd(&stream);
  }
  return out;
}

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  return bytes;
}

void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError("write failed for " + path.string());
}

}  // namespace vxf
