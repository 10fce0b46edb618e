#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <random>

#include "../oracles/random_nifti.hpp"
#include "voxelforge/errors.hpp"
#include "voxelforge/nifti.hpp"
#include "voxelforge/volume.hpp"

using namespace vxf;

namespace {

std::filesystem::path data_dir() { return VXF_TEST_DATA_DIR; }

std::filesystem::path temp_path(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / "vxf_nifti_test";
  std::filesystem::create_directories(dir);
  return dir / name;
}

void expect_same(const NiftiImage& a, const NiftiImage& b) {
  EXPECT_TRUE(a.header == b.header);
  ASSERT_EQ(a.data.size(), b.data.size());
  EXPECT_EQ(0, std::memcmp(a.data.data(), b.data.data(), a.data.size() * sizeof(float)));
  EXPECT_EQ(a.affine, b.affine);
}

}  // namespace

TEST(Nifti, RoundTripFloatCube) {
  std::vector<float> v(64);
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = 0.25f * static_cast<float>(i) - 3.0f;
  const auto img = make_nifti_image({4, 4, 4}, v, identity_affine());
  const auto back = read_nifti(encode_nifti(img));
  expect_same(img, back);
  EXPECT_EQ(back.header.datatype, kNiftiFloat32);
  EXPECT_EQ(back.header.vox_offset, 352.0f);
}

TEST(Nifti, RandomRoundTripsPlainAndGzip) {
  std::mt19937_64 rng(21);
  for (int i = 0; i < 20; ++i) {
    const auto img = oracle::random_nifti(rng);
    const auto bytes = encode_nifti(img);
    expect_same(img, read_nifti(bytes));
    expect_same(img, read_nifti(gzip_compress(bytes)));
  }
  const auto img = oracle::random_nifti(rng);
  write_nifti(img, temp_path("r.nii.gz"));
  write_nifti(img, temp_path("r.nii"));
  EXPECT_TRUE(is_gzip(read_file_bytes(temp_path("r.nii.gz"))));
  expect_same(img, read_nifti(temp_path("r.nii.gz")));
  expect_same(img, read_nifti(temp_path("r.nii")));
}

TEST(Nifti, RejectsTwoFileMagic) {
  auto bytes = encode_nifti(make_nifti_image({2, 2, 2}, std::vector<float>(8, 1.0f), identity_affine()));
  std::memcpy(bytes.data() + 344, "ni1\0", 4);
  EXPECT_THROW(read_nifti(bytes), DataError);
}

TEST(Nifti, RejectsBadInput) {
  auto bytes = encode_nifti(make_nifti_image({2, 2, 2}, std::vector<float>(8, 1.0f), identity_affine()));
  EXPECT_THROW(read_nifti(std::span(bytes).first(200)), DataError);
  EXPECT_THROW(read_nifti(std::span(bytes).first(bytes.size() - 1)), DataError);
  auto bad_size = bytes;
  bad_size[0] = 0x10;
  EXPECT_THROW(read_nifti(bad_size), DataError);
  auto bad_type = bytes;
  const std::int16_t code = 128;  // RGB
  std::memcpy(bad_type.data() + 70, &code, 2);
  EXPECT_THROW(read_nifti(bad_type), DataError);
  const auto gz = gzip_compress(bytes);
  EXPECT_THROW(read_nifti(std::span(gz).first(30)), DataError);
}

TEST(Nifti, LabelMapIsUint8) {
  std::vector<std::uint8_t> labels{0, 1, 2, 4, 4, 2, 1, 0};
  const auto img = nifti_from_labels(LabelVolume({2, 2, 2}, labels));
  EXPECT_EQ(img.header.datatype, 2);
  EXPECT_EQ(img.header.bitpix, 8);
  const auto back = labels_from_nifti(read_nifti(encode_nifti(img)));
  EXPECT_EQ(std::vector<std::uint8_t>(back.data().begin(), back.data().end()), labels);
}

TEST(Nifti, BratsSizedFileLength) {
  const std::array<std::int64_t, 3> dims{240, 240, 155};
  const auto img = make_nifti_image(dims, std::vector<float>(240 * 240 * 155), identity_affine());
  EXPECT_EQ(encode_nifti(img).size(), 352u + 240u * 240u * 155u * 4u);
}

TEST(Nifti, QuaternionAffine) {
  NiftiHeader h;
  h.pixdim = {1, 1, 1, 1, 0, 0, 0, 0};
  h.qform_code = 1;
  EXPECT_EQ(quaternion_affine(h), identity_affine());

  h.quatern_b = 1.0f;
  const Mat4 m = quaternion_affine(h);
  // Oracle: R = [[a²+b²-c²-d², 2(bc-ad), 2(bd+ac)], ...] at a=c=d=0, b=1.
  const double want[3][3] = {{1, 0, 0}, {0, -1, 0}, {0, 0, -1}};
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) EXPECT_NEAR(m[r][c], want[r][c], 1e-12);

  NiftiHeader q = h;
  q.quatern_b = 0.0f;
  q.pixdim[0] = -1.0f;
  const Mat4 f = quaternion_affine(q);
  EXPECT_EQ(f[2][2], -1.0);
  EXPECT_EQ(f[0][0], 1.0);

  NiftiHeader bad = h;
  bad.quatern_b = 0.9f;
  bad.quatern_c = 0.9f;
  EXPECT_THROW(quaternion_affine(bad), DataError);
}

TEST(Nifti, QuaternionRotationIsOrthonormal) {
  std::mt19937_64 rng(8);
  std::normal_distribution<double> n;
  for (int i = 0; i < 100; ++i) {
    double a = n(rng), b = n(rng), c = n(rng), d = n(rng);
    const double s = std::sqrt(a * a + b * b + c * c + d * d) * (a < 0 ? -1 : 1);
    NiftiHeader h;
    h.pixdim = {1, 1, 1, 1, 0, 0, 0, 0};
    h.quatern_b = static_cast<float>(b / s);
    h.quatern_c = static_cast<float>(c / s);
    h.quatern_d = static_cast<float>(d / s);
    const Mat4 m = quaternion_affine(h);
    for (int x = 0; x < 3; ++x)
      for (int y = 0; y < 3; ++y) {
        double dot = 0;
        for (int r = 0; r < 3; ++r) dot += m[r][x] * m[r][y];
        EXPECT_NEAR(dot, x == y ? 1.0 : 0.0, 1e-5);
      }
  }
}

TEST(Nifti, AffinePrecedence) {
  auto img = make_nifti_image({2, 2, 2}, std::vector<float>(8), diagonal_affine(2, 3, 4));
  EXPECT_EQ(resolve_affine(img.header), diagonal_affine(2, 3, 4));
  img.header.sform_code = 0;
  img.header.qform_code = 0;
  img.header.pixdim = {1, 5, 6, 7, 1, 0, 0, 0};
  EXPECT_EQ(resolve_affine(img.header), diagonal_affine(5, 6, 7));
}

TEST(Nifti, ReferenceCubeFromIndependentWriter) {
  const auto img = read_nifti(data_dir() / "reference_8cube.nii.gz");
  EXPECT_EQ(img.header.dim[0], 3);
  EXPECT_EQ(img.header.dim[1], 8);
  EXPECT_EQ(img.header.dim[2], 8);
  EXPECT_EQ(img.header.dim[3], 8);
  EXPECT_EQ(img.header.datatype, 16);
  for (int i = 1; i <= 3; ++i) EXPECT_EQ(img.header.pixdim[i], 1.0f);
  Mat4 want = identity_affine();
  want[0][3] = -4;
  want[1][3] = -5;
  want[2][3] = -6;
  EXPECT_EQ(img.affine, want);
  for (int z = 0; z < 8; ++z)
    for (int y = 0; y < 8; ++y)
      for (int x = 0; x < 8; ++x) ASSERT_EQ(img.data[x + 8 * y + 64 * z], x + 10 * y + 100 * z);
}

TEST(Nifti, ReferenceQformWithScaling) {
  const auto img = read_nifti(data_dir() / "reference_qform.nii");
  // Scaling is applied on read, so the decoded image is float32 with identity scaling.
  EXPECT_EQ(img.header.datatype, kNiftiFloat32);
  EXPECT_EQ(img.header.scl_slope, 1.0f);
  const double want[3][4] = {{2, 0, 0, 10}, {0, -3, 0, 20}, {0, 0, -4, 30}};
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 4; ++c) EXPECT_NEAR(img.affine[r][c], want[r][c], 1e-6);
  // Stored value = linear index (first axis fastest); read value = 0.5 v + 1.
  for (int i = 0; i < 24; ++i) EXPECT_EQ(img.data[i], 0.5f * i + 1.0f);
}
