#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>

#include "voxelforge/errors.hpp"
#include "voxelforge/preprocess.hpp"

using namespace vxf;

namespace {

Volume vol(std::vector<float> v, Dims3 dims = {0, 0, 0}, std::int64_t channels = 1) {
  if (dims[0] == 0) dims = {static_cast<std::int64_t>(v.size() / channels), 1, 1};
  return Volume(channels, dims, std::move(v));
}

Volume ramp(Dims3 dims, std::int64_t channels = 1) {
  std::vector<float> v(static_cast<std::size_t>(channels * voxel_count(dims)));
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = static_cast<float>(i) * 0.5f - 3.0f;
  return Volume(channels, dims, std::move(v));
}

}  // namespace

TEST(Normalizer, TwoPointForeground) {
  const std::vector<Volume> images{vol({0, 2, 0, 4})};
  const auto n = fit_normalizer("flair", images);
  EXPECT_DOUBLE_EQ(n.mean, 3.0);
  EXPECT_DOUBLE_EQ(n.std, 1.0);
}

TEST(Normalizer, PoolsAcrossImages) {
  const std::vector<Volume> images{vol({2, 0}), vol({0, 4, 0})};
  const auto n = fit_normalizer("t1", images);
  EXPECT_DOUBLE_EQ(n.mean, 3.0);
  EXPECT_DOUBLE_EQ(n.std, 1.0);
}

TEST(Normalizer, ConstantForegroundClampsStd) {
  const std::vector<Volume> images{vol({5, 5, 0, 5})};
  const auto n = fit_normalizer("t2", images);
  EXPECT_DOUBLE_EQ(n.mean, 5.0);
  EXPECT_DOUBLE_EQ(n.std, kMinNormalizerStd);
}

TEST(Normalizer, EmptyForegroundIsAnError) {
  const std::vector<Volume> images{vol({0, 0, -1})};
  EXPECT_THROW(fit_normalizer("t2", images), DataError);
}

TEST(Normalizer, ApplyExamples) {
  const auto v = vol({3, 5, 0});
  EXPECT_EQ(apply_normalizer({"flair", 0, 1}, v, "flair"), v);
  EXPECT_EQ(apply_normalizer({"flair", 3, 1}, v, "flair").data()[0], 0.0f);
  EXPECT_EQ(apply_normalizer({"flair", 1, 2}, v, "flair").data()[1], 2.0f);
  EXPECT_THROW(apply_normalizer({"flair", 1, 2}, v, "t1"), DataError);
}

TEST(Normalizer, FitApplyGivesUnitForeground) {
  std::vector<Volume> images;
  Rng rng(4);
  for (int n = 0; n < 3; ++n) {
    std::vector<float> v(500);
    for (auto& x : v) x = rng.bernoulli(0.3) ? 0.0f : static_cast<float>(100 + 25 * rng.normal());
    for (auto& x : v) x = std::max(x, 0.0f);
    images.push_back(vol(std::move(v)));
  }
  const auto n = fit_normalizer("flair", images);
  double s = 0, s2 = 0, count = 0;
  for (const auto& img : images) {
    const auto out = apply_normalizer(n, img, "flair");
    for (std::size_t i = 0; i < out.data().size(); ++i)
      if (img.data()[i] > 0) {
        s += out.data()[i];
        s2 += double(out.data()[i]) * out.data()[i];
        ++count;
      }
  }
  const double mean = s / count;
  EXPECT_NEAR(mean, 0.0, 1e-3);
  EXPECT_NEAR(std::sqrt(s2 / count - mean * mean), 1.0, 1e-3);
}

TEST(Normalizer, FileRoundTrip) {
  const auto dir = std::filesystem::temp_directory_path() / "vxf_norm_test";
  std::filesystem::create_directories(dir);
  const ZScoreNormalizer n{"t1ce", 123.456789012345, 0.1 + 0.2};
  write_normalizer(n, dir / "t1ce.txt");
  EXPECT_EQ(read_normalizer(dir / "t1ce.txt"), n);
  std::filesystem::remove_all(dir);
}

TEST(Flip, ProbabilityZeroAndOne) {
  const auto img = ramp({3, 4, 5}, 2);
  std::vector<std::uint8_t> l(60);
  for (std::size_t i = 0; i < l.size(); ++i) l[i] = static_cast<std::uint8_t>(i);
  const LabelVolume mask({3, 4, 5}, l);
  AugmentConfig cfg;
  cfg.flip_prob_per_axis = 0.0;
  Rng r0(1);
  auto [a, b] = random_flip(img, mask, cfg, r0);
  EXPECT_EQ(a, img);
  EXPECT_EQ(b.data()[7], 7);
  cfg.flip_prob_per_axis = 1.0;
  Rng r1(1);
  auto [c, d] = random_flip(img, mask, cfg, r1);
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 4; ++j)
      for (int k = 0; k < 5; ++k) ASSERT_EQ(c.at(1, i, j, k), img.at(1, 2 - i, 3 - j, 4 - k));
  auto [e, f] = random_flip(c, d, cfg, r1);
  EXPECT_EQ(e, img);
  EXPECT_TRUE(std::equal(f.data().begin(), f.data().end(), l.begin()));
}

TEST(Flip, ImageAndMaskAgreeAndAreSeeded) {
  const auto img = ramp({4, 4, 4});
  AugmentConfig cfg;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng a(seed), b(seed);
    const auto [x1, m1] = random_flip(img, img, cfg, a);
    const auto [x2, m2] = random_flip(img, img, cfg, b);
    EXPECT_EQ(x1, m1);
    EXPECT_EQ(x1, x2);
  }
}

TEST(Intensity, IdentityAndForcedAffine) {
  const auto v = vol({3, 1, 0});
  AugmentConfig cfg;
  cfg.scale_range = 0;
  cfg.shift_range = 0;
  Rng rng(9);
  EXPECT_EQ(random_intensity_scale_shift(v, cfg, rng), v);
  const std::vector<double> f{2.0}, o{1.0};
  EXPECT_EQ(scale_shift_intensity(v, f, o).data()[0], 7.0f);
}

TEST(Intensity, FactorsStayInRange) {
  const auto v = vol({1, 1, 1, 1}, {4, 1, 1}, 1);
  AugmentConfig cfg;
  cfg.shift_range = 0;
  for (std::uint64_t s = 0; s < 50; ++s) {
    Rng rng(s);
    const float out = random_intensity_scale_shift(v, cfg, rng).data()[0];
    EXPECT_GE(out, 0.9f - 1e-6f);
    EXPECT_LE(out, 1.1f + 1e-6f);
  }
}

TEST(Labels, ToChannels) {
  const auto c = labels_to_channels(LabelVolume({4, 1, 1}, {4, 2, 0, 1}));
  ASSERT_EQ(c.channels(), 3);
  const float expect[3][4] = {{1, 0, 0, 1}, {1, 1, 0, 1}, {1, 0, 0, 0}};
  for (int ch = 0; ch < 3; ++ch)
    for (int i = 0; i < 4; ++i) EXPECT_EQ(c.at(ch, i, 0, 0), expect[ch][i]) << ch << " " << i;
}

TEST(Labels, FromChannelsPriority) {
  const auto m = vol({0.9f, 0.1f, 0.9f, 0.2f, 0.9f, 0.9f, 0.1f, 0.2f, 0.9f, 0.1f, 0.1f, 0.2f}, {4, 1, 1}, 3);
  const auto l = channels_to_labels(m);
  EXPECT_EQ(l.data()[0], 4);
  EXPECT_EQ(l.data()[1], 2);
  EXPECT_EQ(l.data()[2], 1);
  EXPECT_EQ(l.data()[3], 0);
  // Round trip through the nested channels.
  EXPECT_EQ(channels_to_labels(labels_to_channels(l)).data()[2], 1);
}
