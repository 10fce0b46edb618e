#include <gtest/gtest.h>

#include <cmath>

#include "../oracles/grad_check.hpp"
#include "../oracles/param_count_oracle.hpp"
#include "voxelforge/errors.hpp"
#include "voxelforge/losses.hpp"
#include "voxelforge/segresnet.hpp"

using namespace vxf;

namespace {

SegResNetConfig tiny(std::int64_t f = 8) {
  SegResNetConfig c;
  c.init_filters = f;
  c.norm_groups = std::min<std::int64_t>(4, f);
  return c;
}

Tensor<float> input(Shape s, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<float> v(static_cast<std::size_t>(shape_numel(s)));
  for (auto& x : v) x = static_cast<float>(rng.normal());
  return Tensor<float>::from_data(std::move(s), std::move(v));
}

}  // namespace

TEST(SegResNet, ParameterCountMatchesOracle) {
  for (std::int64_t f : {2, 8, 16}) {
    const auto m = SegResNet<float>::build(tiny(f), 1);
    EXPECT_EQ(m.parameter_count(), oracle::segresnet_params(4, 3, f, {1, 2, 2, 4}, {1, 1, 1})) << f;
  }
  EXPECT_EQ(oracle::segresnet_params(4, 3, 8, {1, 2, 2, 4}, {1, 1, 1}), 1177851);
  auto c = tiny(4);
  c.down_blocks = {1, 1, 2};
  c.up_blocks = {2, 1};
  EXPECT_EQ(SegResNet<double>::build(c, 3).parameter_count(), oracle::segresnet_params(4, 3, 4, {1, 1, 2}, {2, 1}));
}

TEST(SegResNet, FilterWidths) {
  const SegResNetConfig c;
  EXPECT_EQ(c.filters(0), 16);
  EXPECT_EQ(c.filters(3), 128);
  const auto m = SegResNet<float>::build(c, 0);
  EXPECT_EQ(m.parameter("enc.l3.down.weight").shape(), (Shape{128, 64, 3, 3, 3}));
  EXPECT_EQ(m.parameter("dec.l0.reduce.weight").shape(), (Shape{16, 32, 1, 1, 1}));
  EXPECT_EQ(m.parameter("head.conv.weight").shape(), (Shape{3, 16, 1, 1, 1}));
  EXPECT_THROW(m.parameter("nope"), UsageError);
}

TEST(SegResNet, SameSeedSameParameters) {
  const auto a = SegResNet<float>::build(tiny(), 5), b = SegResNet<float>::build(tiny(), 5),
             c = SegResNet<float>::build(tiny(), 6);
  bool differs = false;
  for (std::size_t i = 0; i < a.parameters().size(); ++i) {
    const auto x = a.parameters()[i].data(), y = b.parameters()[i].data(), z = c.parameters()[i].data();
    EXPECT_TRUE(std::equal(x.begin(), x.end(), y.begin()));
    differs = differs || !std::equal(x.begin(), x.end(), z.begin());
  }
  EXPECT_TRUE(differs);
}

TEST(SegResNet, ShapesAndDivisibility) {
  const auto m = SegResNet<float>::build(tiny(2), 1);
  EXPECT_EQ(m.forward(input({1, 4, 16, 8, 24}, 1), false).shape(), (Shape{1, 3, 16, 8, 24}));
  EXPECT_THROW(m.forward(input({1, 4, 12, 12, 12}, 1), false), ShapeError);
  EXPECT_THROW(m.forward(input({1, 3, 16, 16, 16}, 1), false), ShapeError);
}

TEST(SegResNet, ForwardIsDeterministic) {
  const auto m = SegResNet<float>::build(tiny(), 2);
  const auto x = input({1, 4, 16, 16, 16}, 2);
  const auto a = m.forward(x, true, {1, 0, 3}), b = m.forward(x, true, {1, 0, 3});
  EXPECT_TRUE(std::equal(a.data().begin(), a.data().end(), b.data().begin()));
  const auto e1 = m.forward(x, false), e2 = m.forward(x, false);
  EXPECT_TRUE(std::equal(e1.data().begin(), e1.data().end(), e2.data().begin()));
  EXPECT_FALSE(std::equal(a.data().begin(), a.data().end(), e1.data().begin()));
}

TEST(SegResNet, EveryParameterReceivesGradient) {
  auto m = SegResNet<float>::build(tiny(4), 3);
  const auto x = input({1, 4, 8, 8, 8}, 3);
  std::vector<float> t(3 * 512);
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = (i / 7) % 2;
  Tape<float> tape;
  tape.backward(dice_loss(m.forward(x, true, {1, 0, 0}), Tensor<float>::from_data({1, 3, 8, 8, 8}, t)));
  for (std::size_t i = 0; i < m.parameters().size(); ++i) {
    double norm = 0;
    for (float g : m.parameters()[i].grad()) norm += std::fabs(g);
    EXPECT_GT(norm, 0.0) << m.parameter_names()[i];
  }
}

TEST(SegResNet, MiniNetworkGradient) {
  auto cfg = tiny(2);
  cfg.down_blocks = {1, 1};
  cfg.up_blocks = {1};
  cfg.norm_groups = 2;
  auto m = SegResNet<double>::build(cfg, 4);
  Rng rng(4);
  std::vector<double> xs(4 * 64), ts(3 * 64);
  for (auto& v : xs) v = rng.normal();
  for (auto& v : ts) v = rng.bernoulli(0.4);
  const auto x = Tensor<double>::from_data({1, 4, 4, 4, 4}, xs, Precision::kDouble);
  const auto target = Tensor<double>::from_data({1, 3, 4, 4, 4}, ts, Precision::kDouble);
  std::vector<Tensor<double>> params(m.parameters().begin(), m.parameters().end());
  const auto r = oracle::check_gradients(
      params, [&](const auto&) { return dice_loss(m.forward(x, true, {9, 0, 0}), target); }, 1e-5, 6);
  EXPECT_LE(r.max_rel_error, 1e-3) << m.parameter_names()[r.worst_input] << "[" << r.worst_index << "]";
}

TEST(SegResNet, CopyParametersConvertsType) {
  const auto a = SegResNet<float>::build(tiny(2), 7);
  auto b = SegResNet<double>::build(tiny(2), 8);
  copy_parameters(a, b);
  for (std::size_t i = 0; i < a.parameters().size(); ++i)
    for (std::size_t j = 0; j < a.parameters()[i].data().size(); ++j)
      ASSERT_EQ(b.parameters()[i].data()[j], static_cast<double>(a.parameters()[i].data()[j]));
  auto c = SegResNet<double>::build(tiny(4), 8);
  EXPECT_THROW(copy_parameters(a, c), ShapeError);
}

TEST(SegResNetConfig, Validation) {
  auto c = tiny();
  c.norm_groups = 3;
  EXPECT_THROW(c.validate(), UsageError);
  c = tiny();
  c.up_blocks = {1, 1};
  EXPECT_THROW(c.validate(), UsageError);
  c = tiny();
  c.dropout_prob = 1.0;
  EXPECT_THROW(c.validate(), UsageError);
  EXPECT_EQ(tiny().spatial_multiple(), 8);
  EXPECT_EQ(default_norm_groups(2), 2);
  EXPECT_EQ(default_norm_groups(16), 8);
}
