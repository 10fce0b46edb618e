#include "voxelforge/segresnet.hpp"

#include <algorithm>
#include <cmath>

#include "voxelforge/errors.hpp"

namespace vxf {

void SegResNetConfig::validate() const {
  if (in_channels < 1 || out_channels < 1) throw UsageError("channel counts must be >= 1");
  if (init_filters < 1) throw UsageError("init_filters must be >= 1");
  if (norm_groups < 1 || init_filters % norm_groups != 0)
    throw UsageError("init_filters (" + std::to_string(init_filters) +
                     ") must be divisible by norm_groups (" + std::to_string(norm_groups) + ")");
  if (!(dropout_prob >= 0.0 && dropout_prob < 1.0)) throw UsageError("dropout_prob must be in [0, 1)");
  if (down_blocks.empty()) throw UsageError("down_blocks must not be empty");
  if (up_blocks.size() + 1 != down_blocks.size())
    throw UsageError("up_blocks must have one entry fewer than down_blocks");
  for (auto n : down_blocks)
    if (n < 1) throw UsageError("down_blocks entries must be >= 1");
  for (auto n : up_blocks)
    if (n < 1) throw UsageError("up_blocks entries must be >= 1");
  if (down_blocks.size() > 8) throw UsageError("at most 8 encoder levels are supported");
  if (!(norm_eps > 0.0)) throw UsageError("norm_eps must be positive");
}

std::int64_t default_norm_groups(std::int64_t init_filters) noexcept {
  return std::min<std::int64_t>(8, init_filters);
}

template <class Real>
std::size_t SegResNet<Real>::add_param(std::string name, Shape shape, std::vector<Real> values) {
  names_.push_back(std::move(name));
  params_.push_back(Tensor<Real>::parameter(std::move(shape), std::move(values)));
  return params_.size() - 1;
}

template <class Real>
typename SegResNet<Real>::Conv SegResNet<Real>::add_conv(const std::string& prefix, std::int64_t cin,
                                                         std::int64_t cout, std::int64_t k, Rng& rng) {
  const std::int64_t fan_in = cin * k * k * k;
  const double std = std::sqrt(2.0 / static_cast<double>(fan_in));
  std::vector<Real> w(static_cast<std::size_t>(cout * fan_in));
  for (Real& v : w) v = static_cast<Real>(std * rng.normal());
  Conv c;
  c.weight = add_param(prefix + ".weight", {cout, cin, k, k, k}, std::move(w));
  c.bias = add_param(prefix + ".bias", {cout}, std::vector<Real>(static_cast<std::size_t>(cout), Real(0)));
  return c;
}

template <class Real>
typename SegResNet<Real>::Norm SegResNet<Real>::add_norm(const std::string& prefix, std::int64_t channels) {
  Norm n;
  n.weight = add_param(prefix + ".weight", {channels}, std::vector<Real>(static_cast<std::size_t>(channels), Real(1)));
  n.bias = add_param(prefix + ".bias", {channels}, std::vector<Real>(static_cast<std::size_t>(channels), Real(0)));
  return n;
}

template <class Real>
typename SegResNet<Real>::Block SegResNet<Real>::add_block(const std::string& prefix, std::int64_t channels,
                                                           Rng& rng) {
  Block b;
  b.norm1 = add_norm(prefix + ".norm1", channels);
  b.conv1 = add_conv(prefix + ".conv1", channels, channels, 3, rng);
  b.norm2 = add_norm(prefix + ".norm2", channels);
  b.conv2 = add_conv(prefix + ".conv2", channels, channels, 3, rng);
  return b;
}

template <class Real>
SegResNet<Real> SegResNet<Real>::build(const SegResNetConfig& config, std::uint64_t seed) {
  config.validate();
  SegResNet m;
  m.config_ = config;
  Rng rng(seed);
  m.conv_init_ = m.add_conv("conv_init", config.in_channels, config.init_filters, 3, rng);
  for (std::int64_t l = 0; l < config.levels(); ++l) {
    Level level;
    const std::string prefix = "enc.l" + std::to_string(l);
    if (l > 0) {
      level.has_down = true;
      level.down = m.add_conv(prefix + ".down", config.filters(l - 1), config.filters(l), 3, rng);
    }
    for (std::int64_t b = 0; b < config.down_blocks[static_cast<std::size_t>(l)]; ++b)
      level.blocks.push_back(m.add_block(prefix + ".b" + std::to_string(b), config.filters(l), rng));
    m.encoder_.push_back(std::move(level));
  }
  for (std::size_t i = 0; i < config.up_blocks.size(); ++i) {
    DecoderStage stage;
    stage.level = config.levels() - 2 - static_cast<std::int64_t>(i);
    const std::string prefix = "dec.l" + std::to_string(stage.level);
    stage.reduce = m.add_conv(prefix + ".reduce", config.filters(stage.level + 1), config.filters(stage.level), 1, rng);
    for (std::int64_t b = 0; b < config.up_blocks[i]; ++b)
      stage.blocks.push_back(m.add_block(prefix + ".b" + std::to_string(b), config.filters(stage.level), rng));
    m.decoder_.push_back(std::move(stage));
  }
  m.head_norm_ = m.add_norm("head.norm", config.init_filters);
  m.head_conv_ = m.add_conv("head.conv", config.init_filters, config.out_channels, 1, rng);
  return m;
}

template <class Real>
std::int64_t SegResNet<Real>::parameter_count() const noexcept {
  std::int64_t n = 0;
  for (const auto& p : params_) n += p.numel();
  return n;
}

template <class Real>
const Tensor<Real>& SegResNet<Real>::parameter(std::string_view name) const {
  const auto it = std::find(names_.begin(), names_.end(), name);
  if (it == names_.end()) throw UsageError("unknown parameter " + std::string(name));
  return params_[static_cast<std::size_t>(it - names_.begin())];
}

template <class Real>
Tensor<Real>& SegResNet<Real>::parameter(std::string_view name) {
  return const_cast<Tensor<Real>&>(std::as_const(*this).parameter(name));
}

template <class Real>
Tensor<Real> SegResNet<Real>::conv(const Conv& c, const Tensor<Real>& x, std::int64_t stride) const {
  const Tensor<Real>& w = params_[c.weight];
  return conv3d(x, w, params_[c.bias], stride, (w.dim(2) - 1) / 2);
}

template <class Real>
Tensor<Real> SegResNet<Real>::norm(const Norm& n, const Tensor<Real>& x) const {
  return group_norm(x, config_.norm_groups, params_[n.weight], params_[n.bias], config_.norm_eps);
}

template <class Real>
Tensor<Real> SegResNet<Real>::block(const Block& b, const Tensor<Real>& x) const {
  Tensor<Real> h = conv(b.conv1, relu(norm(b.norm1, x)), 1);
  h = conv(b.conv2, relu(norm(b.norm2, h)), 1);
  return add(x, h);
}

template <class Real>
Tensor<Real> SegResNet<Real>::forward(const Tensor<Real>& x, bool training, const DropoutKey& key) const {
  if (!x.defined() || x.rank() != 5)
    throw ShapeError("forward expects [N, C, D, H, W] input");
  if (x.dim(1) != config_.in_channels)
    throw ShapeError("forward expects " + std::to_string(config_.in_channels) + " input channels, got " +
                     std::to_string(x.dim(1)));
  const std::int64_t mult = config_.spatial_multiple();
  for (int a = 2; a < 5; ++a)
    if (x.dim(a) % mult != 0)
      throw ShapeError("spatial extents " + shape_string(x.shape()) + " must be divisible by " +
                       std::to_string(mult));

  Tensor<Real> h = dropout(conv(conv_init_, x, 1), config_.dropout_prob, training, key);
  std::vector<Tensor<Real>> skips;
  for (const Level& level : encoder_) {
    if (level.has_down) h = conv(level.down, h, 2);
    for (const Block& b : level.blocks) h = block(b, h);
    skips.push_back(h);
  }
  for (const DecoderStage& stage : decoder_) {
    h = trilinear_upsample2x(conv(stage.reduce, h, 1));
    h = add(h, skips[static_cast<std::size_t>(stage.level)]);
    for (const Block& b : stage.blocks) h = block(b, h);
  }
  return conv(head_conv_, relu(norm(head_norm_, h)), 1);
}

template <class Real>
void SegResNet<Real>::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

template <class To, class From>
void copy_parameters(const SegResNet<From>& src, SegResNet<To>& dst) {
  if (src.parameter_names() != dst.parameter_names())
    throw ShapeError("copy_parameters: models have different parameter registries");
  auto from = src.parameters();
  auto to = dst.parameters();
  for (std::size_t i = 0; i < from.size(); ++i) {
    if (from[i].shape() != to[i].shape())
      throw ShapeError("copy_parameters: shape mismatch for " + src.parameter_names()[i]);
    auto out = to[i].mutable_data();
    std::transform(from[i].data().begin(), from[i].data().end(), out.begin(),
                   [](From v) { return static_cast<To>(v); });
  }
}

template class SegResNet<float>;
template class SegResNet<double>;
template void copy_parameters(const SegResNet<float>&, SegResNet<double>&);
template void copy_parameters(const SegResNet<double>&, SegResNet<float>&);
template void copy_parameters(const SegResNet<float>&, SegResNet<float>&);
template void copy_parameters(const SegResNet<double>&, SegResNet<double>&);

}  // namespace vxf
