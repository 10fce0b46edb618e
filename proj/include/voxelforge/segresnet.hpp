#pragma once

// Encoder-decoder residual segmentation network.
//
// Parameter names:
//   conv_init.{weight,bias}
//   enc.l<L>.down.{weight,bias}                       (L >= 1)
//   enc.l<L>.b<B>.{norm1,conv1,norm2,conv2}.{weight,bias}
//   dec.l<L>.reduce.{weight,bias}
//   dec.l<L>.b<B>.{norm1,conv1,norm2,conv2}.{weight,bias}
//   head.{norm,conv}.{weight,bias}
// Norm weight/bias are the affine scale/shift.

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "voxelforge/ops.hpp"
#include "voxelforge/rng.hpp"
#include "voxelforge/tensor.hpp"

namespace vxf {

struct SegResNetConfig {
  std::int64_t in_channels = 4;
  std::int64_t out_channels = 3;
  std::int64_t init_filters = 16;
  double dropout_prob = 0.2;
  std::vector<std::int64_t> down_blocks{1, 2, 2, 4};
  std::vector<std::int64_t> up_blocks{1, 1, 1};
  std::int64_t norm_groups = 8;
  double norm_eps = 1e-5;

  void validate() const;
  std::int64_t levels() const noexcept { return static_cast<std::int64_t>(down_blocks.size()); }
  /// Spatial extents must be multiples of this.
  std::int64_t spatial_multiple() const noexcept { return std::int64_t{1} << (levels() - 1); }
  /// Filters at encoder level `level`.
  std::int64_t filters(std::int64_t level) const noexcept { return init_filters << level; }

  friend bool operator==(const SegResNetConfig&, const SegResNetConfig&) = default;
};

/// Groups for a given filter count: the default 8, or fewer for narrow nets.
std::int64_t default_norm_groups(std::int64_t init_filters) noexcept;

template <class Real>
class SegResNet {
 public:
  /// Kaiming fan-in normal conv weights drawn in registry order from a
  /// generator seeded with `seed`; norm scales 1, all shifts and biases 0.
  static SegResNet build(const SegResNetConfig& config, std::uint64_t seed);

  const SegResNetConfig& config() const noexcept { return config_; }
  const std::vector<std::string>& parameter_names() const noexcept { return names_; }
  std::span<Tensor<Real>> parameters() noexcept { return params_; }
  std::span<const Tensor<Real>> parameters() const noexcept { return params_; }
  std::int64_t parameter_count() const noexcept;

  /// Throws UsageError for unknown names.
  const Tensor<Real>& parameter(std::string_view name) const;
  Tensor<Real>& parameter(std::string_view name);

  /// x [N, in_channels, D, H, W] -> logits [N, out_channels, D, H, W].
  /// Dropout is active only when `training`; its mask is keyed by `key`.
  Tensor<Real> forward(const Tensor<Real>& x, bool training, const DropoutKey& key = {}) const;

  void zero_grad();

 private:
  struct Conv {
    std::size_t weight, bias;
  };
  struct Norm {
    std::size_t weight, bias;
  };
  struct Block {
    Norm norm1;
    Conv conv1;
    Norm norm2;
    Conv conv2;
  };
  struct Level {
    bool has_down = false;
    Conv down{};
    std::vector<Block> blocks;
  };
  struct DecoderStage {
    std::int64_t level = 0;
    Conv reduce{};
    std::vector<Block> blocks;
  };

  std::size_t add_param(std::string name, Shape shape, std::vector<Real> values);
  Conv add_conv(const std::string& prefix, std::int64_t cin, std::int64_t cout, std::int64_t k,
                Rng& rng);
  Norm add_norm(const std::string& prefix, std::int64_t channels);
  Block add_block(const std::string& prefix, std::int64_t channels, Rng& rng);

  Tensor<Real> conv(const Conv& c, const Tensor<Real>& x, std::int64_t stride) const;
  Tensor<Real> norm(const Norm& n, const Tensor<Real>& x) const;
  Tensor<Real> block(const Block& b, const Tensor<Real>& x) const;

  SegResNetConfig config_;
  std::vector<std::string> names_;
  std::vector<Tensor<Real>> params_;
  Conv conv_init_{};
  std::vector<Level> encoder_;
  std::vector<DecoderStage> decoder_;
  Norm head_norm_{};
  Conv head_conv_{};
};

/// Copies parameter values between models of identical topology, converting
/// the element type.
template <class To, class From>
void copy_parameters(const SegResNet<From>& src, SegResNet<To>& dst);

extern template class SegResNet<float>;
extern template class SegResNet<double>;

}  // namespace vxf
