#include "voxelforge/preprocess.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include "voxelforge/errors.hpp"
#include "voxelforge/kv_text.hpp"

namespace vxf {
namespace {

template <class T>
std::vector<T> flip_grid(std::span<const T> in, std::int64_t channels, const Dims3& d,
                         const std::array<bool, 3>& axes) {
  std::vector<T> out(in.size());
  const std::int64_t n = voxel_count(d);
  for (std::int64_t c = 0; c < channels; ++c)
    for (std::int64_t i = 0; i < d[0]; ++i) {
      const std::int64_t si = axes[0] ? d[0] - 1 - i : i;
      for (std::int64_t j = 0; j < d[1]; ++j) {
        const std::int64_t sj = axes[1] ? d[1] - 1 - j : j;
        const T* src = in.data() + c * n + (si * d[1] + sj) * d[2];
        T* dst = out.data() + c * n + (i * d[1] + j) * d[2];
        if (axes[2]) {
          for (std::int64_t k = 0; k < d[2]; ++k) dst[k] = src[d[2] - 1 - k];
        } else {
          std::copy(src, src + d[2], dst);
        }
      }
    }
  return out;
}

std::array<bool, 3> draw_flips(const AugmentConfig& cfg, Rng& rng) {
  cfg.validate();
  std::array<bool, 3> axes{};
  for (auto& a : axes) a = rng.bernoulli(cfg.flip_prob_per_axis);
  return axes;
}

}  // namespace

ZScoreNormalizer fit_normalizer(std::string modality, std::span<const Volume> images) {
  if (images.empty()) throw DataError("cannot fit a normalizer on an empty corpus");
  double sum = 0.0;
  std::int64_t count = 0;
  for (const Volume& v : images)
    for (float x : v.data())
      if (x > 0.0f) {
        sum += x;
        ++count;
      }
  if (count == 0)
    throw DataError("no foreground voxels found for modality " + modality);
  const double mean = sum / static_cast<double>(count);
  // Second pass keeps the variance free of cancellation.
  double sq = 0.0;
  for (const Volume& v : images)
    for (float x : v.data())
      if (x > 0.0f) {
        const double d = x - mean;
        sq += d * d;
      }
  const double std = std::sqrt(sq / static_cast<double>(count));
  return ZScoreNormalizer{std::move(modality), mean, std::max(std, kMinNormalizerStd)};
}

Volume apply_normalizer(const ZScoreNormalizer& normalizer, const Volume& v,
                        std::string_view modality) {
  if (normalizer.modality != modality)
    throw DataError("normalizer for " + normalizer.modality + " applied to " +
                    std::string(modality));
  std::vector<float> out(v.data().size());
  const double inv = 1.0 / normalizer.std;
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = static_cast<float>((v.data()[i] - normalizer.mean) * inv);
  return v.with_data(std::move(out));
}

Volume apply_normalizers(const ModalityNormalizers& normalizers, const Volume& stacked) {
  if (stacked.channels() != 4) throw ShapeError("expected a 4-channel stacked volume");
  std::vector<float> out(stacked.data().size());
  const std::int64_t n = stacked.voxels();
  for (std::int64_t c = 0; c < 4; ++c) {
    const ZScoreNormalizer& z = normalizers[static_cast<std::size_t>(c)];
    if (z.modality != kModalityNames[static_cast<std::size_t>(c)])
      throw DataError("normalizer order mismatch: channel " + std::to_string(c) + " expects " +
                      kModalityNames[static_cast<std::size_t>(c)] + ", got " + z.modality);
    const double inv = 1.0 / z.std;
    auto src = stacked.channel(c);
    for (std::int64_t i = 0; i < n; ++i)
      out[static_cast<std::size_t>(c * n + i)] = static_cast<float>((src[i] - z.mean) * inv);
  }
  return stacked.with_data(std::move(out));
}

void write_normalizer(const ZScoreNormalizer& normalizer, const std::filesystem::path& path) {
  KeyValueText kv;
  kv.set("modality", normalizer.modality);
  kv.set("mean", format_real(normalizer.mean));
  kv.set("std", format_real(normalizer.std));
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << kv.serialize();
}

ZScoreNormalizer read_normalizer(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  std::stringstream buffer;
  buffer << in.rdbuf();
  const KeyValueText kv = KeyValueText::parse(buffer.str());
  kv.require_only({"modality", "mean", "std"});
  ZScoreNormalizer z{kv.get("modality"), parse_real(kv.get("mean")), parse_real(kv.get("std"))};
  if (!(z.std > 0.0) || !std::isfinite(z.mean))
    throw DataError(path.string() + ": invalid normalizer statistics");
  return z;
}

void AugmentConfig::validate() const {
  if (!(flip_prob_per_axis >= 0.0 && flip_prob_per_axis <= 1.0))
    throw UsageError("flip probability must be in [0, 1]");
  if (!(scale_range >= 0.0) || !(shift_range >= 0.0))
    throw UsageError("augmentation ranges must be non-negative");
}

Volume flip_axes(const Volume& v, const std::array<bool, 3>& axes) {
  if (!axes[0] && !axes[1] && !axes[2]) return v;
  return v.with_data(flip_grid(v.data(), v.channels(), v.dims(), axes));
}

LabelVolume flip_axes(const LabelVolume& v, const std::array<bool, 3>& axes) {
  if (!axes[0] && !axes[1] && !axes[2]) return v;
  return LabelVolume(v.dims(), flip_grid(v.data(), 1, v.dims(), axes), v.affine());
}

std::pair<Volume, Volume> random_flip(const Volume& image, const Volume& mask,
                                      const AugmentConfig& cfg, Rng& rng) {
  if (image.dims() != mask.dims()) throw ShapeError("image and mask grids differ");
  const auto axes = draw_flips(cfg, rng);
  return {flip_axes(image, axes), flip_axes(mask, axes)};
}

std::pair<Volume, LabelVolume> random_flip(const Volume& image, const LabelVolume& mask,
                                           const AugmentConfig& cfg, Rng& rng) {
  if (image.dims() != mask.dims()) throw ShapeError("image and mask grids differ");
  const auto axes = draw_flips(cfg, rng);
  return {flip_axes(image, axes), flip_axes(mask, axes)};
}

Volume scale_shift_intensity(const Volume& v, std::span<const double> factors,
                             std::span<const double> offsets) {
  if (static_cast<std::int64_t>(factors.size()) != v.channels() ||
      static_cast<std::int64_t>(offsets.size()) != v.channels())
    throw ShapeError("one factor and one offset per channel required");
  std::vector<float> out(v.data().size());
  const std::int64_t n = v.voxels();
  for (std::int64_t c = 0; c < v.channels(); ++c) {
    const double f = factors[static_cast<std::size_t>(c)];
    const double o = offsets[static_cast<std::size_t>(c)];
    auto src = v.channel(c);
    for (std::int64_t i = 0; i < n; ++i)
      out[static_cast<std::size_t>(c * n + i)] = static_cast<float>(f * src[i] + o);
  }
  return v.with_data(std::move(out));
}

Volume random_intensity_scale_shift(const Volume& v, const AugmentConfig& cfg, Rng& rng) {
  cfg.validate();
  std::vector<double> factors(static_cast<std::size_t>(v.channels()));
  std::vector<double> offsets(factors.size());
  for (std::int64_t c = 0; c < v.channels(); ++c) {
    auto ch = v.channel(c);
    double mean = 0.0;
    for (float x : ch) mean += x;
    mean /= static_cast<double>(ch.size());
    double var = 0.0;
    for (float x : ch) var += (x - mean) * (x - mean);
    const double std = std::sqrt(var / static_cast<double>(ch.size()));
    factors[static_cast<std::size_t>(c)] = rng.uniform(1.0 - cfg.scale_range, 1.0 + cfg.scale_range);
    offsets[static_cast<std::size_t>(c)] = rng.uniform(-cfg.shift_range, cfg.shift_range) * std;
  }
  return scale_shift_intensity(v, factors, offsets);
}

Volume labels_to_channels(const LabelVolume& labels) {
  const std::int64_t n = labels.voxels();
  std::vector<float> out(static_cast<std::size_t>(3 * n), 0.0f);
  for (std::int64_t i = 0; i < n; ++i) {
    const std::uint8_t l = labels.data()[static_cast<std::size_t>(i)];
    if (l != 0 && l != 1 && l != 2 && l != 4)
      throw DataError("unknown label value " + std::to_string(l) + " (expected 0, 1, 2 or 4)");
    out[static_cast<std::size_t>(kTumorCore * n + i)] = (l == 1 || l == 4) ? 1.0f : 0.0f;
    out[static_cast<std::size_t>(kWholeTumor * n + i)] = l != 0 ? 1.0f : 0.0f;
    out[static_cast<std::size_t>(kEnhancingTumor * n + i)] = l == 4 ? 1.0f : 0.0f;
  }
  return Volume(3, labels.dims(), std::move(out), labels.affine());
}

LabelVolume channels_to_labels(const Volume& channels, double threshold) {
  if (channels.channels() != 3) throw ShapeError("expected a 3-channel (TC, WT, ET) mask");
  const std::int64_t n = channels.voxels();
  std::vector<std::uint8_t> out(static_cast<std::size_t>(n), 0);
  const auto tc = channels.channel(kTumorCore);
  const auto wt = channels.channel(kWholeTumor);
  const auto et = channels.channel(kEnhancingTumor);
  for (std::int64_t i = 0; i < n; ++i) {
    if (et[i] >= threshold)
      out[static_cast<std::size_t>(i)] = 4;
    else if (tc[i] >= threshold)
      out[static_cast<std::size_t>(i)] = 1;
    else if (wt[i] >= threshold)
      out[static_cast<std::size_t>(i)] = 2;
  }
  return LabelVolume(channels.dims(), std::move(out), channels.affine());
}

}  // namespace vxf
