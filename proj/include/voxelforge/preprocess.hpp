#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <utility>

#include "voxelforge/rng.hpp"
#include "voxelforge/volume.hpp"

namespace vxf {

/// Foreground (voxel > 0) z-score statistics for one modality.
struct ZScoreNormalizer {
  std::string modality;
  double mean = 0.0;
  double std = 1.0;

  friend bool operator==(const ZScoreNormalizer&, const ZScoreNormalizer&) = default;
};

inline constexpr double kMinNormalizerStd = 1e-8;

/// Pools the foreground voxels of every image (population variance).
ZScoreNormalizer fit_normalizer(std::string modality, std::span<const Volume> images);

/// x -> (x - mean) / std over every voxel, background included.
Volume apply_normalizer(const ZScoreNormalizer& normalizer, const Volume& v,
                        std::string_view modality);

using ModalityNormalizers = std::array<ZScoreNormalizer, 4>;

/// Normalizes a stacked (FLAIR, T1, T1CE, T2) volume channel by channel.
Volume apply_normalizers(const ModalityNormalizers& normalizers, const Volume& stacked);

/// "modality=...\nmean=...\nstd=...\n" text files, one per modality.
void write_normalizer(const ZScoreNormalizer& normalizer, const std::filesystem::path& path);
ZScoreNormalizer read_normalizer(const std::filesystem::path& path);

struct AugmentConfig {
  double flip_prob_per_axis = 0.5;
  double scale_range = 0.1;
  /// Offset bound in units of the channel's standard deviation.
  double shift_range = 0.1;
  std::uint64_t seed = 0;

  void validate() const;
};

Volume flip_axes(const Volume& v, const std::array<bool, 3>& axes);
LabelVolume flip_axes(const LabelVolume& v, const std::array<bool, 3>& axes);

/// Draws one flip decision per axis and applies it to image and mask alike.
std::pair<Volume, Volume> random_flip(const Volume& image, const Volume& mask,
                                      const AugmentConfig& cfg, Rng& rng);
std::pair<Volume, LabelVolume> random_flip(const Volume& image, const LabelVolume& mask,
                                           const AugmentConfig& cfg, Rng& rng);

/// x -> factor[c] * x + offset[c], per channel.
Volume scale_shift_intensity(const Volume& v, std::span<const double> factors,
                             std::span<const double> offsets);

/// Per channel: factor ~ U[1 - scale_range, 1 + scale_range] and
/// offset ~ U[-shift_range, shift_range] * std(channel).
Volume random_intensity_scale_shift(const Volume& v, const AugmentConfig& cfg, Rng& rng);

/// Channel order of the evaluation masks.
enum TumorChannel : int { kTumorCore = 0, kWholeTumor = 1, kEnhancingTumor = 2 };

/// BraTS labels to nested binary channels: TC = {1,4}, WT = {1,2,4}, ET = {4}.
Volume labels_to_channels(const LabelVolume& labels);

/// Thresholds each channel (p >= threshold) and assigns ET -> 4, else TC -> 1,
/// else WT -> 2, else 0.
LabelVolume channels_to_labels(const Volume& channels, double threshold = 0.5);

}  // namespace vxf
