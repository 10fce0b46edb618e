#pragma once

// Synthetic four-modality cases with nested ellipsoidal tumours, used as a
// desk-scale training and test substrate.
//
// Labels: 2 edema (outer shell, WT only), 1 necrosis (TC shell), 4 enhancing
// core. Voxels outside the brain ellipsoid are exactly 0 in every modality.

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>

#include "voxelforge/volume.hpp"

namespace vxf {

struct SyntheticSpec {
  std::int64_t count = 40;
  Dims3 dims{32, 32, 32};
  std::uint64_t seed = 0;
  /// Gaussian noise standard deviation, in intensity units.
  double noise = 20.0;
  /// Brain ellipsoid semi-axes as a fraction of the grid extent.
  double brain_min = 0.46;
  double brain_max = 0.5;
  /// Whole-tumour semi-axes as a fraction of the grid extent.
  double tumor_min = 0.36;
  double tumor_max = 0.44;
  /// TC semi-axes as a fraction of WT, ET as a fraction of TC.
  double core_min = 0.8;
  double core_max = 0.9;
  double enhancing_min = 0.7;
  double enhancing_max = 0.8;

  void validate() const;
};

struct SyntheticCase {
  std::string id;
  /// FLAIR, T1, T1CE, T2, each single-channel, on the stored grid.
  std::array<Volume, 4> modalities;
  LabelVolume seg;
};

/// Case ids are "case000", "case001", ...; every third case is stored in LPS
/// order with a matching affine.
SyntheticCase make_synthetic_case(const SyntheticSpec& spec, std::int64_t index);

/// Writes <id>_{flair,t1,t1ce,t2,seg}.nii.gz for every case.
void write_synthetic_dataset(const SyntheticSpec& spec, const std::filesystem::path& dir);

}  // namespace vxf
