#pragma once

// Case discovery, loading and the deterministic train/val/test split.

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "voxelforge/preprocess.hpp"
#include "voxelforge/volume.hpp"

namespace vxf {

/// Files of one case: <id>_{flair,t1,t1ce,t2}.nii[.gz] and <id>_seg.nii[.gz].
struct CaseFiles {
  std::string id;
  std::array<std::filesystem::path, 4> modalities;
  std::filesystem::path seg;
};

/// Cases in `dir`, sorted by id. Throws DataError for an unreadable
/// directory, an empty one, or a case missing any of its five files.
std::vector<CaseFiles> discover_cases(const std::filesystem::path& dir);

/// Stacked (FLAIR, T1, T1CE, T2) image and labels, reoriented to RAS and
/// centre-cropped/padded to `roi`.
struct CaseVolumes {
  std::string id;
  Volume image;
  LabelVolume labels;
};

CaseVolumes load_case(const CaseFiles& files, const Dims3& roi);
/// Reads the four modality files into a RAS stack on their native grid.
Volume load_modalities(const std::array<std::filesystem::path, 4>& paths);

struct SplitRatios {
  double train = 0.6;
  double val = 0.2;
  double test = 0.2;

  void validate() const;
};

struct Split {
  std::vector<std::size_t> train;
  std::vector<std::size_t> val;
  std::vector<std::size_t> test;
};

/// Shuffles indices [0, count) with `seed` and cuts round(count*train),
/// round(count*val) and the remainder. Throws DataError if any part is empty.
Split split_cases(std::size_t count, std::uint64_t seed, const SplitRatios& ratios);

/// One normalizer per modality over the pooled foreground of `cases`.
ModalityNormalizers fit_normalizers(std::span<const CaseVolumes> cases);

void write_normalizers(const ModalityNormalizers& normalizers, const std::filesystem::path& dir);
ModalityNormalizers read_normalizers(const std::filesystem::path& dir);

/// Normalised image and (TC, WT, ET) target.
struct Sample {
  std::string id;
  Volume image;
  Volume target;
};

Sample make_sample(const CaseVolumes& c, const ModalityNormalizers& normalizers);

}  // namespace vxf
