#include "voxelforge/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "voxelforge/errors.hpp"
#include "voxelforge/nifti.hpp"
#include "voxelforge/rng.hpp"

namespace vxf {
namespace {

constexpr std::array<const char*, 5> kSuffixes{"flair", "t1", "t1ce", "t2", "seg"};

// Splits "<id>_<suffix>.nii[.gz]"; returns false for other names.
bool parse_case_name(const std::string& name, std::string& id, std::size_t& slot) {
  std::string stem;
  if (name.ends_with(".nii.gz")) {
    stem = name.substr(0, name.size() - 7);
  } else if (name.ends_with(".nii")) {
    stem = name.substr(0, name.size() - 4);
  } else {
    return false;
  }
  const auto us = stem.rfind('_');
  if (us == std::string::npos || us == 0) return false;
  const std::string suffix = stem.substr(us + 1);
  for (std::size_t i = 0; i < kSuffixes.size(); ++i)
    if (suffix == kSuffixes[i]) {
      id = stem.substr(0, us);
      slot = i;
      return true;
    }
  return false;
}

}  // namespace

std::vector<CaseFiles> discover_cases(const std::filesystem::path& dir) {
  std::error_code ec;
  if (!std::filesystem::is_directory(dir, ec)) throw DataError("not a directory: " + dir.string());
  std::map<std::string, std::array<std::filesystem::path, 5>> found;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    if (!entry.is_regular_file()) continue;
    std::string id;
    std::size_t slot = 0;
    if (!parse_case_name(entry.path().filename().string(), id, slot)) continue;
    auto& paths = found[id];
    if (!paths[slot].empty())
      throw DataError("case " + id + " has more than one " + kSuffixes[slot] + " file");
    paths[slot] = entry.path();
  }
  if (found.empty()) throw DataError("no cases found in " + dir.string());
  std::vector<CaseFiles> cases;
  for (const auto& [id, paths] : found) {
    for (std::size_t i = 0; i < paths.size(); ++i)
      if (paths[i].empty()) throw DataError("case " + id + " is missing its " + kSuffixes[i] + " file");
    cases.push_back(CaseFiles{id, {paths[0], paths[1], paths[2], paths[3]}, paths[4]});
  }
  return cases;
}

Volume load_modalities(const std::array<std::filesystem::path, 4>& paths) {
  std::array<Volume, 4> v;
  for (std::size_t i = 0; i < 4; ++i) {
    v[i] = reorient_to_ras(volume_from_nifti(read_nifti(paths[i])));
    if (v[i].channels() != 1) throw DataError(paths[i].string() + ": expected a single 3D volume");
  }
  return stack_modalities(v[0], v[1], v[2], v[3]);
}

CaseVolumes load_case(const CaseFiles& files, const Dims3& roi) {
  const Volume image = load_modalities(files.modalities);
  const LabelVolume labels = reorient_to_ras(labels_from_nifti(read_nifti(files.seg)));
  if (labels.dims() != image.dims() || max_abs_difference(labels.affine(), image.affine()) > 1e-4)
    throw DataError("case " + files.id + ": label grid differs from the image grid");
  return CaseVolumes{files.id, crop_or_pad_center(image, roi), crop_or_pad_center(labels, roi)};
}

void SplitRatios::validate() const {
  if (!(train > 0.0) || !(val > 0.0) || !(test >= 0.0))
    throw UsageError("split ratios must be positive (test may be 0)");
  if (std::fabs(train + val + test - 1.0) > 1e-9) throw UsageError("split ratios must sum to 1");
}

Split split_cases(std::size_t count, std::uint64_t seed, const SplitRatios& ratios) {
  ratios.validate();
  std::vector<std::size_t> order(count);
  for (std::size_t i = 0; i < count; ++i) order[i] = i;
  Rng rng(derive_seed(seed, {0x73706c6974ull}));
  for (std::size_t i = count; i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
  const auto n_train = static_cast<std::size_t>(std::llround(static_cast<double>(count) * ratios.train));
  const auto n_val = static_cast<std::size_t>(std::llround(static_cast<double>(count) * ratios.val));
  if (n_train == 0 || n_val == 0 || n_train + n_val > count || (ratios.test > 0.0 && n_train + n_val == count))
    throw DataError(std::to_string(count) + " cases are too few for the requested split");
  Split s;
  s.train.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_train));
  s.val.assign(order.begin() + static_cast<std::ptrdiff_t>(n_train),
               order.begin() + static_cast<std::ptrdiff_t>(n_train + n_val));
  s.test.assign(order.begin() + static_cast<std::ptrdiff_t>(n_train + n_val), order.end());
  return s;
}

ModalityNormalizers fit_normalizers(std::span<const CaseVolumes> cases) {
  if (cases.empty()) throw DataError("cannot fit normalizers without cases");
  ModalityNormalizers out;
  for (std::size_t m = 0; m < 4; ++m) {
    std::vector<Volume> channel;
    channel.reserve(cases.size());
    for (const auto& c : cases) {
      const auto src = c.image.channel(static_cast<std::int64_t>(m));
      channel.emplace_back(1, c.image.dims(), std::vector<float>(src.begin(), src.end()), c.image.affine());
    }
    out[m] = fit_normalizer(kModalityNames[m], channel);
  }
  return out;
}

void write_normalizers(const ModalityNormalizers& normalizers, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw DataError("cannot create " + dir.string() + ": " + ec.message());
  for (const auto& n : normalizers) write_normalizer(n, dir / (n.modality + ".norm"));
}

ModalityNormalizers read_normalizers(const std::filesystem::path& dir) {
  ModalityNormalizers out;
  for (std::size_t m = 0; m < 4; ++m) {
    out[m] = read_normalizer(dir / (std::string(kModalityNames[m]) + ".norm"));
    if (out[m].modality != kModalityNames[m])
      throw DataError("normalizer file for " + std::string(kModalityNames[m]) + " names " + out[m].modality);
  }
  return out;
}

Sample make_sample(const CaseVolumes& c, const ModalityNormalizers& normalizers) {
  return Sample{c.id, apply_normalizers(normalizers, c.image), labels_to_channels(c.labels)};
}

}  // namespace vxf
