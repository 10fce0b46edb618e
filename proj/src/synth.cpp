#include "voxelforge/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "voxelforge/errors.hpp"
#include "voxelforge/nifti.hpp"
#include "voxelforge/rng.hpp"

namespace vxf {
namespace {

constexpr std::uint64_t kCaseTag = 0x73796e7468ull;

// Rows: background tissue, edema, necrosis, enhancing. Columns follow
// kModalityNames.
constexpr double kMeans[4][4] = {
    {100.0, 120.0, 120.0, 110.0},
    {250.0, 90.0, 100.0, 260.0},
    {180.0, 60.0, 70.0, 240.0},
    {200.0, 110.0, 300.0, 200.0},
};

struct Ellipsoid {
  std::array<double, 3> centre{};
  std::array<double, 3> radii{};

  double radial2(std::int64_t i, std::int64_t j, std::int64_t k) const noexcept {
    const double p[3] = {static_cast<double>(i), static_cast<double>(j), static_cast<double>(k)};
    double s = 0.0;
    for (int a = 0; a < 3; ++a) {
      const double t = (p[a] - centre[a]) / radii[a];
      s += t * t;
    }
    return s;
  }
};

// 0 outside the brain, 1 tissue, 2 edema, 3 necrosis, 4 enhancing.
std::vector<std::uint8_t> draw_classes(const SyntheticSpec& spec, Rng& rng) {
  const auto& n = spec.dims;
  for (int attempt = 0; attempt < 100; ++attempt) {
    Ellipsoid brain, wt, tc, et;
    const double tc_ratio = rng.uniform(spec.core_min, spec.core_max);
    const double et_ratio = rng.uniform(spec.enhancing_min, spec.enhancing_max);
    for (int a = 0; a < 3; ++a) {
      const double extent = static_cast<double>(n[a]);
      brain.centre[a] = (extent - 1.0) / 2.0;
      brain.radii[a] = extent * rng.uniform(spec.brain_min, spec.brain_max);
      wt.radii[a] = extent * rng.uniform(spec.tumor_min, spec.tumor_max);
      tc.radii[a] = wt.radii[a] * tc_ratio;
      et.radii[a] = tc.radii[a] * et_ratio;
      const double room = std::max(0.0, brain.radii[a] - wt.radii[a]) * 0.6;
      wt.centre[a] = std::round(brain.centre[a] + rng.uniform(-room, room));
    }
    tc.centre = et.centre = wt.centre;

    std::vector<std::uint8_t> cls(static_cast<std::size_t>(voxel_count(n)));
    std::array<std::int64_t, 5> seen{};
    std::size_t v = 0;
    for (std::int64_t i = 0; i < n[0]; ++i)
      for (std::int64_t j = 0; j < n[1]; ++j)
        for (std::int64_t k = 0; k < n[2]; ++k, ++v) {
          std::uint8_t c = 0;
          if (et.radial2(i, j, k) <= 1.0) c = 4;
          else if (tc.radial2(i, j, k) <= 1.0) c = 3;
          else if (wt.radial2(i, j, k) <= 1.0) c = 2;
          else if (brain.radial2(i, j, k) <= 1.0) c = 1;
          cls[v] = c;
          ++seen[c];
        }
    if (seen[2] > 0 && seen[3] > 0 && seen[4] > 0) return cls;
  }
  throw UsageError("synthetic spec cannot produce all three tumour classes; enlarge dims or tumour size");
}

}  // namespace

void SyntheticSpec::validate() const {
  if (count < 1) throw UsageError("synthetic count must be >= 1");
  for (auto d : dims)
    if (d < 8 || d % 8 != 0) throw UsageError("synthetic dims must be positive multiples of 8");
  if (!(noise >= 0.0) || !std::isfinite(noise)) throw UsageError("synthetic noise must be >= 0");
  if (!(brain_min > 0.0 && brain_min <= brain_max && brain_max <= 0.5))
    throw UsageError("brain size range must satisfy 0 < min <= max <= 0.5");
  if (!(tumor_min > 0.0 && tumor_min <= tumor_max && tumor_max <= brain_min))
    throw UsageError("tumour size range must satisfy 0 < min <= max <= brain_min");
  if (!(core_min > 0.0 && core_min <= core_max && core_max < 1.0))
    throw UsageError("core ratio range must satisfy 0 < min <= max < 1");
  if (!(enhancing_min > 0.0 && enhancing_min <= enhancing_max && enhancing_max < 1.0))
    throw UsageError("enhancing ratio range must satisfy 0 < min <= max < 1");
}

SyntheticCase make_synthetic_case(const SyntheticSpec& spec, std::int64_t index) {
  spec.validate();
  if (index < 0 || index >= spec.count) throw UsageError("synthetic case index out of range");
  Rng rng(derive_seed(spec.seed, {kCaseTag, static_cast<std::uint64_t>(index)}));
  const auto cls = draw_classes(spec, rng);
  const auto& n = spec.dims;
  const std::size_t voxels = cls.size();

  std::array<std::vector<float>, 4> intensity;
  for (auto& m : intensity) m.assign(voxels, 0.0f);
  std::vector<std::uint8_t> labels(voxels, 0);
  constexpr std::uint8_t kLabelOf[5] = {0, 0, 2, 1, 4};
  for (std::size_t v = 0; v < voxels; ++v) {
    labels[v] = kLabelOf[cls[v]];
    if (cls[v] == 0) continue;
    for (int m = 0; m < 4; ++m) {
      const double x = kMeans[cls[v] - 1][m] + spec.noise * rng.normal();
      intensity[static_cast<std::size_t>(m)][v] = static_cast<float>(std::max(1.0, x));
    }
  }

  Mat4 affine = identity_affine();
  for (int a = 0; a < 3; ++a) affine[a][3] = -static_cast<double>(n[a] / 2);
  const bool lps = index % 3 == 2;
  if (lps) {
    // Stored index i' = n - 1 - i along the first two axes.
    auto flip = [&](auto& buf) {
      auto copy = buf;
      std::size_t v = 0;
      for (std::int64_t i = 0; i < n[0]; ++i)
        for (std::int64_t j = 0; j < n[1]; ++j)
          for (std::int64_t k = 0; k < n[2]; ++k, ++v)
            buf[v] = copy[static_cast<std::size_t>(((n[0] - 1 - i) * n[1] + (n[1] - 1 - j)) * n[2] + k)];
    };
    for (auto& m : intensity) flip(m);
    flip(labels);
    for (int a = 0; a < 2; ++a) {
      affine[a][a] = -1.0;
      affine[a][3] += static_cast<double>(n[a] - 1);
    }
  }

  char id[32];
  std::snprintf(id, sizeof(id), "case%03lld", static_cast<long long>(index));
  SyntheticCase out;
  out.id = id;
  for (int m = 0; m < 4; ++m)
    out.modalities[static_cast<std::size_t>(m)] = Volume(1, n, std::move(intensity[static_cast<std::size_t>(m)]), affine);
  out.seg = LabelVolume(n, std::move(labels), affine);
  return out;
}

void write_synthetic_dataset(const SyntheticSpec& spec, const std::filesystem::path& dir) {
  spec.validate();
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw DataError("cannot create " + dir.string() + ": " + ec.message());
  for (std::int64_t i = 0; i < spec.count; ++i) {
    const auto c = make_synthetic_case(spec, i);
    for (std::size_t m = 0; m < 4; ++m)
      write_nifti(nifti_from_volume(c.modalities[m]), dir / (c.id + "_" + kModalityNames[m] + ".nii.gz"));
    write_nifti(nifti_from_labels(c.seg), dir / (c.id + "_seg.nii.gz"));
  }
}

}  // namespace vxf
