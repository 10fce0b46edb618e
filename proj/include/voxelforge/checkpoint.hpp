#pragma once

// Binary checkpoint container.
//
// Layout (little-endian):
//   "VXFCKPT1"  u32 version  u32 metadata_bytes  metadata (UTF-8 key=value lines)
//   u32 record_count, then per record:
//   u32 name_bytes  name  u32 rank  u64 extents[rank]  f32 values[prod(extents)]
//
// Model parameters are stored under their registry names, Adam moments as
// "adam.m.<name>" and "adam.v.<name>".

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "voxelforge/kv_text.hpp"
#include "voxelforge/optimizer.hpp"
#include "voxelforge/segresnet.hpp"

namespace vxf {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct TensorRecord {
  std::string name;
  Shape shape;
  std::vector<float> values;

  friend bool operator==(const TensorRecord&, const TensorRecord&) = default;
};

struct Checkpoint {
  KeyValueText metadata;
  std::vector<TensorRecord> records;

  const TensorRecord* find(std::string_view name) const noexcept;
};

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& checkpoint);
/// Throws DataError on bad magic, version mismatch, truncation or trailing bytes.
Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes);

void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

void write_model_config(KeyValueText& kv, const SegResNetConfig& config, const std::string& prefix = "model.");
SegResNetConfig read_model_config(const KeyValueText& kv, const std::string& prefix = "model.");

/// Snapshot of parameters (and optimizer state when given) plus the model
/// configuration and channel order; `metadata` entries are carried along.
template <class Real>
Checkpoint capture_checkpoint(const SegResNet<Real>& model, const AdamState<Real>* adam,
                              KeyValueText metadata = {});

/// Validates every record against `model` (and `adam` when given) before
/// writing anything; throws ShapeError naming the first mismatching
/// parameter and leaves the model untouched on any error.
template <class Real>
void restore_checkpoint(const Checkpoint& checkpoint, SegResNet<Real>& model, AdamState<Real>* adam);

}  // namespace vxf
