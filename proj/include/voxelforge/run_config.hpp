#pragma once

// Flat key=value run configuration for the command-line tool.
//
// Keys and defaults:
//   data_dir=data               out_dir=run
//   seed=0                      epochs=10          batch_size=1
//   learning_rate=0.0001        weight_decay=1e-05
//   beta1=0.9  beta2=0.999      adam_eps=1e-08
//   amp=true                    roi=224,224,144    split=0.6,0.2,0.2
//   augment=true                flip_prob_per_axis=0.5
//   scale_range=0.1             shift_range=0.1
//   dice_smooth_denominator=1e-05   dice_smooth_numerator=0
//   loss_scale_initial=65536    loss_scale_growth_factor=2
//   loss_scale_backoff_factor=0.5   loss_scale_growth_interval=200
//   max_nonfinite_steps=50      record_wall_time=false
//   init_filters=16             dropout_prob=0.2
//   down_blocks=1,2,2,4         up_blocks=1,1,1
//   norm_groups=min(8, init_filters)   norm_eps=1e-05

#include <filesystem>
#include <string>
#include <string_view>

#include "voxelforge/kv_text.hpp"
#include "voxelforge/segresnet.hpp"
#include "voxelforge/trainer.hpp"

namespace vxf {

struct RunConfig {
  std::filesystem::path data_dir = "data";
  std::filesystem::path out_dir = "run";
  TrainConfig train;
  SegResNetConfig model;

  void validate() const;

  /// Unknown keys and malformed values are UsageErrors.
  static RunConfig parse(std::string_view text);
  static RunConfig load(const std::filesystem::path& path);

  /// Every key, in the order listed above.
  KeyValueText to_kv() const;
  std::string serialize() const { return to_kv().serialize(); }
};

}  // namespace vxf
