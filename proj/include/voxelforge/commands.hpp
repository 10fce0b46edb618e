#pragma once

// Bodies of the command-line subcommands, callable in-process.

#include <array>
#include <filesystem>
#include <iosfwd>
#include <string>

#include "voxelforge/checkpoint.hpp"
#include "voxelforge/dataset.hpp"
#include "voxelforge/run_config.hpp"
#include "voxelforge/synth.hpp"
#include "voxelforge/trainer.hpp"

namespace vxf {

void cmd_synth(const SyntheticSpec& spec, const std::filesystem::path& out_dir);

/// Fits on the training split selected by `config` (seed and ratios) over
/// the cases in config.data_dir; writes <out_dir>/<modality>.norm.
ModalityNormalizers cmd_fit_normalizers(const RunConfig& config, const std::filesystem::path& out_dir);

struct TrainOutputs {
  TrainResult result;
  /// Best checkpoint evaluated on the held-out test split.
  EvalReport test;
};

/// Writes into config.out_dir: config.txt, norm/, metrics.csv, best.ckpt and
/// test_eval.csv. One line per epoch goes to `progress` when non-null.
TrainOutputs cmd_train(const RunConfig& config, std::ostream* progress = nullptr);

/// `subset` is "all" or one of "train", "val", "test" as recorded in the
/// checkpoint.
EvalReport cmd_eval(const std::filesystem::path& checkpoint, const std::filesystem::path& data_dir,
                    const std::string& subset = "all");

/// Label map on the grid and affine of the FLAIR input.
void cmd_segment(const std::filesystem::path& checkpoint,
                 const std::array<std::filesystem::path, 4>& inputs, const std::filesystem::path& out);

void cmd_plot(const std::filesystem::path& metrics_csv, const std::filesystem::path& out_svg);

/// Pieces of a checkpoint written by cmd_train.
RunConfig run_config_from(const Checkpoint& checkpoint);
ModalityNormalizers normalizers_from(const Checkpoint& checkpoint);

}  // namespace vxf
