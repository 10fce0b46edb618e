#pragma once

// Training loop, validation, evaluation and the per-epoch metrics log.

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "voxelforge/checkpoint.hpp"
#include "voxelforge/dataset.hpp"
#include "voxelforge/loss_scaler.hpp"
#include "voxelforge/losses.hpp"
#include "voxelforge/optimizer.hpp"
#include "voxelforge/preprocess.hpp"
#include "voxelforge/segresnet.hpp"

namespace vxf {

struct TrainConfig {
  AdamConfig adam;
  std::int64_t batch_size = 1;
  std::int64_t epochs = 10;
  bool amp = true;
  std::uint64_t seed = 0;
  Dims3 roi{224, 224, 144};
  SplitRatios split;
  AugmentConfig augment;
  bool augment_enabled = true;
  DiceConfig dice;
  LossScalerConfig scaler;
  /// Abort once more than this many consecutive steps had a non-finite loss
  /// or gradient.
  std::int64_t max_nonfinite_steps = 50;
  /// Fill the `seconds` column with wall time; off keeps logs reproducible.
  bool record_wall_time = false;

  void validate() const;
};

struct MetricsRow {
  std::int64_t epoch = 0;
  double train_loss = 0.0;
  double val_mean_dice = 0.0;
  double dice_tc = 0.0;
  double dice_wt = 0.0;
  double dice_et = 0.0;
  double loss_scale = 0.0;
  double seconds = 0.0;
};

inline constexpr const char* kMetricsHeader =
    "epoch,train_loss,val_mean_dice,dice_tc,dice_wt,dice_et,loss_scale,seconds";

struct MetricsLog {
  std::vector<MetricsRow> rows;

  std::string to_csv() const;
  /// Throws DataError on a wrong header or malformed row.
  static MetricsLog from_csv(std::string_view text);
};

/// [B, C, D, H, W] tensor from B volumes on one grid, at single precision.
template <class Real>
Tensor<Real> batch_tensor(std::span<const Volume* const> volumes);

/// One optimisation step per call; owns the optimizer and loss scaler.
template <class Real>
class Trainer {
 public:
  Trainer(SegResNet<Real>& model, const TrainConfig& config);

  struct StepResult {
    double loss = 0.0;     // forward loss, NaN/inf when non-finite
    bool applied = false;  // false when the step was skipped
  };

  /// Forward in training mode, dice loss, (scaled) backward and, unless the
  /// gradients overflowed, an Adam update. Applies the cast policy when amp.
  StepResult step(const Tensor<Real>& x, const Tensor<Real>& target);

  const LossScaler& scaler() const noexcept { return scaler_; }
  LossScaler& scaler() noexcept { return scaler_; }
  const AdamState<Real>& adam() const noexcept { return adam_; }
  AdamState<Real>& adam() noexcept { return adam_; }
  std::int64_t steps() const noexcept { return steps_; }

 private:
  SegResNet<Real>& model_;
  TrainConfig config_;
  AdamState<Real> adam_;
  LossScaler scaler_;
  std::int64_t steps_ = 0;
};

struct TrainResult {
  MetricsLog log;
  std::optional<Checkpoint> best;
  double best_val_mean_dice = 0.0;
  std::int64_t best_epoch = 0;
};

/// Full loop: per epoch a seeded shuffle of the training samples, per-sample
/// seeded augmentation, one step per batch, then validation without
/// augmentation. A checkpoint (model, optimizer, `metadata`) is captured
/// whenever the validation mean dice strictly improves.
template <class Real>
TrainResult train(SegResNet<Real>& model, std::span<const Sample> train_samples,
                  std::span<const Sample> val_samples, const TrainConfig& config,
                  const KeyValueText& metadata = {},
                  const std::function<void(const MetricsRow&)>& on_epoch = {});

/// Binary (TC, WT, ET) mask: sigmoid(logits) >= 0.5. Uses the half cast
/// policy for the forward pass when amp.
template <class Real>
Volume predict_mask(const SegResNet<Real>& model, const Volume& image, bool amp);

struct EvalRow {
  std::string id;
  DiceScores scores;
};

struct EvalReport {
  std::vector<EvalRow> rows;
  DiceScores aggregate;

  /// Header case,mean_dice,dice_tc,dice_wt,dice_et; last row "aggregate".
  std::string to_csv() const;
};

/// Aggregate is the arithmetic mean of the per-sample rows.
EvalReport make_report(std::vector<EvalRow> rows);

template <class Real>
EvalReport evaluate(const SegResNet<Real>& model, std::span<const Sample> samples, bool amp);

}  // namespace vxf
