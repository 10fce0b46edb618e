#include "voxelforge/trainer.hpp"

#include <chrono>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

#include "voxelforge/errors.hpp"
#include "voxelforge/kv_text.hpp"
#include "voxelforge/rng.hpp"

namespace vxf {
namespace {

constexpr std::uint64_t kEpochOrderTag = 0x65706f6368ull;

double logistic(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

std::string csv_real(double v) { return format_real(v); }

}  // namespace

void TrainConfig::validate() const {
  adam.validate();
  if (batch_size < 1) throw UsageError("batch_size must be >= 1");
  if (epochs < 1) throw UsageError("epochs must be >= 1");
  for (auto r : roi)
    if (r < 1) throw UsageError("roi extents must be >= 1");
  split.validate();
  augment.validate();
  dice.validate();
  scaler.validate();
  if (max_nonfinite_steps < 1) throw UsageError("max_nonfinite_steps must be >= 1");
}

std::string MetricsLog::to_csv() const {
  std::string out = std::string(kMetricsHeader) + "\n";
  for (const auto& r : rows) {
    out += std::to_string(r.epoch) + "," + csv_real(r.train_loss) + "," + csv_real(r.val_mean_dice) + "," +
           csv_real(r.dice_tc) + "," + csv_real(r.dice_wt) + "," + csv_real(r.dice_et) + "," +
           csv_real(r.loss_scale) + "," + csv_real(r.seconds) + "\n";
  }
  return out;
}

MetricsLog MetricsLog::from_csv(std::string_view text) {
  std::istringstream in{std::string(text)};
  std::string line;
  if (!std::getline(in, line) || line != kMetricsHeader) throw DataError("metrics CSV has an unexpected header");
  MetricsLog log;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto f = split(line, ',');
    if (f.size() != 8) throw DataError("metrics CSV row has " + std::to_string(f.size()) + " fields: " + line);
    MetricsRow r;
    r.epoch = parse_int(f[0]);
    r.train_loss = parse_real(f[1]);
    r.val_mean_dice = parse_real(f[2]);
    r.dice_tc = parse_real(f[3]);
    r.dice_wt = parse_real(f[4]);
    r.dice_et = parse_real(f[5]);
    r.loss_scale = parse_real(f[6]);
    r.seconds = parse_real(f[7]);
    log.rows.push_back(r);
  }
  return log;
}

template <class Real>
Tensor<Real> batch_tensor(std::span<const Volume* const> volumes) {
  if (volumes.empty()) throw UsageError("empty batch");
  const Volume& first = *volumes.front();
  std::vector<Real> data;
  data.reserve(volumes.size() * first.data().size());
  for (const Volume* v : volumes) {
    if (v->channels() != first.channels() || v->dims() != first.dims())
      throw ShapeError("batch volumes must share channels and grid");
    data.insert(data.end(), v->data().begin(), v->data().end());
  }
  return Tensor<Real>::from_data({static_cast<std::int64_t>(volumes.size()), first.channels(), first.dims()[0],
                                  first.dims()[1], first.dims()[2]},
                                 std::move(data));
}

template <class Real>
Trainer<Real>::Trainer(SegResNet<Real>& model, const TrainConfig& config)
    : model_(model),
      config_(config),
      adam_(AdamState<Real>::zeros_like(std::as_const(model).parameters())),
      scaler_(config.scaler) {
  config_.validate();
  if (std::is_same_v<Real, double> && config_.amp)
    throw UsageError("mixed precision applies to 32-bit training only");
}

template <class Real>
typename Trainer<Real>::StepResult Trainer<Real>::step(const Tensor<Real>& x, const Tensor<Real>& target) {
  std::optional<AutocastScope> scope;
  if (config_.amp) scope.emplace(CastPolicy::mixed());
  model_.zero_grad();
  const DropoutKey key{config_.seed, 0, static_cast<std::uint64_t>(steps_)};
  ++steps_;
  StepResult r;
  Tape<Real> tape;
  const Tensor<Real> loss = dice_loss(model_.forward(x, true, key), target, config_.dice);
  r.loss = static_cast<double>(loss.item());
  auto params = model_.parameters();
  if (config_.amp) {
    if (!scaled_backward(loss, scaler_)) return r;
    if (unscale_check_step(params, scaler_) == StepDecision::kSkip) return r;
  } else {
    if (!std::isfinite(r.loss)) return r;
    backward(loss);
    for (const auto& p : params)
      for (Real g : p.grad())
        if (!std::isfinite(g)) return r;
  }
  adam_step(params, adam_, config_.adam);
  r.applied = true;
  return r;
}

template <class Real>
TrainResult train(SegResNet<Real>& model, std::span<const Sample> train_samples,
                  std::span<const Sample> val_samples, const TrainConfig& config, const KeyValueText& metadata,
                  const std::function<void(const MetricsRow&)>& on_epoch) {
  config.validate();
  if (train_samples.empty()) throw DataError("empty training split");
  if (val_samples.empty()) throw DataError("empty validation split");
  Trainer<Real> trainer(model, config);
  TrainResult result;
  double best = -std::numeric_limits<double>::infinity();
  std::int64_t consecutive_skips = 0;
  const std::size_t n = train_samples.size();
  const auto batch = static_cast<std::size_t>(config.batch_size);

  for (std::int64_t epoch = 1; epoch <= config.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng shuffle(derive_seed(config.seed, {kEpochOrderTag, static_cast<std::uint64_t>(epoch)}));
    for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[shuffle.below(i)]);

    double loss_sum = 0.0;
    std::int64_t loss_count = 0;
    for (std::size_t b = 0; b < n; b += batch) {
      std::vector<Volume> images, targets;
      for (std::size_t k = b; k < std::min(n, b + batch); ++k) {
        const std::size_t idx = order[k];
        const Sample& s = train_samples[idx];
        if (config.augment_enabled) {
          Rng rng(derive_seed(config.seed, {static_cast<std::uint64_t>(idx), static_cast<std::uint64_t>(epoch)}));
          auto [image, target] = random_flip(s.image, s.target, config.augment, rng);
          images.push_back(random_intensity_scale_shift(image, config.augment, rng));
          targets.push_back(std::move(target));
        } else {
          images.push_back(s.image);
          targets.push_back(s.target);
        }
      }
      std::vector<const Volume*> ip, tp;
      for (std::size_t k = 0; k < images.size(); ++k) {
        ip.push_back(&images[k]);
        tp.push_back(&targets[k]);
      }
      const auto r = trainer.step(batch_tensor<Real>(ip), batch_tensor<Real>(tp));
      if (std::isfinite(r.loss)) {
        loss_sum += r.loss;
        ++loss_count;
      }
      if (r.applied) {
        consecutive_skips = 0;
      } else if (++consecutive_skips > config.max_nonfinite_steps) {
        throw NumericError("training diverged: " + std::to_string(consecutive_skips) +
                           " consecutive steps with non-finite loss or gradients");
      }
    }

    const EvalReport report = evaluate(model, val_samples, config.amp);
    MetricsRow row;
    row.epoch = epoch;
    row.train_loss = loss_count ? loss_sum / static_cast<double>(loss_count)
                                : std::numeric_limits<double>::quiet_NaN();
    row.val_mean_dice = report.aggregate.mean;
    row.dice_tc = report.aggregate.tc;
    row.dice_wt = report.aggregate.wt;
    row.dice_et = report.aggregate.et;
    row.loss_scale = config.amp ? trainer.scaler().scale() : 1.0;
    if (config.record_wall_time)
      row.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    result.log.rows.push_back(row);
    if (on_epoch) on_epoch(row);

    if (row.val_mean_dice > best) {
      best = row.val_mean_dice;
      KeyValueText meta = metadata;
      meta.set("epoch", std::to_string(epoch));
      meta.set("best_val_mean_dice", format_real(best));
      meta.set("loss_scale", format_real(trainer.scaler().scale()));
      meta.set("loss_scale_good_steps", std::to_string(trainer.scaler().good_steps()));
      result.best = capture_checkpoint(model, &trainer.adam(), std::move(meta));
      result.best_val_mean_dice = best;
      result.best_epoch = epoch;
    }
  }
  return result;
}

template <class Real>
Volume predict_mask(const SegResNet<Real>& model, const Volume& image, bool amp) {
  std::optional<AutocastScope> scope;
  if (amp && std::is_same_v<Real, float>) scope.emplace(CastPolicy::mixed());
  const Volume* p = &image;
  const Tensor<Real> logits = model.forward(batch_tensor<Real>(std::span<const Volume* const>(&p, 1)), false);
  if (logits.dim(1) != 3) throw ShapeError("expected a 3-channel (TC, WT, ET) model output");
  std::vector<float> mask(logits.data().size());
  for (std::size_t i = 0; i < mask.size(); ++i)
    mask[i] = logistic(static_cast<double>(logits.data()[i])) >= 0.5 ? 1.0f : 0.0f;
  return Volume(3, image.dims(), std::move(mask), image.affine());
}

EvalReport make_report(std::vector<EvalRow> rows) {
  EvalReport r;
  r.rows = std::move(rows);
  if (r.rows.empty()) throw DataError("no samples to evaluate");
  for (const auto& row : r.rows) {
    r.aggregate.tc += row.scores.tc;
    r.aggregate.wt += row.scores.wt;
    r.aggregate.et += row.scores.et;
    r.aggregate.mean += row.scores.mean;
  }
  const double n = static_cast<double>(r.rows.size());
  r.aggregate.tc /= n;
  r.aggregate.wt /= n;
  r.aggregate.et /= n;
  r.aggregate.mean /= n;
  return r;
}

std::string EvalReport::to_csv() const {
  std::string out = "case,mean_dice,dice_tc,dice_wt,dice_et\n";
  auto line = [](const std::string& id, const DiceScores& s) {
    return id + "," + format_real(s.mean) + "," + format_real(s.tc) + "," + format_real(s.wt) + "," +
           format_real(s.et) + "\n";
  };
  for (const auto& r : rows) out += line(r.id, r.scores);
  out += line("aggregate", aggregate);
  return out;
}

template <class Real>
EvalReport evaluate(const SegResNet<Real>& model, std::span<const Sample> samples, bool amp) {
  std::vector<EvalRow> rows;
  for (const Sample& s : samples) rows.push_back(EvalRow{s.id, dice_metric(predict_mask(model, s.image, amp), s.target)});
  return make_report(std::move(rows));
}

template Tensor<float> batch_tensor(std::span<const Volume* const>);
template Tensor<double> batch_tensor(std::span<const Volume* const>);
template class Trainer<float>;
template class Trainer<double>;
template TrainResult train(SegResNet<float>&, std::span<const Sample>, std::span<const Sample>, const TrainConfig&,
                           const KeyValueText&, const std::function<void(const MetricsRow&)>&);
template TrainResult train(SegResNet<double>&, std::span<const Sample>, std::span<const Sample>, const TrainConfig&,
                           const KeyValueText&, const std::function<void(const MetricsRow&)>&);
template Volume predict_mask(const SegResNet<float>&, const Volume&, bool);
template Volume predict_mask(const SegResNet<double>&, const Volume&, bool);
template EvalReport evaluate(const SegResNet<float>&, std::span<const Sample>, bool);
template EvalReport evaluate(const SegResNet<double>&, std::span<const Sample>, bool);

}  // namespace vxf
