#include "voxelforge/run_config.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include "voxelforge/errors.hpp"

namespace vxf {
namespace {

constexpr std::string_view kKeys[] = {
    "data_dir", "out_dir", "seed", "epochs", "batch_size", "learning_rate", "weight_decay", "beta1",
    "beta2", "adam_eps", "amp", "roi", "split", "augment", "flip_prob_per_axis", "scale_range",
    "shift_range", "dice_smooth_denominator", "dice_smooth_numerator", "loss_scale_initial",
    "loss_scale_growth_factor", "loss_scale_backoff_factor", "loss_scale_growth_interval",
    "max_nonfinite_steps", "record_wall_time", "init_filters", "dropout_prob", "down_blocks",
    "up_blocks", "norm_groups", "norm_eps"};

std::string join_ints(std::span<const std::int64_t> v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s;
}

std::vector<std::int64_t> parse_ints(std::string_view text) {
  std::vector<std::int64_t> out;
  for (const auto& f : split(text, ',')) out.push_back(parse_int(f));
  return out;
}

std::uint64_t parse_seed(std::string_view text) {
  const auto v = parse_int(text);
  if (v < 0) throw UsageError("seed must be non-negative");
  return static_cast<std::uint64_t>(v);
}

}  // namespace

void RunConfig::validate() const {
  if (data_dir.empty()) throw UsageError("data_dir is empty");
  if (out_dir.empty()) throw UsageError("out_dir is empty");
  train.validate();
  model.validate();
  if (model.in_channels != 4 || model.out_channels != 3)
    throw UsageError("the pipeline needs 4 input and 3 output channels");
  for (auto r : train.roi)
    if (r % model.spatial_multiple() != 0)
      throw UsageError("roi extents must be divisible by " + std::to_string(model.spatial_multiple()));
}

RunConfig RunConfig::parse(std::string_view text) {
  RunConfig c;
  try {
    const auto kv = KeyValueText::parse(text);
    for (const auto& [k, v] : kv.entries())
      if (std::find(std::begin(kKeys), std::end(kKeys), k) == std::end(kKeys))
        throw UsageError("unknown config key '" + k + "'");
    auto real = [&](std::string_view k, double& dst) {
      if (auto v = kv.find(k)) dst = parse_real(*v);
    };
    auto integer = [&](std::string_view k, std::int64_t& dst) {
      if (auto v = kv.find(k)) dst = parse_int(*v);
    };
    auto flag = [&](std::string_view k, bool& dst) {
      if (auto v = kv.find(k)) dst = parse_bool(*v);
    };
    if (auto v = kv.find("data_dir")) c.data_dir = *v;
    if (auto v = kv.find("out_dir")) c.out_dir = *v;
    if (auto v = kv.find("seed")) c.train.seed = parse_seed(*v);
    integer("epochs", c.train.epochs);
    integer("batch_size", c.train.batch_size);
    real("learning_rate", c.train.adam.learning_rate);
    real("weight_decay", c.train.adam.weight_decay);
    real("beta1", c.train.adam.beta1);
    real("beta2", c.train.adam.beta2);
    real("adam_eps", c.train.adam.eps);
    flag("amp", c.train.amp);
    if (auto v = kv.find("roi")) {
      const auto r = parse_ints(*v);
      if (r.size() != 3) throw UsageError("roi needs three extents");
      c.train.roi = {r[0], r[1], r[2]};
    }
    if (auto v = kv.find("split")) {
      const auto f = split(*v, ',');
      if (f.size() != 3) throw UsageError("split needs three ratios");
      c.train.split = {parse_real(f[0]), parse_real(f[1]), parse_real(f[2])};
    }
    flag("augment", c.train.augment_enabled);
    real("flip_prob_per_axis", c.train.augment.flip_prob_per_axis);
    real("scale_range", c.train.augment.scale_range);
    real("shift_range", c.train.augment.shift_range);
    real("dice_smooth_denominator", c.train.dice.smooth_denominator);
    real("dice_smooth_numerator", c.train.dice.smooth_numerator);
    real("loss_scale_initial", c.train.scaler.initial_scale);
    real("loss_scale_growth_factor", c.train.scaler.growth_factor);
    real("loss_scale_backoff_factor", c.train.scaler.backoff_factor);
    integer("loss_scale_growth_interval", c.train.scaler.growth_interval);
    integer("max_nonfinite_steps", c.train.max_nonfinite_steps);
    flag("record_wall_time", c.train.record_wall_time);
    integer("init_filters", c.model.init_filters);
    real("dropout_prob", c.model.dropout_prob);
    if (auto v = kv.find("down_blocks")) c.model.down_blocks = parse_ints(*v);
    if (auto v = kv.find("up_blocks")) c.model.up_blocks = parse_ints(*v);
    c.model.norm_groups = default_norm_groups(c.model.init_filters);
    integer("norm_groups", c.model.norm_groups);
    real("norm_eps", c.model.norm_eps);
  } catch (const UsageError&) {
    throw;
  } catch (const Error& e) {
    throw UsageError(std::string("config: ") + e.what());
  }
  c.train.augment.seed = c.train.seed;
  c.validate();
  return c;
}

RunConfig RunConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw UsageError("cannot read config " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse(ss.str());
}

KeyValueText RunConfig::to_kv() const {
  KeyValueText kv;
  auto real = [&](std::string k, double v) { kv.set(std::move(k), format_real(v)); };
  auto integer = [&](std::string k, std::int64_t v) { kv.set(std::move(k), std::to_string(v)); };
  auto flag = [&](std::string k, bool v) { kv.set(std::move(k), v ? "true" : "false"); };
  kv.set("data_dir", data_dir.string());
  kv.set("out_dir", out_dir.string());
  kv.set("seed", std::to_string(train.seed));
  integer("epochs", train.epochs);
  integer("batch_size", train.batch_size);
  real("learning_rate", train.adam.learning_rate);
  real("weight_decay", train.adam.weight_decay);
  real("beta1", train.adam.beta1);
  real("beta2", train.adam.beta2);
  real("adam_eps", train.adam.eps);
  flag("amp", train.amp);
  kv.set("roi", join_ints(train.roi));
  kv.set("split", format_real(train.split.train) + "," + format_real(train.split.val) + "," +
                      format_real(train.split.test));
  flag("augment", train.augment_enabled);
  real("flip_prob_per_axis", train.augment.flip_prob_per_axis);
  real("scale_range", train.augment.scale_range);
  real("shift_range", train.augment.shift_range);
  real("dice_smooth_denominator", train.dice.smooth_denominator);
  real("dice_smooth_numerator", train.dice.smooth_numerator);
  real("loss_scale_initial", train.scaler.initial_scale);
  real("loss_scale_growth_factor", train.scaler.growth_factor);
  real("loss_scale_backoff_factor", train.scaler.backoff_factor);
  integer("loss_scale_growth_interval", train.scaler.growth_interval);
  integer("max_nonfinite_steps", train.max_nonfinite_steps);
  flag("record_wall_time", train.record_wall_time);
  integer("init_filters", model.init_filters);
  real("dropout_prob", model.dropout_prob);
  kv.set("down_blocks", join_ints(model.down_blocks));
  kv.set("up_blocks", join_ints(model.up_blocks));
  integer("norm_groups", model.norm_groups);
  real("norm_eps", model.norm_eps);
  return kv;
}

}  // namespace vxf
