// Acceptance suite: one PASS/FAIL line per criterion (2-12).
//
//   voxelforge_acceptance            run every criterion
//   voxelforge_acceptance 3 5 9      run a selection
//
// Exit status is 0 only when every selected criterion passes.

#include <algorithm>
#include <bit>
#include <chrono>
#include <cmath>
#include <cstring>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <numeric>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>

#include "../oracles/conv_oracle.hpp"
#include "../oracles/dice_oracle.hpp"
#include "../oracles/grad_check.hpp"
#include "../oracles/half_oracle.hpp"
#include "../oracles/orientation_oracle.hpp"
#include "../oracles/random_nifti.hpp"
#include "voxelforge/commands.hpp"
#include "voxelforge/dataset.hpp"
#include "voxelforge/half.hpp"
#include "voxelforge/loss_scaler.hpp"
#include "voxelforge/losses.hpp"
#include "voxelforge/nifti.hpp"
#include "voxelforge/ops.hpp"
#include "voxelforge/optimizer.hpp"
#include "voxelforge/parallel.hpp"
#include "voxelforge/synth.hpp"
#include "voxelforge/trainer.hpp"

using namespace vxf;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

fs::path scratch(const std::string& name) {
  const auto p = fs::temp_directory_path() / ("vxf_acceptance_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

Tensor<double> rand_t(Shape s, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> z(0.0, scale);
  std::vector<double> v(static_cast<std::size_t>(shape_numel(s)));
  for (auto& x : v) x = z(rng);
  return Tensor<double>::from_data(std::move(s), std::move(v), Precision::kDouble);
}

Tensor<double> weighted_sum(const Tensor<double>& y, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return sum(mul(y, rand_t(y.shape(), rng)));
}

SegResNetConfig tiny_model() {
  SegResNetConfig c;
  c.init_filters = 8;
  c.norm_groups = default_norm_groups(8);
  return c;
}

// Normalised synthetic samples on a small grid.
std::vector<Sample> toy_samples(std::int64_t count, std::int64_t n, std::uint64_t seed) {
  SyntheticSpec spec;
  spec.count = count;
  spec.dims = {n, n, n};
  spec.seed = seed;
  std::vector<CaseVolumes> cases;
  for (std::int64_t i = 0; i < count; ++i) {
    auto c = make_synthetic_case(spec, i);
    for (auto& m : c.modalities) m = reorient_to_ras(m);
    cases.push_back({c.id, stack_modalities(c.modalities[0], c.modalities[1], c.modalities[2], c.modalities[3]),
                     reorient_to_ras(c.seg)});
  }
  const auto norms = fit_normalizers(cases);
  std::vector<Sample> out;
  for (const auto& c : cases) out.push_back(make_sample(c, norms));
  return out;
}

template <class Real>
std::pair<Tensor<Real>, Tensor<Real>> batch_of(const Sample& s) {
  const Volume* x[] = {&s.image};
  const Volume* y[] = {&s.target};
  return {batch_tensor<Real>(x), batch_tensor<Real>(y)};
}

// ---------------------------------------------------------------------------

Outcome dice_oracle_equivalence() {
  const auto t0 = std::chrono::steady_clock::now();
  std::mt19937_64 rng(2002);
  std::uniform_int_distribution<int> channels(1, 4), extent(1, 8);
  std::uniform_real_distribution<float> prob(0.0f, 1.0f);
  double worst = 0.0;
  for (int pair = 0; pair < 1000; ++pair) {
    const std::size_t n = static_cast<std::size_t>(channels(rng) * extent(rng) * extent(rng) * extent(rng));
    const double density = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
    std::vector<float> p(n), g(n);
    for (std::size_t i = 0; i < n; ++i) {
      p[i] = prob(rng);
      g[i] = prob(rng) < density ? 1.0f : 0.0f;
    }
    const DiceConfig cfg;
    worst = std::max(worst, std::fabs(dice_coefficient<float>(p, g, cfg) -
                                      oracle::dice(p, g, cfg.smooth_numerator, cfg.smooth_denominator)));
  }
  const double secs = seconds_since(t0);
  return {worst <= 1e-6 && secs < 5.0,
          fmt("1000 random pairs up to 4x8^3: max |error| %.3g (limit 1e-6), %.2f s (limit 5 s)", worst, secs)};
}

Outcome gradient_suite() {
  const auto t0 = std::chrono::steady_clock::now();
  std::mt19937_64 rng(3003);
  std::map<std::string, double> errs;
  using oracle::check_gradients;

  for (int stride = 1; stride <= 2; ++stride) {
    std::vector<Tensor<double>> in{rand_t({2, 3, 5, 4, 6}, rng), rand_t({4, 3, 3, 3, 3}, rng), rand_t({4}, rng)};
    errs["conv3d s" + std::to_string(stride)] = check_gradients(in, [stride](const auto& v) {
      return weighted_sum(conv3d(v[0], v[1], v[2], stride, 1), 1);
    }).max_rel_error;
  }
  {
    std::vector<Tensor<double>> in{rand_t({2, 4, 3, 3, 2}, rng, 2.0), rand_t({4}, rng), rand_t({4}, rng)};
    errs["group_norm"] = check_gradients(in, [](const auto& v) {
      return weighted_sum(group_norm(v[0], 2, v[1], v[2]), 2);
    }).max_rel_error;
  }
  {
    std::vector<Tensor<double>> in{rand_t({200}, rng)};
    for (auto& x : in[0].mutable_data())
      if (std::fabs(x) < 1e-3) x = 0.1;  // away from the kink
    errs["relu"] = check_gradients(in, [](const auto& v) { return weighted_sum(relu(v[0]), 3); }).max_rel_error;
  }
  {
    std::vector<Tensor<double>> in{rand_t({200}, rng, 3.0)};
    errs["sigmoid"] = check_gradients(in, [](const auto& v) { return weighted_sum(sigmoid(v[0]), 4); }).max_rel_error;
  }
  {
    std::vector<Tensor<double>> in{rand_t({2, 2, 3, 2, 4}, rng)};
    errs["trilinear_upsample2x"] =
        check_gradients(in, [](const auto& v) { return weighted_sum(trilinear_upsample2x(v[0]), 5); }).max_rel_error;
  }
  {
    std::vector<Tensor<double>> in{rand_t({2, 3, 3, 3, 3}, rng)};
    std::vector<double> t(static_cast<std::size_t>(in[0].numel()));
    for (auto& x : t) x = rng() % 3 == 0 ? 1.0 : 0.0;
    const auto target = Tensor<double>::from_data(in[0].shape(), t, Precision::kDouble);
    errs["dice_loss"] = check_gradients(in, [&](const auto& v) { return dice_loss(v[0], target); }).max_rel_error;
  }
  double ops_worst = 0.0;
  for (const auto& [k, v] : errs) ops_worst = std::max(ops_worst, v);

  // Full tiny network (init_filters 8, 4 levels) on an 8^3 input, dropout
  // active with a fixed key. Every parameter tensor and the input are
  // sampled.
  auto model = SegResNet<double>::build(tiny_model(), 31);
  std::vector<Tensor<double>> inputs{rand_t({1, 4, 8, 8, 8}, rng)};
  for (auto& p : model.parameters()) inputs.push_back(p);
  std::vector<double> t(3 * 512);
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = (i % 8 < 4) == ((i / 64) % 8 < 4) ? 1.0 : 0.0;
  const auto target = Tensor<double>::from_data({1, 3, 8, 8, 8}, t, Precision::kDouble);
  const auto net = check_gradients(
      inputs, [&](const auto& v) { return dice_loss(model.forward(v[0], true, {77, 0, 1}), target); }, 1e-5, 4, 99);
  const double secs = seconds_since(t0);

  std::string worst_op;
  for (const auto& [k, v] : errs)
    if (v == ops_worst) worst_op = k;
  const bool pass = ops_worst <= 1e-4 && net.max_rel_error <= 1e-3 && secs < 120.0;
  std::string where = net.worst_input <= 0 ? "input" : model.parameter_names()[static_cast<std::size_t>(net.worst_input - 1)];
  return {pass, fmt("ops max rel error %.3g (%s; limit 1e-4); tiny network %.3g over %lld sampled entries "
                    "(worst %s; limit 1e-3); %.1f s (limit 120 s)",
                    ops_worst, worst_op.c_str(), net.max_rel_error, static_cast<long long>(net.checked),
                    where.c_str(), secs)};
}

Outcome convolution_oracle() {
  const auto t0 = std::chrono::steady_clock::now();
  std::mt19937_64 rng(4004);
  auto pick = [&](int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); };
  double worst_f = 0.0, worst_d = 0.0;
  for (int cfg = 0; cfg < 50; ++cfg) {
    oracle::ConvCase c;
    c.n = pick(1, 2);
    c.cin = pick(1, 4);
    c.cout = pick(1, 4);
    c.k = pick(0, 1) ? 3 : 1;
    c.stride = pick(1, 2);
    c.pad = c.k == 3 ? pick(0, 1) : 0;
    c.d = pick(c.k, 9);
    c.h = pick(c.k, 9);
    c.w = pick(c.k, 9);
    // Activations ~U[-1, 1]; weights at the fan-in scale used by the network.
    const double wscale = std::sqrt(2.0 / (c.cin * c.k * c.k * c.k));
    std::uniform_real_distribution<float> ux(-1.0f, 1.0f);
    std::normal_distribution<float> uw(0.0f, static_cast<float>(wscale));
    std::vector<float> xs(static_cast<std::size_t>(c.n * c.cin * c.d * c.h * c.w)),
        ws(static_cast<std::size_t>(c.cout * c.cin * c.k * c.k * c.k)), bs(static_cast<std::size_t>(c.cout));
    for (auto& v : xs) v = ux(rng);
    for (auto& v : ws) v = uw(rng);
    for (auto& v : bs) v = 0.1f * ux(rng);
    const auto ref = oracle::naive_conv3d(c, xs, ws, bs);
    const auto yf = conv3d(Tensor<float>::from_data({c.n, c.cin, c.d, c.h, c.w}, xs),
                           Tensor<float>::from_data({c.cout, c.cin, c.k, c.k, c.k}, ws),
                           Tensor<float>::from_data({c.cout}, bs), c.stride, c.pad);
    std::vector<double> xd(xs.begin(), xs.end()), wd(ws.begin(), ws.end()), bd(bs.begin(), bs.end());
    const auto yd = conv3d(Tensor<double>::from_data({c.n, c.cin, c.d, c.h, c.w}, xd, Precision::kDouble),
                           Tensor<double>::from_data({c.cout, c.cin, c.k, c.k, c.k}, wd, Precision::kDouble),
                           Tensor<double>::from_data({c.cout}, bd, Precision::kDouble), c.stride, c.pad);
    if (yf.numel() != static_cast<std::int64_t>(ref.size()) || yd.numel() != yf.numel())
      return {false, fmt("configuration %d: output size mismatch", cfg)};
    for (std::size_t i = 0; i < ref.size(); ++i) {
      worst_f = std::max(worst_f, std::fabs(yf.data()[i] - ref[i]));
      worst_d = std::max(worst_d, std::fabs(yd.data()[i] - ref[i]));
    }
  }
  const double secs = seconds_since(t0);
  return {worst_f <= 1e-6 && worst_d <= 1e-6 && secs < 30.0,
          fmt("50 random configurations: max |error| 32-bit %.3g, 64-bit %.3g (limit 1e-6), %.2f s (limit 30 s)",
              worst_f, worst_d, secs)};
}

Outcome half_exhaustive() {
  const auto t0 = std::chrono::steady_clock::now();
  const oracle::HalfTable table;
  std::int64_t pattern_failures = 0, quieted = 0;
  for (std::uint32_t p = 0; p < 65536; ++p) {
    const float f = single_from_half(Half{static_cast<std::uint16_t>(p)});
    const std::uint16_t back = half_from_single(f).bits;
    const bool nan = (p & 0x7c00) == 0x7c00 && (p & 0x3ff) != 0;
    if (nan) {
      // Conversions deliver quiet NaNs: sign and payload kept, quiet bit set.
      if (back != (p | 0x200)) ++pattern_failures;
      if (back != p) ++quieted;
      continue;
    }
    if (back != p) ++pattern_failures;
    if ((p & 0x7c00) != 0x7c00 && static_cast<double>(std::fabs(f)) != table.value(p & 0x7fff)) ++pattern_failures;
  }

  // Random 32-bit patterns, plus the named edge cases.
  std::mt19937_64 rng(5005);
  std::vector<float> xs;
  xs.reserve(1000000 + 64);
  const float named[] = {0.0f, -0.0f, 1.0f, 65504.0f, 65519.99f, 65520.0f, -65520.0f, 1e9f,
                         std::ldexp(1.0f, -24), std::ldexp(1.0f, -25), std::ldexp(1.0f, -25) * 1.0000001f,
                         std::ldexp(1.0f, -26), std::ldexp(1.5f, -24), std::ldexp(1.0f, -14),
                         std::ldexp(1023.5f, -24), 1.0f + std::ldexp(1.0f, -11), 1.0f + 3 * std::ldexp(1.0f, -11),
                         2049.0f, 2051.0f, std::numeric_limits<float>::infinity(),
                         std::numeric_limits<float>::denorm_min(), std::nanf("")};
  xs.insert(xs.end(), std::begin(named), std::end(named));
  while (xs.size() < 1000000 + std::size(named)) {
    const auto bits = static_cast<std::uint32_t>(rng());
    // Half the draws cover all patterns; half concentrate on the half range.
    if (xs.size() % 2) xs.push_back(std::bit_cast<float>(bits));
    else xs.push_back(std::ldexp(static_cast<float>(bits & 0xffffff) / 16777216.0f + 0.5f, static_cast<int>(bits >> 27) - 26) *
                      ((bits >> 24) & 1 ? -1.0f : 1.0f));
  }
  std::int64_t scalar_mismatch = 0, vector_mismatch = 0;
  std::vector<float> vec(xs);
  round_to_half_inplace(vec);
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const std::uint16_t want = table.nearest(xs[i]);
    const std::uint16_t got = half_from_single(xs[i]).bits;
    const bool nan = std::isnan(xs[i]);
    if (nan ? (got & 0x7e00) != 0x7e00 || (got & 0x8000) != (want & 0x8000) : got != want) ++scalar_mismatch;
    const float via_vector = vec[i];
    const float via_scalar = single_from_half(Half{got});
    if (nan ? !std::isnan(via_vector) : std::bit_cast<std::uint32_t>(via_vector) != std::bit_cast<std::uint32_t>(via_scalar))
      ++vector_mismatch;
  }
  const double secs = seconds_since(t0);
  const bool pass = pattern_failures == 0 && scalar_mismatch == 0 && vector_mismatch == 0 && secs < 30.0;
  return {pass, fmt("65536 patterns: %lld failures (%lld signalling NaNs come back quieted); %zu values vs bit-level "
                    "oracle: %lld scalar / %lld vector mismatches; %.2f s (limit 30 s)",
                    static_cast<long long>(pattern_failures), static_cast<long long>(quieted), xs.size(),
                    static_cast<long long>(scalar_mismatch), static_cast<long long>(vector_mismatch), secs)};
}

Outcome loss_scaling() {
  const auto t0 = std::chrono::steady_clock::now();
  const auto samples = toy_samples(2, 16, 6006);
  const auto [x, y] = batch_of<float>(samples[0]);

  // (a) A loss shrunk by 2^-20: under the half cast policy its gradients
  // underflow without scaling and survive at 2^12.
  auto grads_at = [&](SegResNet<float>& m, std::optional<double> scale) {
    m.zero_grad();
    std::optional<AutocastScope> amp;
    if (scale) amp.emplace(CastPolicy::mixed());
    Tape<float> tape;
    const auto loss = vxf::scale(dice_loss(m.forward(x, false), y), std::ldexp(1.0f, -20));
    if (scale) {
      LossScalerConfig c;
      c.initial_scale = *scale;
      LossScaler s(c);
      scaled_backward(loss, s);
      unscale_check_step<float>(m.parameters(), s);
    } else {
      tape.backward(loss);
    }
    std::vector<float> g;
    for (const auto& p : m.parameters()) g.insert(g.end(), p.grad().begin(), p.grad().end());
    return g;
  };
  auto model = SegResNet<float>::build(tiny_model(), 61);
  const auto ref = grads_at(model, std::nullopt);
  const auto unscaled = grads_at(model, 1.0);
  const auto scaled = grads_at(model, 4096.0);
  std::int64_t flushed = 0, rescued = 0;
  for (std::size_t i = 0; i < ref.size(); ++i) {
    if (ref[i] != 0.0f && unscaled[i] == 0.0f) {
      ++flushed;
      if (scaled[i] != 0.0f) ++rescued;
    }
  }
  const bool a = flushed >= 1 && rescued >= 1;

  // (b) Infinite gradient injected after a scaled backward.
  std::vector<std::vector<float>> before;
  for (const auto& p : model.parameters()) before.emplace_back(p.data().begin(), p.data().end());
  auto adam = AdamState<float>::zeros_like(model.parameters());
  LossScaler scaler;
  model.zero_grad();
  StepDecision decision;
  {
    AutocastScope amp(CastPolicy::mixed());
    Tape<float> tape;
    scaled_backward(dice_loss(model.forward(x, true, {1, 0, 0}), y), scaler);
    model.parameters()[7].mutable_grad()[3] = std::numeric_limits<float>::infinity();
    decision = unscale_check_step<float>(model.parameters(), scaler);
    if (decision == StepDecision::kProceed) adam_step<float>(model.parameters(), adam, {});
  }
  bool unchanged = adam.t == 0;
  for (std::size_t i = 0; i < before.size(); ++i)
    unchanged = unchanged && std::memcmp(before[i].data(), model.parameters()[i].data().data(), before[i].size() * 4) == 0;
  // The same through the trainer: a non-finite input voxel.
  TrainConfig tc;
  tc.roi = {16, 16, 16};
  Trainer<float> trainer(model, tc);
  std::vector<float> poisoned(samples[0].image.data().begin(), samples[0].image.data().end());
  poisoned[100] = std::numeric_limits<float>::infinity();
  const Volume pv = samples[0].image.with_data(poisoned);
  const Volume* px[] = {&pv};
  const auto step = trainer.step(batch_tensor<float>(px), y);
  bool unchanged_trainer = !step.applied && trainer.adam().t == 0;
  for (std::size_t i = 0; i < before.size(); ++i)
    unchanged_trainer = unchanged_trainer &&
                        std::memcmp(before[i].data(), model.parameters()[i].data().data(), before[i].size() * 4) == 0;
  const bool b = decision == StepDecision::kSkip && scaler.scale() == 32768.0 && unchanged &&
                 trainer.scaler().scale() == 32768.0 && unchanged_trainer;

  // (c) 200 clean training steps starting from 1024.
  TrainConfig gc;
  gc.roi = {16, 16, 16};
  gc.scaler.initial_scale = 1024;
  auto small = SegResNet<float>::build(tiny_model(), 62);
  Trainer<float> grower(small, gc);
  double scale_after_199 = 0;
  std::int64_t skipped = 0;
  for (int s = 0; s < 200; ++s) {
    const auto [xi, yi] = batch_of<float>(samples[static_cast<std::size_t>(s % 2)]);
    if (!grower.step(xi, yi).applied) ++skipped;
    if (s == 198) scale_after_199 = grower.scaler().scale();
  }
  const bool c = skipped == 0 && scale_after_199 == 1024.0 && grower.scaler().scale() == 2048.0;
  const double secs = seconds_since(t0);
  return {a && b && c && secs < 60.0,
          fmt("(a) %lld gradients flushed at scale 1, %lld of them kept at 2^12 [%s]; (b) skip=%d, scale 65536->%g, "
              "parameters unchanged=%d, trainer path unchanged=%d [%s]; (c) %lld skips, scale 1024->%g->%g [%s]; "
              "%.1f s (limit 60 s)",
              static_cast<long long>(flushed), static_cast<long long>(rescued), a ? "ok" : "FAIL",
              decision == StepDecision::kSkip, scaler.scale(), unchanged, unchanged_trainer, b ? "ok" : "FAIL",
              static_cast<long long>(skipped), scale_after_199, grower.scaler().scale(), c ? "ok" : "FAIL", secs)};
}

Outcome amp_fidelity() {
  const auto t0 = std::chrono::steady_clock::now();
  const auto samples = toy_samples(8, 16, 7007);
  auto run = [&](bool amp) {
    auto model = SegResNet<float>::build(tiny_model(), 71);
    TrainConfig c;
    c.roi = {16, 16, 16};
    c.amp = amp;
    Trainer<float> trainer(model, c);
    std::vector<double> losses;
    for (int s = 0; s < 200; ++s) {
      const auto [x, y] = batch_of<float>(samples[static_cast<std::size_t>(s % 8)]);
      losses.push_back(trainer.step(x, y).loss);
    }
    const auto mean = [&](std::size_t from) {
      double t = 0;
      for (std::size_t i = from; i < from + 10; ++i) t += losses[i];
      return t / 10;
    };
    return std::pair{mean(0), mean(190)};
  };
  const auto [start_amp, end_amp] = run(true);
  const auto [start_fp, end_fp] = run(false);
  const double secs = seconds_since(t0);
  const double gap = std::fabs(end_amp - end_fp);
  const bool pass = gap <= 0.05 && end_amp < start_amp && end_fp < start_fp && secs < 300.0;
  return {pass, fmt("200 steps, loss as mean of first/last 10 steps: AMP %.6f -> %.6f, 32-bit %.6f -> %.6f; "
                    "|final gap| %.2e (limit 0.05); %.1f s (limit 300 s)",
                    start_amp, end_amp, start_fp, end_fp, gap, secs)};
}

Outcome end_to_end() {
  const auto t0 = std::chrono::steady_clock::now();
  std::vector<double> dice, final_loss, first_loss;
  std::string per_seed;
  for (std::uint64_t seed : {1, 2, 3}) {
    const auto root = scratch("e2e_" + std::to_string(seed));
    SyntheticSpec spec;
    spec.count = 40;
    spec.dims = {32, 32, 32};
    spec.seed = seed;
    cmd_synth(spec, root / "data");
    RunConfig cfg = RunConfig::parse(
        "init_filters=8\nepochs=30\nbatch_size=1\nlearning_rate=0.0001\nweight_decay=0.00001\n"
        "dropout_prob=0.2\namp=true\nroi=32,32,32\nseed=" + std::to_string(seed) + "\n");
    cfg.data_dir = root / "data";
    cfg.out_dir = root / "run";
    const auto out = cmd_train(cfg);
    dice.push_back(out.test.aggregate.mean);
    first_loss.push_back(out.result.log.rows.front().train_loss);
    final_loss.push_back(out.result.log.rows.back().train_loss);
    per_seed += fmt(" seed %llu: test dice %.4f (tc %.3f wt %.3f et %.3f), train loss %.4f -> %.4f, best epoch %lld;",
                    static_cast<unsigned long long>(seed), out.test.aggregate.mean, out.test.aggregate.tc,
                    out.test.aggregate.wt, out.test.aggregate.et, first_loss.back(), final_loss.back(),
                    static_cast<long long>(out.result.best_epoch));
    std::printf("  [8] seed %llu done after %.0f s\n", static_cast<unsigned long long>(seed), seconds_since(t0));
    std::fflush(stdout);
  }
  const double mean = (dice[0] + dice[1] + dice[2]) / 3;
  const double secs = seconds_since(t0);
  bool pass = mean >= 0.80 && secs < 900.0;
  for (std::size_t i = 0; i < 3; ++i) pass = pass && dice[i] >= 0.75 && final_loss[i] < 0.3 && final_loss[i] < first_loss[i];
  return {pass, fmt("mean held-out dice %.4f (limit 0.80, each >= 0.75, final train loss < 0.3);", mean) + per_seed +
                    fmt(" %.0f s (limit 900 s)", secs)};
}

Outcome nifti_round_trip() {
  const auto t0 = std::chrono::steady_clock::now();
  const auto dir = scratch("nifti");
  std::mt19937_64 rng(9009);
  int failures = 0;
  for (int i = 0; i < 100; ++i) {
    const auto img = oracle::random_nifti(rng);
    const auto bytes = encode_nifti(img);
    for (const char* name : {"v.nii", "v.nii.gz"}) {
      write_nifti(img, dir / name);
      const auto back = read_nifti(dir / name);
      const bool same_header = back.header == img.header;
      const bool same_data = back.data.size() == img.data.size() &&
                             std::memcmp(back.data.data(), img.data.data(), img.data.size() * 4) == 0;
      if (!same_header || !same_data || encode_nifti(back) != bytes) ++failures;
    }
  }
  // Fixtures written by an independent NIFTI implementation.
  const fs::path data = VXF_TEST_DATA_DIR;
  const auto cube = read_nifti(data / "reference_8cube.nii.gz");
  bool cube_ok = cube.header.dim[0] == 3 && cube.header.dim[1] == 8 && cube.header.dim[2] == 8 && cube.header.dim[3] == 8 &&
                 cube.header.datatype == kNiftiFloat32 && cube.header.pixdim[1] == 1 && cube.header.pixdim[2] == 1 &&
                 cube.header.pixdim[3] == 1;
  Mat4 want = identity_affine();
  want[0][3] = -4;
  want[1][3] = -5;
  want[2][3] = -6;
  cube_ok = cube_ok && cube.affine == want;
  for (int i = 0; i < 512 && cube_ok; ++i) cube_ok = cube.data[static_cast<std::size_t>(i)] == (i % 8) + 10 * ((i / 8) % 8) + 100 * (i / 64);
  const auto q = read_nifti(data / "reference_qform.nii");
  const double qwant[3][4] = {{2, 0, 0, 10}, {0, -3, 0, 20}, {0, 0, -4, 30}};
  bool q_ok = q.header.dim[1] == 4 && q.header.dim[2] == 3 && q.header.dim[3] == 2;
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 4; ++c) q_ok = q_ok && std::fabs(q.affine[r][c] - qwant[r][c]) <= 1e-6;
  for (int i = 0; i < 24; ++i) q_ok = q_ok && q.data[static_cast<std::size_t>(i)] == 0.5f * i + 1.0f;
  fs::remove_all(dir);
  const double secs = seconds_since(t0);
  return {failures == 0 && cube_ok && q_ok,
          fmt("100 random images x {plain, gzip}: %d mismatches; reference 8^3 sform fixture %s; reference qform "
              "fixture %s; %.2f s",
              failures, cube_ok ? "ok" : "WRONG", q_ok ? "ok" : "WRONG", secs)};
}

Outcome reorientation() {
  const auto t0 = std::chrono::steady_clock::now();
  std::mt19937_64 rng(10010);
  std::vector<int> codes(48);
  std::iota(codes.begin(), codes.end(), 0);
  std::shuffle(codes.begin(), codes.end(), rng);
  codes.resize(24);
  double worst = 0.0;
  int multiset_fail = 0, value_fail = 0, idem_fail = 0, ras_fail = 0;
  std::set<std::string> seen;
  for (int code : codes) {
    const auto o = oracle::random_oriented(rng, code);
    seen.insert(orientation_string(o.volume.orientation()));
    const auto r = reorient_to_ras(o.volume);
    if (r.orientation() != kRas) ++ras_fail;
    std::vector<float> a(o.volume.data().begin(), o.volume.data().end()), b(r.data().begin(), r.data().end());
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    if (a != b) ++multiset_fail;
    const double err = oracle::reorientation_error(o.volume, r);
    if (err < 0) ++value_fail;
    else worst = std::max(worst, err);
    if (!(reorient_to_ras(r) == r)) ++idem_fail;
  }
  const double secs = seconds_since(t0);
  const bool pass = ras_fail == 0 && multiset_fail == 0 && value_fail == 0 && idem_fail == 0 && worst <= 1e-5;
  return {pass, fmt("24 distinct orientation codes: multiset failures %d, voxel/world failures %d, max world error "
                    "%.3g mm (limit 1e-5), idempotence failures %d, non-RAS results %d; %.2f s",
                    multiset_fail, value_fail, worst, idem_fail, ras_fail, secs)};
}

Outcome normalization() {
  const auto t0 = std::chrono::steady_clock::now();
  const auto root = scratch("norm");
  SyntheticSpec spec;
  cmd_synth(spec, root);
  const auto files = discover_cases(root);
  const auto split = split_cases(files.size(), 0, {});
  std::vector<CaseVolumes> train;
  for (auto i : split.train) train.push_back(load_case(files[i], spec.dims));
  const auto norms = fit_normalizers(train);
  double worst_mean = 0, worst_std = 0;
  std::string per;
  for (std::int64_t m = 0; m < 4; ++m) {
    long double s = 0, s2 = 0;
    std::int64_t n = 0;
    for (const auto& c : train) {
      const auto out = make_sample(c, norms).image.channel(m);
      const auto raw = c.image.channel(m);
      for (std::size_t i = 0; i < raw.size(); ++i)
        if (raw[i] > 0) {
          s += out[i];
          s2 += static_cast<long double>(out[i]) * out[i];
          ++n;
        }
    }
    const double mean = static_cast<double>(s / n);
    const double sd = static_cast<double>(std::sqrt(s2 / n - (s / n) * (s / n)));
    worst_mean = std::max(worst_mean, std::fabs(mean));
    worst_std = std::max(worst_std, std::fabs(sd - 1));
    per += fmt(" %s mean %.2e std %.6f;", kModalityNames[static_cast<std::size_t>(m)], mean, sd);
  }
  fs::remove_all(root);
  const double secs = seconds_since(t0);
  return {worst_mean <= 1e-3 && worst_std <= 1e-3,
          fmt("%zu training cases, pooled foreground:", train.size()) + per + fmt(" %.1f s", secs)};
}

Outcome determinism() {
  const auto t0 = std::chrono::steady_clock::now();
  const auto root = scratch("determinism");
  const std::string cli = VXF_CLI_PATH;
  {
    std::ofstream cfg(root / "cfg.txt");
    cfg << "data_dir=" << (root / "data").string() << "\ninit_filters=8\nepochs=2\nroi=16,16,16\nseed=5\n";
  }
  auto sh = [](const std::string& cmd) { return std::system((cmd + " > /dev/null 2>&1").c_str()); };
  int rc = sh("\"" + cli + "\" synth --out \"" + (root / "data").string() + "\" --count 8 --dims 16 --seed 5");
  std::vector<std::string> ckpts, logs, evals;
  for (const char* threads : {"1", "4"}) {
    const auto out = root / (std::string("run_t") + threads);
    rc |= sh("VOXELFORGE_THREADS=" + std::string(threads) + " \"" + cli + "\" train --config \"" +
             (root / "cfg.txt").string() + "\" --out \"" + out.string() + "\"");
    ckpts.push_back(slurp(out / "best.ckpt"));
    logs.push_back(slurp(out / "metrics.csv"));
    evals.push_back(slurp(out / "test_eval.csv"));
  }
  // A third run in-process with yet another thread count.
  set_thread_count(3);
  RunConfig cfg = RunConfig::load(root / "cfg.txt");
  cfg.out_dir = root / "run_t3";
  cmd_train(cfg);
  set_thread_count(1);
  ckpts.push_back(slurp(root / "run_t3" / "best.ckpt"));
  logs.push_back(slurp(root / "run_t3" / "metrics.csv"));
  evals.push_back(slurp(root / "run_t3" / "test_eval.csv"));
  const bool nonempty = !ckpts[0].empty() && !logs[0].empty();
  const bool same = ckpts[0] == ckpts[1] && ckpts[0] == ckpts[2] && logs[0] == logs[1] && logs[0] == logs[2] &&
                    evals[0] == evals[1] && evals[0] == evals[2];
  fs::remove_all(root);
  const double secs = seconds_since(t0);
  return {rc == 0 && nonempty && same,
          fmt("train at 1, 4 (VOXELFORGE_THREADS, CLI) and 3 (in-process) threads: checkpoint %zu bytes, "
              "checkpoints/metrics/test CSV identical=%s; exit codes ok=%s; %.1f s",
              ckpts[0].size(), same ? "yes" : "NO", rc == 0 ? "yes" : "NO", secs)};
}

}  // namespace

int main(int argc, char** argv) {
  const std::map<int, std::pair<const char*, std::function<Outcome()>>> criteria{
      {2, {"dice oracle equivalence", dice_oracle_equivalence}},
      {3, {"gradient suite", gradient_suite}},
      {4, {"convolution oracle", convolution_oracle}},
      {5, {"binary16 exhaustive", half_exhaustive}},
      {6, {"loss scaling", loss_scaling}},
      {7, {"AMP fidelity", amp_fidelity}},
      {8, {"end-to-end training", end_to_end}},
      {9, {"NIFTI round trip", nifti_round_trip}},
      {10, {"reorientation", reorientation}},
      {11, {"normalization", normalization}},
      {12, {"determinism", determinism}},
  };
  std::vector<int> selected;
  for (int i = 1; i < argc; ++i) {
    const int k = std::atoi(argv[i]);
    if (!criteria.count(k)) {
      std::fprintf(stderr, "unknown criterion '%s' (expected 2-12)\n", argv[i]);
      return 1;
    }
    selected.push_back(k);
  }
  if (selected.empty())
    for (const auto& [k, v] : criteria) selected.push_back(k);

  set_thread_count(1);
  int failed = 0;
  for (int k : selected) {
    const auto& [name, fn] = criteria.at(k);
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    std::printf("criterion %d (%s): %s  %s\n", k, name, o.pass ? "PASS" : "FAIL", o.detail.c_str());
    std::fflush(stdout);
    failed += !o.pass;
  }
  return failed == 0 ? 0 : 1;
}
