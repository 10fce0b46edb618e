#include "voxelforge/commands.hpp"

#include <fstream>
#include <ostream>
#include <sstream>

#include "voxelforge/errors.hpp"
#include "voxelforge/nifti.hpp"
#include "voxelforge/plot.hpp"

namespace vxf {
namespace {

// A missing file or one without the checkpoint magic is a usage problem
// (wrong argument); a damaged checkpoint is a data error.
Checkpoint open_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  char magic[8] = {};
  if (!in || !in.read(magic, 8) || std::string_view(magic, 8) != "VXFCKPT1")
    throw UsageError("checkpoint required: " + path.string() + " is not a voxelforge checkpoint");
  return load_checkpoint(path);
}

std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  const auto bytes = std::as_bytes(std::span(text.data(), text.size()));
  write_file_bytes(path, {reinterpret_cast<const std::uint8_t*>(bytes.data()), bytes.size()});
}

void make_dir(const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw DataError("cannot create " + dir.string() + ": " + ec.message());
}

std::string join_ids(const std::vector<CaseFiles>& files, const std::vector<std::size_t>& idx) {
  std::string s;
  for (std::size_t i = 0; i < idx.size(); ++i) s += (i ? "," : "") + files[idx[i]].id;
  return s;
}

std::vector<Sample> samples_of(const std::vector<CaseVolumes>& cases, const std::vector<std::size_t>& idx,
                               const ModalityNormalizers& norms) {
  std::vector<Sample> out;
  out.reserve(idx.size());
  for (auto i : idx) out.push_back(make_sample(cases[i], norms));
  return out;
}

SegResNet<float> model_from(const Checkpoint& ck) {
  auto model = SegResNet<float>::build(read_model_config(ck.metadata), 0);
  restore_checkpoint<float>(ck, model, nullptr);
  return model;
}

}  // namespace

void cmd_synth(const SyntheticSpec& spec, const std::filesystem::path& out_dir) {
  write_synthetic_dataset(spec, out_dir);
}

ModalityNormalizers cmd_fit_normalizers(const RunConfig& config, const std::filesystem::path& out_dir) {
  config.validate();
  const auto files = discover_cases(config.data_dir);
  const auto split = split_cases(files.size(), config.train.seed, config.train.split);
  std::vector<CaseVolumes> train;
  for (auto i : split.train) train.push_back(load_case(files[i], config.train.roi));
  const auto norms = fit_normalizers(train);
  make_dir(out_dir);
  write_normalizers(norms, out_dir);
  return norms;
}

RunConfig run_config_from(const Checkpoint& ck) {
  KeyValueText kv;
  for (const auto& [k, v] : ck.metadata.entries())
    if (k.starts_with("run.")) kv.set(k.substr(4), v);
  return RunConfig::parse(kv.serialize());
}

ModalityNormalizers normalizers_from(const Checkpoint& ck) {
  ModalityNormalizers n;
  for (std::size_t m = 0; m < 4; ++m) {
    const std::string key = std::string("norm.") + kModalityNames[m];
    n[m].modality = kModalityNames[m];
    n[m].mean = parse_real(ck.metadata.get(key + ".mean"));
    n[m].std = parse_real(ck.metadata.get(key + ".std"));
  }
  return n;
}

TrainOutputs cmd_train(const RunConfig& config, std::ostream* progress) {
  config.validate();
  const auto files = discover_cases(config.data_dir);
  const auto split = split_cases(files.size(), config.train.seed, config.train.split);
  std::vector<CaseVolumes> cases;
  cases.reserve(files.size());
  for (const auto& f : files) cases.push_back(load_case(f, config.train.roi));

  std::vector<CaseVolumes> train_cases;
  for (auto i : split.train) train_cases.push_back(cases[i]);
  const auto norms = fit_normalizers(train_cases);
  const auto train_samples = samples_of(cases, split.train, norms);
  const auto val_samples = samples_of(cases, split.val, norms);
  const auto test_samples = samples_of(cases, split.test, norms);

  // Paths stay out of the checkpoint so runs into different directories
  // produce identical files.
  KeyValueText meta;
  const KeyValueText run = config.to_kv();
  for (const auto& [k, v] : run.entries())
    if (k != "data_dir" && k != "out_dir") meta.set("run." + k, v);
  for (std::size_t m = 0; m < 4; ++m) {
    const std::string key = std::string("norm.") + kModalityNames[m];
    meta.set(key + ".mean", format_real(norms[m].mean));
    meta.set(key + ".std", format_real(norms[m].std));
  }
  meta.set("split.train", join_ids(files, split.train));
  meta.set("split.val", join_ids(files, split.val));
  meta.set("split.test", join_ids(files, split.test));

  make_dir(config.out_dir);
  write_text(config.out_dir / "config.txt", config.serialize());
  make_dir(config.out_dir / "norm");
  write_normalizers(norms, config.out_dir / "norm");

  auto model = SegResNet<float>::build(config.model, config.train.seed);
  auto on_epoch = [&](const MetricsRow& r) {
    if (!progress) return;
    *progress << "epoch " << r.epoch << "  loss " << format_real(r.train_loss) << "  val dice "
              << format_real(r.val_mean_dice) << " (tc " << format_real(r.dice_tc) << ", wt "
              << format_real(r.dice_wt) << ", et " << format_real(r.dice_et) << ")  scale "
              << format_real(r.loss_scale) << std::endl;
  };
  TrainOutputs out;
  out.result = train<float>(model, train_samples, val_samples, config.train, meta, on_epoch);
  write_text(config.out_dir / "metrics.csv", out.result.log.to_csv());
  if (!out.result.best) throw NumericError("no epoch produced a finite validation dice");
  save_checkpoint(*out.result.best, config.out_dir / "best.ckpt");

  restore_checkpoint<float>(*out.result.best, model, nullptr);
  out.test = evaluate(model, test_samples, config.train.amp);
  write_text(config.out_dir / "test_eval.csv", out.test.to_csv());
  return out;
}

EvalReport cmd_eval(const std::filesystem::path& checkpoint, const std::filesystem::path& data_dir,
                    const std::string& subset) {
  const auto ck = open_checkpoint(checkpoint);
  const auto config = run_config_from(ck);
  const auto norms = normalizers_from(ck);
  const auto model = model_from(ck);

  auto files = discover_cases(data_dir);
  if (subset != "all") {
    if (subset != "train" && subset != "val" && subset != "test")
      throw UsageError("subset must be all, train, val or test");
    std::vector<CaseFiles> picked;
    for (const auto& id : split(ck.metadata.get("split." + subset), ',')) {
      auto it = std::find_if(files.begin(), files.end(), [&](const CaseFiles& f) { return f.id == id; });
      if (it == files.end()) throw DataError("case " + id + " is not in " + data_dir.string());
      picked.push_back(*it);
    }
    files = std::move(picked);
  }
  std::vector<Sample> samples;
  for (const auto& f : files) samples.push_back(make_sample(load_case(f, config.train.roi), norms));
  return evaluate(model, samples, config.train.amp);
}

void cmd_segment(const std::filesystem::path& checkpoint, const std::array<std::filesystem::path, 4>& inputs,
                 const std::filesystem::path& out) {
  const auto ck = open_checkpoint(checkpoint);
  const auto config = run_config_from(ck);
  const auto norms = normalizers_from(ck);
  const auto model = model_from(ck);

  const Volume reference = volume_from_nifti(read_nifti(inputs[0]));
  const Volume ras = load_modalities(inputs);
  const Dims3 roi = config.train.roi;
  const Volume image = apply_normalizers(norms, crop_or_pad_center(ras, roi));
  const LabelVolume roi_labels = channels_to_labels(predict_mask(model, image, config.train.amp));

  // Undo the crop/pad on the RAS grid, then the reorientation.
  const Dims3& n = ras.dims();
  std::array<std::int64_t, 3> off{};
  for (int a = 0; a < 3; ++a) off[a] = center_offset(n[a], roi[a]);
  std::vector<std::uint8_t> labels(static_cast<std::size_t>(voxel_count(n)), 0);
  std::size_t v = 0;
  for (std::int64_t i = 0; i < n[0]; ++i)
    for (std::int64_t j = 0; j < n[1]; ++j)
      for (std::int64_t k = 0; k < n[2]; ++k, ++v) {
        const std::int64_t r[3] = {i - off[0], j - off[1], k - off[2]};
        if (r[0] < 0 || r[1] < 0 || r[2] < 0 || r[0] >= roi[0] || r[1] >= roi[1] || r[2] >= roi[2]) continue;
        labels[v] = roi_labels.data()[static_cast<std::size_t>((r[0] * roi[1] + r[1]) * roi[2] + r[2])];
      }
  const LabelVolume native = reorient(LabelVolume(n, std::move(labels), ras.affine()), reference.orientation());
  if (native.dims() != reference.dims()) throw ShapeError("segmentation grid does not match the input grid");
  write_nifti(nifti_from_labels(LabelVolume(reference.dims(), {native.data().begin(), native.data().end()},
                                            reference.affine())),
              out);
}

void cmd_plot(const std::filesystem::path& metrics_csv, const std::filesystem::path& out_svg) {
  write_text(out_svg, render_metrics_svg(MetricsLog::from_csv(read_text(metrics_csv))));
}

}  // namespace vxf
