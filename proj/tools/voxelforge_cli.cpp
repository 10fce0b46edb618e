// voxelforge command-line tool.

#include <CLI11.hpp>

#include <fstream>
#include <iostream>

#include "voxelforge/commands.hpp"
#include "voxelforge/errors.hpp"
#include "voxelforge/parallel.hpp"

namespace {

std::vector<std::int64_t> parse_dims(const std::string& text) {
  std::vector<std::int64_t> out;
  for (const auto& f : vxf::split(text, ',')) out.push_back(vxf::parse_int(f));
  if (out.size() == 1) out.assign(3, out[0]);
  if (out.size() != 3) throw vxf::UsageError("--dims takes one or three extents");
  return out;
}

vxf::RunConfig load_config(const std::string& path, const std::string& data, const std::string& out,
                           const std::optional<std::uint64_t>& seed) {
  vxf::RunConfig c = path.empty() ? vxf::RunConfig{} : vxf::RunConfig::load(path);
  if (!data.empty()) c.data_dir = data;
  if (!out.empty()) c.out_dir = out;
  if (seed) {
    c.train.seed = *seed;
    c.train.augment.seed = *seed;
  }
  c.validate();
  return c;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"voxelforge: 3D brain tumour segmentation"};
  app.require_subcommand(1);

  std::string config_path, data_dir, out_path, checkpoint, metrics, subset = "all";
  std::optional<std::uint64_t> seed;
  std::array<std::string, 4> inputs;

  vxf::SyntheticSpec spec;
  std::string dims = "32";
  auto* synth = app.add_subcommand("synth", "Write a synthetic four-modality dataset");
  synth->add_option("--out", out_path, "Output directory")->required();
  synth->add_option("--seed", spec.seed, "Generator seed");
  synth->add_option("--count", spec.count, "Number of cases")->capture_default_str();
  synth->add_option("--dims", dims, "Grid extents, N or X,Y,Z")->capture_default_str();
  synth->add_option("--noise", spec.noise, "Gaussian noise std")->capture_default_str();
  synth->add_option("--brain-min", spec.brain_min, "Smallest brain semi-axis (fraction of grid)")
      ->capture_default_str();
  synth->add_option("--brain-max", spec.brain_max, "Largest brain semi-axis (fraction of grid)")
      ->capture_default_str();
  synth->add_option("--tumor-min", spec.tumor_min, "Smallest tumour semi-axis (fraction of grid)")
      ->capture_default_str();
  synth->add_option("--tumor-max", spec.tumor_max, "Largest tumour semi-axis (fraction of grid)")
      ->capture_default_str();
  synth->add_option("--core-min", spec.core_min, "Smallest TC/WT semi-axis ratio")->capture_default_str();
  synth->add_option("--core-max", spec.core_max, "Largest TC/WT semi-axis ratio")->capture_default_str();
  synth->add_option("--enhancing-min", spec.enhancing_min, "Smallest ET/TC semi-axis ratio")->capture_default_str();
  synth->add_option("--enhancing-max", spec.enhancing_max, "Largest ET/TC semi-axis ratio")->capture_default_str();

  auto* fit = app.add_subcommand("fit-norm", "Fit per-modality z-score normalizers on the training split");
  fit->add_option("--config", config_path, "Run config file");
  fit->add_option("--data", data_dir, "Dataset directory");
  fit->add_option("--out", out_path, "Output directory for <modality>.norm")->required();
  fit->add_option("--seed", seed, "Split seed");

  auto* train = app.add_subcommand("train", "Train and keep the best checkpoint");
  train->add_option("--config", config_path, "Run config file");
  train->add_option("--data", data_dir, "Dataset directory (overrides data_dir)");
  train->add_option("--out", out_path, "Run directory (overrides out_dir)");
  train->add_option("--seed", seed, "Run seed (overrides seed)");

  auto* eval = app.add_subcommand("eval", "Per-case dice of a checkpoint, as CSV");
  eval->add_option("--checkpoint", checkpoint, "Checkpoint file")->required();
  eval->add_option("--data", data_dir, "Dataset directory")->required();
  eval->add_option("--out", out_path, "CSV path (stdout when omitted)");
  eval->add_option("--subset", subset, "all, train, val or test")->capture_default_str();

  auto* segment = app.add_subcommand("segment", "Segment one case into a label NIFTI");
  segment->add_option("--checkpoint", checkpoint, "Checkpoint file")->required();
  segment->add_option("--flair", inputs[0], "FLAIR volume")->required();
  segment->add_option("--t1", inputs[1], "T1 volume")->required();
  segment->add_option("--t1ce", inputs[2], "T1CE volume")->required();
  segment->add_option("--t2", inputs[3], "T2 volume")->required();
  segment->add_option("--out", out_path, "Output label volume")->required();

  auto* plot = app.add_subcommand("plot", "Render a metrics CSV as SVG");
  plot->add_option("--metrics", metrics, "metrics.csv from train")->required();
  plot->add_option("--out", out_path, "SVG path")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "voxelforge: " << e.what() << "\n";
    return 1;
  }

  try {
    vxf::configure_threads_from_env();
    if (synth->parsed()) {
      const auto d = parse_dims(dims);
      spec.dims = {d[0], d[1], d[2]};
      vxf::cmd_synth(spec, out_path);
    } else if (fit->parsed()) {
      const auto c = load_config(config_path, data_dir, "", seed);
      vxf::cmd_fit_normalizers(c, out_path);
    } else if (train->parsed()) {
      const auto c = load_config(config_path, data_dir, out_path, seed);
      const auto r = vxf::cmd_train(c, &std::cout);
      std::cout << "best epoch " << r.result.best_epoch << "  val dice " << vxf::format_real(r.result.best_val_mean_dice)
                << "  test dice " << vxf::format_real(r.test.aggregate.mean) << "\n";
    } else if (eval->parsed()) {
      const auto report = vxf::cmd_eval(checkpoint, data_dir, subset);
      if (out_path.empty()) {
        std::cout << report.to_csv();
      } else {
        std::ofstream f(out_path, std::ios::binary);
        if (!(f << report.to_csv())) throw vxf::DataError("cannot write " + out_path);
      }
    } else if (segment->parsed()) {
      vxf::cmd_segment(checkpoint, {inputs[0], inputs[1], inputs[2], inputs[3]}, out_path);
    } else if (plot->parsed()) {
      vxf::cmd_plot(metrics, out_path);
    }
  } catch (const vxf::Error& e) {
    std::cerr << "voxelforge: " << e.what() << "\n";
    return vxf::exit_code(e);
  } catch (const std::exception& e) {
    std::cerr << "voxelforge: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
