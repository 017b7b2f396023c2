#include <iostream>
#include <map>
#include <optional>

#include <CLI11.hpp>

#include "handocc/pipeline.hpp"

namespace {

using namespace handocc;
namespace fs = std::filesystem;

struct CommonArgs {
  std::string config;
  std::string out;
  std::map<std::string, std::string> overrides;
};

void add_common(CLI::App* cmd, CommonArgs& args, bool out_required = true) {
  cmd->add_option("--config", args.config, "JSON configuration file");
  auto* out = cmd->add_option("--out", args.out, "Output directory (file for eval)");
  if (out_required) out->required();
  PipelineConfig defaults;
  for (const auto& key : defaults.keys()) {
    cmd->add_option("--" + key, args.overrides[key], "Override configuration key " + key);
  }
}

PipelineConfig resolve_config(const CLI::App* cmd, const CommonArgs& args) {
  PipelineConfig cfg = args.config.empty() ? PipelineConfig{} : PipelineConfig::from_file(args.config);
  for (const auto& [key, value] : args.overrides) {
    if (cmd->count("--" + key) > 0) cfg.set(key, value);
  }
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Hand-held object occupancy: synthesis, curation, training, reconstruction and evaluation"};
  app.require_subcommand(1);

  CommonArgs synth_args, curate_args, sample_args, train_args, recon_args, eval_args;
  std::string manifest, checkpoint, resume, meshes;
  std::vector<std::string> manifests;
  bool oracle = false;

  auto* synth = app.add_subcommand("synth", "Generate a synthetic dataset and its manifest");
  add_common(synth, synth_args);

  auto* curate = app.add_subcommand("curate", "Split tracks on contact changes and drop unstable frames");
  add_common(curate, curate_args);
  curate->add_option("--manifest", manifest, "Input manifest")->required();

  auto* sample = app.add_subcommand("sample", "Write visual-hull supervision archives");
  add_common(sample, sample_args);
  sample->add_option("--manifest", manifest, "Input manifest")->required();

  auto* train = app.add_subcommand("train", "Train the occupancy network");
  add_common(train, train_args);
  train->add_option("--manifest", manifests, "Training manifest (repeatable)")->required();
  train->add_option("--resume", resume, "Checkpoint to continue from");

  auto* recon = app.add_subcommand("reconstruct", "Mesh the predicted occupancy of selected frames");
  add_common(recon, recon_args);
  recon->add_option("--manifest", manifest, "Manifest holding the frames")->required();
  recon->add_option("--checkpoint", checkpoint, "Trained checkpoint");
  recon->add_flag("--oracle", oracle, "Mesh the true shape instead of a network");

  auto* eval = app.add_subcommand("eval", "Score reconstructions against the oracle shapes");
  add_common(eval, eval_args);
  eval->add_option("--manifest", manifest, "Manifest with oracle shapes")->required();
  eval->add_option("--meshes", meshes, "Output directory of reconstruct")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: usage: " << e.what() << '\n';
    return 2;
  }

  try {
    if (synth->parsed()) {
      const auto cfg = resolve_config(synth, synth_args);
      const auto s = pipeline::cmd_synth(cfg, synth_args.out);
      std::cout << "wrote " << s.sequences << " sequences, " << s.frames << " frames (" << s.noisy_frames
                << " with pose noise) to " << synth_args.out << '\n';
    } else if (curate->parsed()) {
      const auto cfg = resolve_config(curate, curate_args);
      const auto s = pipeline::cmd_curate(cfg, manifest, curate_args.out);
      std::cout << "kept " << s.frames_out << " of " << s.frames_in << " frames\n";
    } else if (sample->parsed()) {
      const auto cfg = resolve_config(sample, sample_args);
      const auto written = pipeline::cmd_sample(cfg, manifest, sample_args.out);
      std::cout << "wrote " << written.size() << " sample archives\n";
    } else if (train->parsed()) {
      const auto cfg = resolve_config(train, train_args);
      std::vector<fs::path> paths(manifests.begin(), manifests.end());
      const auto s = pipeline::cmd_train(cfg, paths, train_args.out,
                                         resume.empty() ? std::nullopt : std::optional<fs::path>(resume));
      for (const auto& id : s.dropped) std::cerr << "warning: dropped sequence " << id << '\n';
      std::cout << "trained to step " << s.steps_done;
      if (s.last) std::cout << ", last total loss " << s.last->total;
      std::cout << '\n';
    } else if (recon->parsed()) {
      const auto cfg = resolve_config(recon, recon_args);
      const auto recs = pipeline::cmd_reconstruct(
          cfg, checkpoint.empty() ? std::nullopt : std::optional<fs::path>(checkpoint), manifest, recon_args.out, oracle);
      int empty = 0;
      for (const auto& r : recs) {
        if (r.empty) {
          ++empty;
          std::cerr << "warning: empty reconstruction for " << r.id << '\n';
        }
      }
      std::cout << "reconstructed " << recs.size() - static_cast<std::size_t>(empty) << " meshes, " << empty
                << " empty\n";
    } else if (eval->parsed()) {
      const auto cfg = resolve_config(eval, eval_args);
      const auto r = pipeline::cmd_eval(cfg, meshes, manifest, eval_args.out);
      std::cout << "evaluated " << r.evaluated << " meshes (" << r.empty << " empty)";
      if (r.evaluated > 0) {
        std::cout << ": CD " << r.mean_chamfer_mm << " mm";
        for (std::size_t t = 0; t < r.taus_mm.size(); ++t) std::cout << ", F@" << r.taus_mm[t] << " " << r.mean_f[t];
      }
      std::cout << '\n';
    }
  } catch (const Error& e) {
    std::cerr << "error: " << to_string(e.code()) << ": " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: internal: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
