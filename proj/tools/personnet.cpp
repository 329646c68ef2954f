#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "pnet/pnet.hpp"

namespace fs = std::filesystem;

namespace {

pnet::RunConfig load_config_or_default(const std::string& path) {
  if (path.empty()) return pnet::RunConfig{};
  return pnet::load_run_config(path);
}

pnet::DatasetManifest resolve_manifest(pnet::RunConfig& cfg, const std::string& data_flag) {
  if (!data_flag.empty()) cfg.manifest = data_flag;
  if (cfg.manifest.empty()) {
    throw pnet::UsageError("no dataset given: pass --data or set data.manifest in the config");
  }
  return pnet::load_manifest(cfg.manifest);
}

int cmd_train(const std::string& config_path, const std::string& data_path,
              const std::string& out_path, const std::string& metrics_path, std::uint64_t seed,
              bool seed_set) {
  pnet::RunConfig cfg = load_config_or_default(config_path);
  if (seed_set) cfg.seed = seed;
  const pnet::DatasetManifest manifest = resolve_manifest(cfg, data_path);

  pnet::TrainHooks hooks;
  hooks.progress = &std::cout;
  hooks.checkpoint_path = out_path;
  const pnet::TrainResult result = pnet::run_training(cfg, manifest, hooks);

  pnet::save_checkpoint(out_path, cfg.network, result.params);
  if (!metrics_path.empty()) pnet::write_metrics(metrics_path, result.log);

  std::cout << "trained " << result.iterations_run << " iterations"
            << (result.early_stopped ? " (early stop)" : "") << ", checkpoint at " << out_path
            << "\n";
  return 0;
}

int cmd_eval(const std::string& checkpoint_path, const std::string& data_path,
             const std::string& out_path, std::size_t trials, std::uint64_t seed,
             std::size_t workers) {
  const pnet::Checkpoint ck = pnet::load_checkpoint(checkpoint_path);
  const pnet::DatasetManifest manifest = pnet::load_manifest(data_path);
  const pnet::ImageStore store(manifest);
  pnet::Rng rng(seed);

  const pnet::ProtocolResult result =
      pnet::single_shot_protocol(ck.params, ck.config, manifest, store, trials, rng, workers);

  for (const std::size_t k : {1u, 5u, 10u, 20u}) {
    if (k > result.cmc.rates.size()) break;
    std::printf("rank-%-3zu %.4f\n", k, result.cmc.rank(k));
  }
  if (result.map) std::printf("mAP      %.4f\n", result.map->value);
  std::printf("probes %zu, gallery identities %zu, trials %zu\n", result.probe_count,
              result.gallery_identities, result.cmc.trials);

  if (!out_path.empty()) {
    pnet::write_curve(out_path, result.cmc,
                      result.map ? std::optional<double>(result.map->value) : std::nullopt);
    std::cout << "curve written to " << out_path << "\n";
  }
  return 0;
}

int cmd_gradcheck(const std::string& config_path, double tolerance, std::uint64_t seed,
                  bool sabotage) {
  const pnet::NetworkConfig cfg =
      config_path.empty() ? pnet::NetworkConfig::tiny() : pnet::load_run_config(config_path).network;
  const pnet::GradCheckReport report = pnet::run_gradcheck(cfg, seed, sabotage);
  std::cout << pnet::gradcheck_text(report, tolerance);
  return report.passed(tolerance) ? 0 : 2;
}

int cmd_compare(const std::string& config_path, const std::string& data_path,
                const std::string& out_path, const std::vector<std::uint64_t>& seeds) {
  pnet::RunConfig cfg = load_config_or_default(config_path);
  const pnet::DatasetManifest manifest = resolve_manifest(cfg, data_path);

  const auto traces = pnet::compare_optimizers(cfg, manifest, seeds, &std::cout);
  pnet::write_comparison(out_path, traces);

  std::vector<double> sgd_iters, rms_iters;
  for (const auto& trace : traces) {
    const auto s = pnet::iterations_to_loss(trace.sgd_loss, 0.3);
    const auto r = pnet::iterations_to_loss(trace.rmsprop_loss, 0.3);
    std::printf("seed %llu: sgd %s, rmsprop %s (iterations to loss 0.3)\n",
                static_cast<unsigned long long>(trace.seed),
                s ? std::to_string(*s).c_str() : "never", r ? std::to_string(*r).c_str() : "never");
  }
  std::cout << "curves written to " << out_path << "\n";
  return 0;
}

int cmd_synth(const std::string& out_dir, std::size_t identities, std::size_t per_view,
              std::size_t height, std::size_t width, std::uint64_t seed, bool force) {
  if (fs::exists(out_dir) && !fs::is_empty(out_dir) && !force) {
    throw pnet::UsageError("'" + out_dir + "' is not empty; pass --force to write anyway");
  }
  pnet::Rng rng(seed);
  const pnet::DatasetManifest manifest =
      pnet::synth_dataset(identities, per_view, height, width, rng, out_dir);
  std::cout << "wrote " << manifest.records.size() << " images and a manifest to " << out_dir
            << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"pair-similarity network: training, evaluation and diagnostics"};
  app.require_subcommand(1);

  std::string config_path, data_path, out_path, metrics_path, checkpoint_path;
  std::uint64_t seed = 1;
  double tolerance = 1e-4;
  std::size_t trials = 10, workers = 1;
  bool sabotage = false, force = false;
  std::vector<std::uint64_t> seeds{1};
  std::size_t identities = 20, per_view = 4, height = 40, width = 20;

  CLI::App* train = app.add_subcommand("train", "train a model on a manifest dataset");
  train->add_option("--config", config_path, "run config file");
  train->add_option("--data", data_path, "dataset manifest (overrides data.manifest)");
  train->add_option("--out", out_path, "checkpoint output path")->required();
  train->add_option("--metrics", metrics_path, "metrics log output path");
  CLI::Option* train_seed = train->add_option("--seed", seed, "override training.seed");

  CLI::App* eval = app.add_subcommand("eval", "single-shot evaluation of a checkpoint");
  eval->add_option("checkpoint", checkpoint_path, "checkpoint file")->required();
  eval->add_option("--data", data_path, "dataset manifest")->required();
  eval->add_option("--out", out_path, "curve output path");
  eval->add_option("--trials", trials, "gallery draws to average over");
  eval->add_option("--seed", seed, "gallery draw seed");
  eval->add_option("--workers", workers, "scoring threads");

  CLI::App* gradcheck = app.add_subcommand("gradcheck", "finite-difference gradient check");
  gradcheck->add_option("--config", config_path, "run config file (default: built-in tiny)");
  gradcheck->add_option("--tolerance", tolerance, "max relative error allowed");
  gradcheck->add_option("--seed", seed, "probe seed");
  gradcheck->add_flag("--sabotage", sabotage, "mis-scale one backward formula (negative control)");

  CLI::App* compare = app.add_subcommand("compare-optimizers", "twin SGD/RMSProp training runs");
  compare->add_option("--config", config_path, "run config file");
  compare->add_option("--data", data_path, "dataset manifest (overrides data.manifest)");
  compare->add_option("--out", out_path, "loss curve output path")->required();
  compare->add_option("--seeds", seeds, "seeds, one twin run per seed")->delimiter(',');

  CLI::App* synth = app.add_subcommand("synth", "generate a synthetic two-view corpus");
  synth->add_option("--out", out_path, "output directory")->required();
  synth->add_option("--identities", identities, "distinct identities");
  synth->add_option("--per-view", per_view, "images per identity per view");
  synth->add_option("--height", height, "image height");
  synth->add_option("--width", width, "image width");
  synth->add_option("--seed", seed, "generator seed");
  synth->add_flag("--force", force, "write into a non-empty directory");

  CLI11_PARSE(app, argc, argv);

  try {
    if (train->parsed()) {
      return cmd_train(config_path, data_path, out_path, metrics_path, seed,
                       train_seed->count() > 0);
    }
    if (eval->parsed()) {
      return cmd_eval(checkpoint_path, data_path, out_path, trials, seed, workers);
    }
    if (gradcheck->parsed()) {
      return cmd_gradcheck(config_path, tolerance, seed, sabotage);
    }
    if (compare->parsed()) {
      return cmd_compare(config_path, data_path, out_path, seeds);
    }
    if (synth->parsed()) {
      return cmd_synth(out_path, identities, per_view, height, width, seed, force);
    }
  } catch (const pnet::FormatError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
