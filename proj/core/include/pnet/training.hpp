#ifndef PNET_TRAINING_HPP
#define PNET_TRAINING_HPP

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "pnet/dataset.hpp"
#include "pnet/network.hpp"
#include "pnet/runconfig.hpp"

namespace pnet {

struct MetricsRow {
  std::size_t iteration = 0;
  double loss = 0.0;
  double lr = 0.0;
  std::optional<double> val_rank1;
};

struct TrainResult {
  ParameterStore params;
  std::vector<MetricsRow> log;
  std::size_t iterations_run = 0;
  bool early_stopped = false;
};

struct TrainHooks {
  std::ostream* progress = nullptr;          // one line per logged row
  std::string checkpoint_path;               // for training.checkpoint_every
};

// The sample -> forward -> loss -> backward -> decay -> step loop.
// When cfg.validation_fraction > 0 a held-out identity split provides
// rank-1 at each validation cadence; the learning-rate schedule and the
// optional loss-plateau early stop decide termination before the cap.
TrainResult run_training(const RunConfig& cfg, const DatasetManifest& manifest,
                         const TrainHooks& hooks = {});

std::string metrics_text(const std::vector<MetricsRow>& log);
void write_metrics(const std::string& path, const std::vector<MetricsRow>& log);

struct OptimizerTrace {
  std::uint64_t seed = 0;
  std::vector<double> sgd_loss;
  std::vector<double> rmsprop_loss;
};

// Twin runs per seed from identical initialization, one stepped by SGD
// and one by RMSProp, same sampling stream; loss recorded per iteration.
std::vector<OptimizerTrace> compare_optimizers(const RunConfig& cfg,
                                               const DatasetManifest& manifest,
                                               const std::vector<std::uint64_t>& seeds,
                                               std::ostream* progress = nullptr);

std::string comparison_text(const std::vector<OptimizerTrace>& traces);
void write_comparison(const std::string& path, const std::vector<OptimizerTrace>& traces);

// First iteration with smoothed loss at or below the threshold, or
// nullopt if never reached.
std::optional<std::size_t> iterations_to_loss(const std::vector<double>& losses, double threshold,
                                              std::size_t window = 25);

}  // namespace pnet

#endif
