#ifndef PNET_RUNCONFIG_HPP
#define PNET_RUNCONFIG_HPP

#include <cstddef>
#include <cstdint>
#include <string>

#include "pnet/network.hpp"
#include "pnet/optimizer.hpp"

namespace pnet {

// Everything a training run needs beyond the data itself. Parsed from a
// flat `section.key = value` text format ('#' starts a comment, blank
// lines ignored, unknown keys rejected with their line number).
struct RunConfig {
  NetworkConfig network = NetworkConfig::canonical();

  // optimizer.*
  std::string optimizer = "rmsprop";  // rmsprop | sgd
  LrSchedule lr;                      // initial schedule state
  double rmsprop_mu = 1e-6;
  double weight_decay = 5e-4;

  // training.*
  std::size_t iterations = 100000;
  std::size_t batch_pairs = 2;
  std::size_t log_every = 100;
  std::size_t checkpoint_every = 0;  // 0: final only
  double validation_fraction = 0.1;
  std::size_t validation_every = 2000;
  std::size_t validation_trials = 3;
  bool early_stop = false;
  std::size_t early_stop_patience = 10;
  std::uint64_t seed = 1;

  // data.*
  std::string manifest;
  bool augment_translate = true;
  double translate_fraction = 0.05;
  bool augment_reflect = false;
};

RunConfig parse_run_config_text(const std::string& text);
RunConfig load_run_config(const std::string& path);
std::string run_config_text(const RunConfig& cfg);

// network.* subset only; this is the text embedded in checkpoints.
std::string network_config_text(const NetworkConfig& cfg);
NetworkConfig parse_network_config_text(const std::string& text);

}  // namespace pnet

#endif
