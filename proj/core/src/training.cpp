#include "pnet/training.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <ostream>
#include <set>
#include <sstream>

#include "pnet/checkpoint.hpp"
#include "pnet/errors.hpp"
#include "pnet/evaluation.hpp"
#include "pnet/optimizer.hpp"

namespace pnet {
namespace {

void atomic_write(const std::string& path, const std::string& text) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open '" + tmp + "' for writing");
    out << text;
    if (!out) throw IoError("short write to '" + tmp + "'");
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0) {
    std::remove(tmp.c_str());
    throw IoError("cannot rename '" + tmp + "' to '" + path + "'");
  }
}

DatasetManifest filter_identities(const DatasetManifest& src, const std::set<int>& keep) {
  std::vector<DatasetRecord> records;
  for (const auto& rec : src.records) {
    if (keep.count(rec.identity)) records.push_back(rec);
  }
  return make_manifest(src.root, std::move(records));
}

// Identity-level split: validation identities are unseen during training.
struct Split {
  DatasetManifest train, val;
  bool has_val = false;
};

Split split_identities(const DatasetManifest& manifest, double fraction, Rng& rng) {
  std::vector<int> ids = manifest.eligible_identities();
  if (ids.size() < 2) {
    throw SamplingError("need at least 2 identities with two cameras to train");
  }
  std::size_t val_count = static_cast<std::size_t>(fraction * static_cast<double>(ids.size()));
  if (ids.size() - val_count < 2) val_count = ids.size() - 2;

  // Fisher-Yates off the dedicated stream
  for (std::size_t i = ids.size(); i > 1; --i) {
    std::swap(ids[i - 1], ids[rng.index(i)]);
  }

  Split split;
  if (val_count == 0) {
    split.train = manifest;
    return split;
  }
  const std::set<int> val_ids(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(val_count));
  const std::set<int> train_ids(ids.begin() + static_cast<std::ptrdiff_t>(val_count), ids.end());
  split.train = filter_identities(manifest, train_ids);
  split.val = filter_identities(manifest, val_ids);
  split.has_val = true;
  return split;
}

struct StepStats {
  double loss = 0.0;
  std::size_t correct = 0;
};

StepStats run_batch(ParameterStoreT<float>& params, const NetworkConfig& net,
                    const PairBatch& batch, Rng& rng) {
  StepStats stats;
  const auto scale = static_cast<float>(1.0 / static_cast<double>(batch.pairs.size()));
  for (const auto& pair : batch.pairs) {
    PairForward<float> fwd = forward_pair(params, net, pair.a, pair.b, LayerMode::train, rng);
    LossResult<float> loss = softmax_cross_entropy(fwd.logits, pair.label);
    stats.loss += loss.loss;
    const int predicted = fwd.logits[1] > fwd.logits[0] ? 1 : 0;
    if (predicted == pair.label) ++stats.correct;
    scale_in_place(loss.grad_logits, scale);
    backward_pair(params, net, fwd.cache, loss.grad_logits);
  }
  stats.loss /= static_cast<double>(batch.pairs.size());
  return stats;
}

double validation_rank1(const ParameterStoreT<float>& params, const RunConfig& cfg,
                        const DatasetManifest& val, const ImageStore& store, Rng& rng) {
  const ProtocolResult r =
      single_shot_protocol(params, cfg.network, val, store, cfg.validation_trials, rng);
  return r.cmc.rank(1);
}

void emit_row(const MetricsRow& row, std::ostream* progress) {
  if (!progress) return;
  char buf[128];
  if (row.val_rank1) {
    std::snprintf(buf, sizeof buf, "iter %zu  loss %.4f  lr %.4g  val-rank1 %.3f", row.iteration,
                  row.loss, row.lr, *row.val_rank1);
  } else {
    std::snprintf(buf, sizeof buf, "iter %zu  loss %.4f  lr %.4g", row.iteration, row.loss, row.lr);
  }
  *progress << buf << "\n";
}

}  // namespace

TrainResult run_training(const RunConfig& cfg, const DatasetManifest& manifest,
                         const TrainHooks& hooks) {
  if (cfg.iterations == 0) throw ConfigError("training.iterations must be positive");

  Rng master(cfg.seed);
  Rng split_rng = master.fork();
  Rng init_rng = master.fork();
  Rng sample_rng = master.fork();
  Rng val_rng = master.fork();

  const Split split =
      split_identities(manifest, cfg.validation_fraction > 0 ? cfg.validation_fraction : 0.0,
                       split_rng);
  const ImageStore train_store(split.train);
  const ImageStore val_store(split.has_val ? split.val : split.train);

  TrainResult result;
  result.params = init_parameters<float>(cfg.network, init_rng);

  SamplerOptions sampler;
  sampler.translate = cfg.augment_translate;
  sampler.translate_fraction = cfg.translate_fraction;
  sampler.reflect = cfg.augment_reflect;

  RmsPropState opt_state;
  opt_state.mu = cfg.rmsprop_mu;
  const bool use_rmsprop = cfg.optimizer == "rmsprop";
  if (!use_rmsprop && cfg.optimizer != "sgd") {
    throw ConfigError("unknown optimizer '" + cfg.optimizer + "'");
  }

  LrSchedule sched = cfg.lr;
  double window_loss = 0.0;
  std::size_t window_count = 0;
  double best_window = 1e300;
  std::size_t stale_windows = 0;
  const std::size_t log_every = std::max<std::size_t>(1, cfg.log_every);

  for (std::size_t t = 0; t < cfg.iterations; ++t) {
    const double lr = sched.rate;

    const PairBatch batch =
        sample_balanced_pairs(split.train, train_store, cfg.batch_pairs, sample_rng, sampler);
    const StepStats stats = run_batch(result.params, cfg.network, batch, sample_rng);

    apply_weight_decay(result.params, cfg.weight_decay);
    if (use_rmsprop) {
      rmsprop_step(result.params, opt_state, lr);
    } else {
      sgd_step(result.params, lr);
    }
    result.iterations_run = t + 1;

    window_loss += stats.loss;
    ++window_count;

    const bool last = t + 1 == cfg.iterations;
    const bool log_now = (t + 1) % log_every == 0 || last;
    const bool validate_now = split.has_val && cfg.validation_every > 0 &&
                              ((t + 1) % cfg.validation_every == 0 || last);

    if (validate_now || log_now) {
      MetricsRow row;
      row.iteration = t + 1;
      row.loss = window_loss / static_cast<double>(window_count);
      row.lr = lr;
      if (validate_now) {
        Rng trial_rng = val_rng.fork();
        row.val_rank1 =
            validation_rank1(result.params, cfg, split.has_val ? split.val : split.train,
                             val_store, trial_rng);
        sched.observe(*row.val_rank1);
      }
      result.log.push_back(row);
      emit_row(row, hooks.progress);

      if (cfg.early_stop) {
        if (row.loss < best_window - 1e-3) {
          best_window = row.loss;
          stale_windows = 0;
        } else if (++stale_windows >= cfg.early_stop_patience) {
          result.early_stopped = true;
        }
      }
      window_loss = 0.0;
      window_count = 0;
    }

    if (!hooks.checkpoint_path.empty() && cfg.checkpoint_every > 0 &&
        (t + 1) % cfg.checkpoint_every == 0) {
      save_checkpoint(hooks.checkpoint_path, cfg.network, result.params);
    }

    if (result.early_stopped || sched.exhausted) break;
  }

  return result;
}

std::string metrics_text(const std::vector<MetricsRow>& log) {
  std::ostringstream out;
  out << "iteration,loss,learning_rate,val_rank1\n";
  char buf[128];
  for (const auto& row : log) {
    if (row.val_rank1) {
      std::snprintf(buf, sizeof buf, "%zu,%.8f,%.8g,%.6f\n", row.iteration, row.loss, row.lr,
                    *row.val_rank1);
    } else {
      std::snprintf(buf, sizeof buf, "%zu,%.8f,%.8g,\n", row.iteration, row.loss, row.lr);
    }
    out << buf;
  }
  return out.str();
}

void write_metrics(const std::string& path, const std::vector<MetricsRow>& log) {
  atomic_write(path, metrics_text(log));
}

std::vector<OptimizerTrace> compare_optimizers(const RunConfig& cfg,
                                               const DatasetManifest& manifest,
                                               const std::vector<std::uint64_t>& seeds,
                                               std::ostream* progress) {
  if (seeds.empty()) throw ArgumentError("need at least one seed");

  std::vector<OptimizerTrace> traces;
  for (const std::uint64_t seed : seeds) {
    OptimizerTrace trace;
    trace.seed = seed;

    // Both runs re-derive the same streams from the seed, so they see
    // identical initialization, batches and dropout masks; only the
    // update rule differs.
    for (const bool rmsprop : {false, true}) {
      Rng master(seed);
      Rng split_rng = master.fork();
      Rng init_rng = master.fork();
      Rng sample_rng = master.fork();
      master.fork();  // keep stream layout identical to run_training

      const Split split = split_identities(manifest, 0.0, split_rng);
      const ImageStore store(split.train);
      ParameterStoreT<float> params = init_parameters<float>(cfg.network, init_rng);

      SamplerOptions sampler;
      sampler.translate = cfg.augment_translate;
      sampler.translate_fraction = cfg.translate_fraction;
      sampler.reflect = cfg.augment_reflect;

      RmsPropState opt_state;
      opt_state.mu = cfg.rmsprop_mu;

      std::vector<double>& losses = rmsprop ? trace.rmsprop_loss : trace.sgd_loss;
      losses.reserve(cfg.iterations);
      for (std::size_t t = 0; t < cfg.iterations; ++t) {
        const PairBatch batch =
            sample_balanced_pairs(split.train, store, cfg.batch_pairs, sample_rng, sampler);
        const StepStats stats = run_batch(params, cfg.network, batch, sample_rng);
        apply_weight_decay(params, cfg.weight_decay);
        const double lr = cfg.lr.rate;
        if (rmsprop) {
          rmsprop_step(params, opt_state, lr);
        } else {
          sgd_step(params, lr);
        }
        losses.push_back(stats.loss);
      }
      if (progress) {
        *progress << "seed " << seed << (rmsprop ? " rmsprop" : " sgd") << " done, final loss "
                  << losses.back() << "\n";
      }
    }
    traces.push_back(std::move(trace));
  }
  return traces;
}

std::string comparison_text(const std::vector<OptimizerTrace>& traces) {
  std::ostringstream out;
  char buf[128];
  for (const auto& trace : traces) {
    out << "# seed " << trace.seed << "\n";
    out << "iteration,sgd_loss,rmsprop_loss\n";
    for (std::size_t t = 0; t < trace.sgd_loss.size(); ++t) {
      std::snprintf(buf, sizeof buf, "%zu,%.8f,%.8f\n", t + 1, trace.sgd_loss[t],
                    trace.rmsprop_loss[t]);
      out << buf;
    }
  }
  return out.str();
}

void write_comparison(const std::string& path, const std::vector<OptimizerTrace>& traces) {
  atomic_write(path, comparison_text(traces));
}

std::optional<std::size_t> iterations_to_loss(const std::vector<double>& losses, double threshold,
                                              std::size_t window) {
  if (window == 0) window = 1;
  double sum = 0.0;
  for (std::size_t t = 0; t < losses.size(); ++t) {
    sum += losses[t];
    if (t >= window) sum -= losses[t - window];
    const std::size_t have = std::min(t + 1, window);
    if (sum / static_cast<double>(have) <= threshold) return t + 1;
  }
  return std::nullopt;
}

}  // namespace pnet
