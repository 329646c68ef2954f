#ifndef PNET_EVALUATION_HPP
#define PNET_EVALUATION_HPP

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "pnet/dataset.hpp"
#include "pnet/network.hpp"
#include "pnet/rng.hpp"

namespace pnet {

struct ScoreMatrix {
  Tensor scores;  // [probes, gallery], softmax "same" probability
  std::vector<int> probe_ids;
  std::vector<int> gallery_ids;
};

struct CmcCurve {
  std::vector<double> rates;  // rates[k-1] = rank-k recognition rate
  std::size_t trials = 1;

  double rank(std::size_t k) const;  // 1-based, clamped to the curve end
};

// Scores every probe against every gallery image in eval mode.
// `workers` > 1 splits the probe rows across threads; scoring is
// read-only over the parameters so results do not depend on it.
ScoreMatrix score_all(const ParameterStore& params, const NetworkConfig& cfg,
                      const std::vector<Tensor>& probes, const std::vector<int>& probe_ids,
                      const std::vector<Tensor>& gallery, const std::vector<int>& gallery_ids,
                      std::size_t workers = 1);

// Single-shot ranks: each probe identity must occur exactly once in the
// gallery; ties in score are broken toward the lower gallery index.
CmcCurve cmc_from_scores(const ScoreMatrix& m);

struct MapResult {
  double value = 0.0;
  std::size_t skipped_probes = 0;  // probes with no true match in the gallery
};

MapResult mean_average_precision(const ScoreMatrix& m);

struct ProtocolResult {
  CmcCurve cmc;                // averaged over trials
  std::optional<MapResult> map;  // over the full multi-match gallery
  std::size_t probe_count = 0;
  std::size_t gallery_identities = 0;
};

// The ten-trial single-shot protocol: probes are every image from the
// lower-numbered camera; each trial draws one gallery image per identity
// from the other camera; CMC curves are averaged elementwise. mAP is
// computed once against all images of the gallery camera.
ProtocolResult single_shot_protocol(const ParameterStore& params, const NetworkConfig& cfg,
                                    const DatasetManifest& manifest, const ImageStore& store,
                                    std::size_t trials, Rng& rng, std::size_t workers = 1);

std::string curve_text(const CmcCurve& curve, std::optional<double> map = std::nullopt);
void write_curve(const std::string& path, const CmcCurve& curve,
                 std::optional<double> map = std::nullopt);

}  // namespace pnet

#endif
