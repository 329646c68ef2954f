#include "pnet/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>
#include <thread>

#include "pnet/errors.hpp"

namespace pnet {

double CmcCurve::rank(std::size_t k) const {
  if (rates.empty()) throw UsageError("empty curve");
  if (k == 0) throw ArgumentError("rank is 1-based");
  return rates[std::min(k, rates.size()) - 1];
}

namespace {

float same_probability(const Tensor& logits) {
  const float m = std::max(logits[0], logits[1]);
  const float e0 = std::exp(logits[0] - m);
  const float e1 = std::exp(logits[1] - m);
  return e1 / (e0 + e1);
}

}  // namespace

ScoreMatrix score_all(const ParameterStore& params, const NetworkConfig& cfg,
                      const std::vector<Tensor>& probes, const std::vector<int>& probe_ids,
                      const std::vector<Tensor>& gallery, const std::vector<int>& gallery_ids,
                      std::size_t workers) {
  if (probes.size() != probe_ids.size() || gallery.size() != gallery_ids.size()) {
    throw ArgumentError("score_all: image and identity list sizes differ");
  }
  if (probes.empty() || gallery.empty()) {
    throw ArgumentError("score_all: need at least one probe and one gallery image");
  }

  ScoreMatrix m;
  m.scores = Tensor({probes.size(), gallery.size()});
  m.probe_ids = probe_ids;
  m.gallery_ids = gallery_ids;

  auto score_rows = [&](std::size_t begin, std::size_t end) {
    Rng rng(0);  // eval mode draws nothing
    for (std::size_t p = begin; p < end; ++p) {
      for (std::size_t g = 0; g < gallery.size(); ++g) {
        PairForward<float> fwd =
            forward_pair(params, cfg, probes[p], gallery[g], LayerMode::eval, rng);
        m.scores(p, g) = same_probability(fwd.logits);
      }
    }
  };

  if (workers <= 1 || probes.size() == 1) {
    score_rows(0, probes.size());
  } else {
    const std::size_t n = std::min(workers, probes.size());
    std::vector<std::thread> threads;
    const std::size_t chunk = (probes.size() + n - 1) / n;
    for (std::size_t t = 0; t < n; ++t) {
      const std::size_t begin = t * chunk;
      const std::size_t end = std::min(begin + chunk, probes.size());
      if (begin >= end) break;
      threads.emplace_back(score_rows, begin, end);
    }
    for (auto& th : threads) th.join();
  }

  if (!m.scores.all_finite()) throw NumericError("score_all: non-finite score produced");
  return m;
}

namespace {

// rank = 1 + #{better scores} + #{equal scores at a lower index}
std::size_t single_shot_rank(const ScoreMatrix& m, std::size_t probe) {
  const std::size_t n = m.gallery_ids.size();
  std::size_t match = n;
  std::size_t matches = 0;
  for (std::size_t g = 0; g < n; ++g) {
    if (m.gallery_ids[g] == m.probe_ids[probe]) {
      match = g;
      ++matches;
    }
  }
  if (matches != 1) {
    throw ProtocolError("probe identity " + std::to_string(m.probe_ids[probe]) + " occurs " +
                        std::to_string(matches) + " times in the gallery, single-shot needs 1");
  }
  const float target = m.scores(probe, match);
  std::size_t rank = 1;
  for (std::size_t g = 0; g < n; ++g) {
    if (g == match) continue;
    if (m.scores(probe, g) > target || (m.scores(probe, g) == target && g < match)) ++rank;
  }
  return rank;
}

}  // namespace

CmcCurve cmc_from_scores(const ScoreMatrix& m) {
  const std::size_t probes = m.probe_ids.size();
  const std::size_t n = m.gallery_ids.size();
  std::vector<std::size_t> at_rank(n, 0);
  for (std::size_t p = 0; p < probes; ++p) {
    ++at_rank[single_shot_rank(m, p) - 1];
  }
  CmcCurve curve;
  curve.rates.resize(n);
  std::size_t cum = 0;
  for (std::size_t k = 0; k < n; ++k) {
    cum += at_rank[k];
    curve.rates[k] = static_cast<double>(cum) / static_cast<double>(probes);
  }
  return curve;
}

MapResult mean_average_precision(const ScoreMatrix& m) {
  const std::size_t probes = m.probe_ids.size();
  const std::size_t n = m.gallery_ids.size();
  MapResult out;
  double sum = 0.0;
  std::size_t counted = 0;

  std::vector<std::size_t> order(n);
  for (std::size_t p = 0; p < probes; ++p) {
    std::iota(order.begin(), order.end(), 0u);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      if (m.scores(p, a) != m.scores(p, b)) return m.scores(p, a) > m.scores(p, b);
      return a < b;
    });
    std::size_t hits = 0;
    double ap = 0.0;
    for (std::size_t pos = 0; pos < n; ++pos) {
      if (m.gallery_ids[order[pos]] == m.probe_ids[p]) {
        ++hits;
        ap += static_cast<double>(hits) / static_cast<double>(pos + 1);
      }
    }
    if (hits == 0) {
      ++out.skipped_probes;
      continue;
    }
    sum += ap / static_cast<double>(hits);
    ++counted;
  }
  if (counted == 0) throw ProtocolError("no probe has any true match in the gallery");
  out.value = sum / static_cast<double>(counted);
  return out;
}

ProtocolResult single_shot_protocol(const ParameterStore& params, const NetworkConfig& cfg,
                                    const DatasetManifest& manifest, const ImageStore& store,
                                    std::size_t trials, Rng& rng, std::size_t workers) {
  if (trials == 0) throw ArgumentError("need at least one trial");

  // probe camera: the smallest id present; gallery camera: the next one
  std::set<int> cameras;
  for (const auto& rec : manifest.records) cameras.insert(rec.camera);
  if (cameras.size() < 2) throw ProtocolError("need two cameras, manifest has fewer");
  const int cam_probe = *cameras.begin();
  const int cam_gallery = *std::next(cameras.begin());

  std::vector<Tensor> probes;
  std::vector<int> probe_ids;
  std::vector<Tensor> gallery;
  std::vector<int> gallery_ids;
  // per identity, indices into `gallery` to draw each trial's entry from
  std::vector<std::vector<std::size_t>> per_identity;

  for (const auto& [id, cams] : manifest.index) {
    auto pit = cams.find(cam_probe);
    auto git = cams.find(cam_gallery);
    if (pit == cams.end() || pit->second.empty()) {
      throw ProtocolError("identity " + std::to_string(id) + " has no camera-" +
                          std::to_string(cam_probe) + " image");
    }
    if (git == cams.end() || git->second.empty()) {
      throw ProtocolError("identity " + std::to_string(id) + " has no camera-" +
                          std::to_string(cam_gallery) + " image");
    }
    for (std::size_t rec : pit->second) {
      probes.push_back(store.image(rec));
      probe_ids.push_back(id);
    }
    per_identity.emplace_back();
    for (std::size_t rec : git->second) {
      per_identity.back().push_back(gallery.size());
      gallery.push_back(store.image(rec));
      gallery_ids.push_back(id);
    }
  }

  const ScoreMatrix full =
      score_all(params, cfg, probes, probe_ids, gallery, gallery_ids, workers);

  ProtocolResult result;
  result.probe_count = probes.size();
  result.gallery_identities = per_identity.size();

  std::vector<double> avg(per_identity.size(), 0.0);
  for (std::size_t t = 0; t < trials; ++t) {
    ScoreMatrix trial;
    trial.probe_ids = full.probe_ids;
    trial.scores = Tensor({probes.size(), per_identity.size()});
    for (std::size_t i = 0; i < per_identity.size(); ++i) {
      const std::size_t col = per_identity[i][rng.index(per_identity[i].size())];
      trial.gallery_ids.push_back(full.gallery_ids[col]);
      for (std::size_t p = 0; p < probes.size(); ++p) {
        trial.scores(p, i) = full.scores(p, col);
      }
    }
    const CmcCurve curve = cmc_from_scores(trial);
    for (std::size_t k = 0; k < avg.size(); ++k) avg[k] += curve.rates[k];
  }
  for (double& v : avg) v /= static_cast<double>(trials);
  result.cmc.rates = std::move(avg);
  result.cmc.trials = trials;

  result.map = mean_average_precision(full);
  return result;
}

std::string curve_text(const CmcCurve& curve, std::optional<double> map) {
  std::ostringstream out;
  out << "k,rate\n";
  char buf[64];
  for (std::size_t k = 0; k < curve.rates.size(); ++k) {
    std::snprintf(buf, sizeof buf, "%zu,%.6f\n", k + 1, curve.rates[k]);
    out << buf;
  }
  if (map) {
    std::snprintf(buf, sizeof buf, "# mAP=%.6f\n", *map);
    out << buf;
  }
  return out.str();
}

void write_curve(const std::string& path, const CmcCurve& curve, std::optional<double> map) {
  const std::string text = curve_text(curve, map);
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

}  // namespace pnet
