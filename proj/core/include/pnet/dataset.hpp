#ifndef PNET_DATASET_HPP
#define PNET_DATASET_HPP

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "pnet/rng.hpp"
#include "pnet/tensor.hpp"

namespace pnet {

struct DatasetRecord {
  std::string path;  // relative to the manifest's directory
  int identity = 0;
  int camera = 0;
  bool operator==(const DatasetRecord&) const = default;
};

// Manifest text format: one record per line,
//   <relative path>,<identityId>,<cameraId>
struct DatasetManifest {
  std::string root;  // directory the paths are relative to
  std::vector<DatasetRecord> records;
  // identity -> camera -> indices into records
  std::map<int, std::map<int, std::vector<std::size_t>>> index;

  std::string image_path(std::size_t record) const;
  // identities with images under at least two cameras
  std::vector<int> eligible_identities() const;
};

DatasetManifest make_manifest(std::string root, std::vector<DatasetRecord> records);
DatasetManifest load_manifest(const std::string& path);
void write_manifest(const std::string& path, const std::vector<DatasetRecord>& records);

// 8-bit binary portable pixmap ("P6"), values scaled to [0,1].
Tensor decode_ppm_bytes(std::string_view bytes);
Tensor decode_ppm(const std::string& path);
std::string encode_ppm_bytes(const Tensor& img);
void encode_ppm(const std::string& path, const Tensor& img);

// Decoded-image cache over a manifest; decodes lazily, keeps everything.
class ImageStore {
 public:
  explicit ImageStore(const DatasetManifest& manifest);
  const Tensor& image(std::size_t record) const;
  std::size_t size() const { return cache_.size(); }

 private:
  const DatasetManifest* manifest_;
  mutable std::vector<std::optional<Tensor>> cache_;
};

// Shift by whole pixels, zero-filling vacated positions.
Tensor translate_image(const Tensor& img, std::ptrdiff_t dy, std::ptrdiff_t dx);

// `count` copies, each shifted by (dy,dx) drawn uniformly from
// [-fraction*H, fraction*H] x [-fraction*W, fraction*W], rounded.
std::vector<Tensor> augment_translate(const Tensor& img, std::size_t count, Rng& rng,
                                      double fraction = 0.05);

// Width axis reversed.
Tensor augment_reflect(const Tensor& img);

struct ImagePair {
  Tensor a, b;
  int label = 0;  // 1 same identity, 0 different
};

struct PairBatch {
  std::vector<ImagePair> pairs;
};

struct SamplerOptions {
  bool translate = false;
  double translate_fraction = 0.05;
  bool reflect = false;
};

// Balanced online draw: batch/2 positives (same identity, different
// cameras) then batch/2 negatives (identity pair drawn uniformly,
// images from different cameras). Branch order of each pair is
// randomized, augmentation is applied per image when enabled.
PairBatch sample_balanced_pairs(const DatasetManifest& manifest, const ImageStore& store,
                                std::size_t batch, Rng& rng, const SamplerOptions& opts = {});

// Procedural two-view corpus: `identities` x `per_view` images under each
// of two views, plus a manifest, all under out_dir. Seed-deterministic.
DatasetManifest synth_dataset(std::size_t identities, std::size_t per_view, std::size_t height,
                              std::size_t width, Rng& rng, const std::string& out_dir);

}  // namespace pnet

#endif
