#include "pnet/dataset.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "pnet/errors.hpp"

namespace fs = std::filesystem;

namespace pnet {

std::string DatasetManifest::image_path(std::size_t record) const {
  if (record >= records.size()) throw UsageError("record index out of range");
  if (root.empty()) return records[record].path;
  return (fs::path(root) / records[record].path).string();
}

std::vector<int> DatasetManifest::eligible_identities() const {
  std::vector<int> out;
  for (const auto& [id, cams] : index) {
    if (cams.size() >= 2) out.push_back(id);
  }
  return out;
}

DatasetManifest make_manifest(std::string root, std::vector<DatasetRecord> records) {
  DatasetManifest m;
  m.root = std::move(root);
  m.records = std::move(records);
  std::set<std::string> seen;
  for (std::size_t i = 0; i < m.records.size(); ++i) {
    const auto& rec = m.records[i];
    if (!seen.insert(rec.path).second) {
      throw ArgumentError("duplicate image path '" + rec.path + "'");
    }
    m.index[rec.identity][rec.camera].push_back(i);
  }
  return m;
}

DatasetManifest load_manifest(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open manifest '" + path + "'");

  std::vector<DatasetRecord> records;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const std::size_t c1 = line.find(',');
    const std::size_t c2 = c1 == std::string::npos ? std::string::npos : line.find(',', c1 + 1);
    if (c1 == std::string::npos || c2 == std::string::npos ||
        line.find(',', c2 + 1) != std::string::npos) {
      throw FormatError("manifest line " + std::to_string(line_no) +
                            ": expected 'path,identity,camera'",
                        0);
    }
    DatasetRecord rec;
    rec.path = line.substr(0, c1);
    try {
      std::size_t used = 0;
      rec.identity = std::stoi(line.substr(c1 + 1), &used);
      if (c1 + 1 + used != c2) throw std::invalid_argument("");
      rec.camera = std::stoi(line.substr(c2 + 1), &used);
      if (c2 + 1 + used != line.size()) throw std::invalid_argument("");
    } catch (const std::exception&) {
      throw FormatError("manifest line " + std::to_string(line_no) + ": non-integer id fields", 0);
    }
    records.push_back(std::move(rec));
  }

  try {
    return make_manifest(fs::path(path).parent_path().string(), std::move(records));
  } catch (const ArgumentError& e) {
    throw FormatError(std::string("manifest '") + path + "': " + e.what(), 0);
  }
}

void write_manifest(const std::string& path, const std::vector<DatasetRecord>& records) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open '" + tmp + "' for writing");
    for (const auto& rec : records) {
      out << rec.path << "," << rec.identity << "," << rec.camera << "\n";
    }
    if (!out) throw IoError("short write to '" + tmp + "'");
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0) {
    std::remove(tmp.c_str());
    throw IoError("cannot rename '" + tmp + "' to '" + path + "'");
  }
}

namespace {

// PPM header fields are whitespace-separated decimal tokens; '#' starts
// a comment running to end of line.
class PpmHeader {
 public:
  explicit PpmHeader(std::string_view buf) : buf_(buf) {}

  std::size_t pos() const { return pos_; }

  std::size_t number(const char* what) {
    skip_space(what);
    const std::size_t start = pos_;
    std::size_t value = 0;
    while (pos_ < buf_.size() && buf_[pos_] >= '0' && buf_[pos_] <= '9') {
      value = value * 10 + static_cast<std::size_t>(buf_[pos_] - '0');
      if (value > 1u << 24) throw FormatError(std::string("unreasonable ") + what, start);
      ++pos_;
    }
    if (pos_ == start) throw FormatError(std::string("expected ") + what, pos_);
    return value;
  }

  void single_space(const char* what) {
    if (pos_ >= buf_.size()) throw FormatError(std::string("truncated before ") + what, pos_);
    ++pos_;  // exactly one whitespace byte separates the header from the payload
  }

 private:
  void skip_space(const char* what) {
    while (pos_ < buf_.size()) {
      const char c = buf_[pos_];
      if (c == '#') {
        while (pos_ < buf_.size() && buf_[pos_] != '\n') ++pos_;
      } else if (c == ' ' || c == '\t' || c == '\r' || c == '\n') {
        ++pos_;
      } else {
        return;
      }
    }
    throw FormatError(std::string("truncated before ") + what, pos_);
  }

  std::string_view buf_;
  std::size_t pos_ = 0;
};

}  // namespace

Tensor decode_ppm_bytes(std::string_view bytes) {
  if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != '6') {
    throw FormatError("not a binary pixmap (missing P6 magic)", 0);
  }
  PpmHeader h(bytes.substr(2));
  const std::size_t w = h.number("width");
  const std::size_t hgt = h.number("height");
  const std::size_t maxval_at = 2 + h.pos();
  const std::size_t maxval = h.number("max value");
  if (maxval != 255) {
    throw FormatError("unsupported max value " + std::to_string(maxval) + ", expected 255",
                      maxval_at);
  }
  h.single_space("pixel payload");
  const std::size_t payload_at = 2 + h.pos();
  const std::size_t need = w * hgt * 3;
  if (bytes.size() - payload_at < need) {
    throw FormatError("pixel payload truncated", bytes.size());
  }
  if (bytes.size() - payload_at > need) {
    throw FormatError("trailing bytes after pixel payload", payload_at + need);
  }
  if (w == 0 || hgt == 0) throw FormatError("degenerate image extents", 2);

  Tensor img({hgt, w, 3});
  for (std::size_t i = 0; i < need; ++i) {
    img[i] = static_cast<float>(static_cast<unsigned char>(bytes[payload_at + i])) / 255.0f;
  }
  return img;
}

Tensor decode_ppm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open image '" + path + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  try {
    return decode_ppm_bytes(buf.str());
  } catch (const FormatError& e) {
    FormatError wrapped("image '" + path + "': " + e.what());
    wrapped.byte_offset = e.byte_offset;
    throw wrapped;
  }
}

std::string encode_ppm_bytes(const Tensor& img) {
  if (img.rank() != 3 || img.shape()[2] != 3) {
    throw ShapeError("encode_ppm_bytes: expected [H,W,3], got " + shape_str(img.shape()));
  }
  const std::size_t hgt = img.shape()[0], w = img.shape()[1];
  std::string out = "P6\n" + std::to_string(w) + " " + std::to_string(hgt) + "\n255\n";
  out.reserve(out.size() + hgt * w * 3);
  for (std::size_t i = 0; i < img.size(); ++i) {
    const float clamped = std::clamp(img[i], 0.0f, 1.0f);
    out.push_back(static_cast<char>(static_cast<unsigned char>(std::lround(clamped * 255.0f))));
  }
  return out;
}

void encode_ppm(const std::string& path, const Tensor& img) {
  const std::string blob = encode_ppm_bytes(img);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  out.write(blob.data(), static_cast<std::streamsize>(blob.size()));
  if (!out) throw IoError("short write to '" + path + "'");
}

ImageStore::ImageStore(const DatasetManifest& manifest)
    : manifest_(&manifest), cache_(manifest.records.size()) {}

const Tensor& ImageStore::image(std::size_t record) const {
  if (record >= cache_.size()) throw UsageError("record index out of range");
  if (!cache_[record]) cache_[record] = decode_ppm(manifest_->image_path(record));
  return *cache_[record];
}

Tensor translate_image(const Tensor& img, std::ptrdiff_t dy, std::ptrdiff_t dx) {
  if (img.rank() != 3) {
    throw ShapeError("translate_image: expected [H,W,C], got " + shape_str(img.shape()));
  }
  const std::size_t hgt = img.shape()[0], w = img.shape()[1], c = img.shape()[2];
  Tensor out(img.shape());
  for (std::size_t y = 0; y < hgt; ++y) {
    const std::ptrdiff_t sy = static_cast<std::ptrdiff_t>(y) - dy;
    if (sy < 0 || sy >= static_cast<std::ptrdiff_t>(hgt)) continue;
    for (std::size_t x = 0; x < w; ++x) {
      const std::ptrdiff_t sx = static_cast<std::ptrdiff_t>(x) - dx;
      if (sx < 0 || sx >= static_cast<std::ptrdiff_t>(w)) continue;
      for (std::size_t ch = 0; ch < c; ++ch) {
        out(y, x, ch) = img(static_cast<std::size_t>(sy), static_cast<std::size_t>(sx), ch);
      }
    }
  }
  return out;
}

namespace {

Tensor random_translate(const Tensor& img, Rng& rng, double fraction) {
  const auto max_dy = static_cast<std::ptrdiff_t>(
      std::lround(fraction * static_cast<double>(img.shape()[0])));
  const auto max_dx = static_cast<std::ptrdiff_t>(
      std::lround(fraction * static_cast<double>(img.shape()[1])));
  const std::ptrdiff_t dy = rng.uniform_int(-max_dy, max_dy);
  const std::ptrdiff_t dx = rng.uniform_int(-max_dx, max_dx);
  return translate_image(img, dy, dx);
}

}  // namespace

std::vector<Tensor> augment_translate(const Tensor& img, std::size_t count, Rng& rng,
                                      double fraction) {
  if (fraction < 0.0 || fraction >= 1.0) {
    throw ArgumentError("augment_translate: fraction must be in [0,1)");
  }
  std::vector<Tensor> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) out.push_back(random_translate(img, rng, fraction));
  return out;
}

Tensor augment_reflect(const Tensor& img) {
  if (img.rank() != 3) {
    throw ShapeError("augment_reflect: expected [H,W,C], got " + shape_str(img.shape()));
  }
  const std::size_t hgt = img.shape()[0], w = img.shape()[1], c = img.shape()[2];
  Tensor out(img.shape());
  for (std::size_t y = 0; y < hgt; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      for (std::size_t ch = 0; ch < c; ++ch) out(y, x, ch) = img(y, w - 1 - x, ch);
    }
  }
  return out;
}

namespace {

Tensor draw_image(const ImageStore& store, std::size_t record, Rng& rng,
                  const SamplerOptions& opts) {
  Tensor img = store.image(record);
  if (opts.translate) img = random_translate(img, rng, opts.translate_fraction);
  if (opts.reflect && rng.bernoulli(0.5)) img = augment_reflect(img);
  return img;
}

std::size_t pick_record(const std::map<int, std::vector<std::size_t>>& cams, int cam, Rng& rng) {
  const auto& recs = cams.at(cam);
  return recs[rng.index(recs.size())];
}

int pick_camera(const std::map<int, std::vector<std::size_t>>& cams, Rng& rng,
                std::optional<int> exclude = std::nullopt) {
  std::vector<int> ids;
  for (const auto& [cam, recs] : cams) {
    if (!recs.empty() && (!exclude || cam != *exclude)) ids.push_back(cam);
  }
  if (ids.empty()) throw SamplingError("no eligible camera to draw from");
  return ids[rng.index(ids.size())];
}

}  // namespace

PairBatch sample_balanced_pairs(const DatasetManifest& manifest, const ImageStore& store,
                                std::size_t batch, Rng& rng, const SamplerOptions& opts) {
  if (batch == 0 || batch % 2 != 0) {
    throw ArgumentError("batch size must be even and positive, got " + std::to_string(batch));
  }
  const std::vector<int> eligible = manifest.eligible_identities();
  if (eligible.size() < 2) {
    throw SamplingError("need at least 2 identities with images under 2 cameras, have " +
                        std::to_string(eligible.size()));
  }

  PairBatch out;
  out.pairs.reserve(batch);

  for (std::size_t i = 0; i < batch / 2; ++i) {
    const int id = eligible[rng.index(eligible.size())];
    const auto& cams = manifest.index.at(id);
    const int cam_a = pick_camera(cams, rng);
    const int cam_b = pick_camera(cams, rng, cam_a);
    ImagePair pair;
    pair.a = draw_image(store, pick_record(cams, cam_a, rng), rng, opts);
    pair.b = draw_image(store, pick_record(cams, cam_b, rng), rng, opts);
    pair.label = 1;
    if (rng.bernoulli(0.5)) std::swap(pair.a, pair.b);
    out.pairs.push_back(std::move(pair));
  }

  for (std::size_t i = 0; i < batch / 2; ++i) {
    const std::size_t ia = rng.index(eligible.size());
    std::size_t ib = rng.index(eligible.size() - 1);
    if (ib >= ia) ++ib;  // uniform over ordered distinct identity pairs
    const int id_a = eligible[ia], id_b = eligible[ib];
    const auto& cams_a = manifest.index.at(id_a);
    const auto& cams_b = manifest.index.at(id_b);
    const int cam_a = pick_camera(cams_a, rng);
    const int cam_b = pick_camera(cams_b, rng, cam_a);
    ImagePair pair;
    pair.a = draw_image(store, pick_record(cams_a, cam_a, rng), rng, opts);
    pair.b = draw_image(store, pick_record(cams_b, cam_b, rng), rng, opts);
    pair.label = 0;
    if (rng.bernoulli(0.5)) std::swap(pair.a, pair.b);
    out.pairs.push_back(std::move(pair));
  }
  return out;
}

namespace {

// Identity appearance: horizontal color bands with per-identity colors,
// boundaries and a fixed noise texture; roughly a clothed figure.
struct IdentityPattern {
  std::vector<double> boundaries;              // fractions of height
  std::vector<std::array<double, 3>> colors;   // one per band
  Tensor texture;                              // fixed per identity
};

IdentityPattern make_identity_pattern(Rng& rng, std::size_t hgt, std::size_t w) {
  IdentityPattern p;
  const std::size_t bands = 4;
  p.boundaries = {0.15, 0.45, 0.8};
  for (double& b : p.boundaries) b += rng.uniform(-0.04, 0.04);
  for (std::size_t i = 0; i < bands; ++i) {
    p.colors.push_back({rng.uniform(0.1, 0.9), rng.uniform(0.1, 0.9), rng.uniform(0.1, 0.9)});
  }
  p.texture = Tensor({hgt, w, 3});
  for (std::size_t i = 0; i < p.texture.size(); ++i) {
    p.texture[i] = static_cast<float>(rng.uniform(-0.06, 0.06));
  }
  return p;
}

Tensor render_identity(const IdentityPattern& p, std::size_t hgt, std::size_t w) {
  Tensor img({hgt, w, 3});
  for (std::size_t y = 0; y < hgt; ++y) {
    const double fy = static_cast<double>(y) / static_cast<double>(hgt);
    std::size_t band = 0;
    while (band < p.boundaries.size() && fy >= p.boundaries[band]) ++band;
    for (std::size_t x = 0; x < w; ++x) {
      for (std::size_t c = 0; c < 3; ++c) {
        img(y, x, c) = static_cast<float>(p.colors[band][c]) + p.texture(y, x, c);
      }
    }
  }
  return img;
}

// View effects are fixed per camera: a color tint and a small shift.
struct ViewEffect {
  std::array<double, 3> tint;
  std::ptrdiff_t dy, dx;
  double brightness;
};

constexpr ViewEffect kViews[2] = {
    {{1.0, 0.96, 0.92}, 0, 0, 0.0},
    {{0.92, 1.0, 0.96}, 2, 1, -0.04},
};

Tensor apply_view(const Tensor& base, const ViewEffect& view) {
  Tensor img = translate_image(base, view.dy, view.dx);
  for (std::size_t i = 0; i < img.size(); ++i) {
    const std::size_t c = i % 3;
    img[i] = static_cast<float>(img[i] * view.tint[c] + view.brightness);
  }
  return img;
}

void clamp01(Tensor& img) {
  for (std::size_t i = 0; i < img.size(); ++i) img[i] = std::clamp(img[i], 0.0f, 1.0f);
}

std::string image_name(std::size_t id, std::size_t cam, std::size_t idx) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "id%03zu_cam%zu_%02zu.ppm", id, cam, idx);
  return buf;
}

}  // namespace

DatasetManifest synth_dataset(std::size_t identities, std::size_t per_view, std::size_t height,
                              std::size_t width, Rng& rng, const std::string& out_dir) {
  if (identities < 2) throw ArgumentError("need at least 2 identities");
  if (per_view < 1) throw ArgumentError("need at least 1 image per view");

  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create '" + out_dir + "': " + ec.message());

  std::vector<DatasetRecord> records;
  for (std::size_t id = 0; id < identities; ++id) {
    Rng id_rng = rng.fork();
    const IdentityPattern pattern = make_identity_pattern(id_rng, height, width);
    const Tensor base = render_identity(pattern, height, width);
    for (std::size_t cam = 0; cam < 2; ++cam) {
      for (std::size_t k = 0; k < per_view; ++k) {
        Rng img_rng = id_rng.fork();
        Tensor img = apply_view(base, kViews[cam]);
        const std::ptrdiff_t jy = img_rng.uniform_int(-1, 1);
        const std::ptrdiff_t jx = img_rng.uniform_int(-1, 1);
        img = translate_image(img, jy, jx);
        for (std::size_t i = 0; i < img.size(); ++i) {
          img[i] += static_cast<float>(img_rng.uniform(-0.03, 0.03));
        }
        clamp01(img);

        DatasetRecord rec;
        rec.path = image_name(id, cam, k);
        rec.identity = static_cast<int>(id);
        rec.camera = static_cast<int>(cam);
        encode_ppm((fs::path(out_dir) / rec.path).string(), img);
        records.push_back(std::move(rec));
      }
    }
  }

  write_manifest((fs::path(out_dir) / "manifest.txt").string(), records);
  return make_manifest(out_dir, std::move(records));
}

}  // namespace pnet
