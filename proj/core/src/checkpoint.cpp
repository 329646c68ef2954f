#include "pnet/checkpoint.hpp"

#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

#include "pnet/errors.hpp"
#include "pnet/runconfig.hpp"

namespace pnet {
namespace {

constexpr char kMagic[4] = {'P', 'N', 'E', 'T'};

void append_u8(std::string& out, std::uint8_t v) { out.push_back(static_cast<char>(v)); }

void append_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void append_f32(std::string& out, float v) {
  std::uint32_t bits;
  std::memcpy(&bits, &v, 4);
  append_u32(out, bits);
}

void append_string(std::string& out, std::string_view s) {
  if (s.size() > 0xffffffffu) throw UsageError("checkpoint string too long");
  append_u32(out, static_cast<std::uint32_t>(s.size()));
  out.append(s);
}

class Reader {
 public:
  explicit Reader(std::string_view buf) : buf_(buf) {}

  std::size_t pos() const { return pos_; }
  bool done() const { return pos_ == buf_.size(); }

  std::uint8_t u8(const char* what) {
    need(1, what);
    return static_cast<std::uint8_t>(buf_[pos_++]);
  }

  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) {
      v |= static_cast<std::uint32_t>(static_cast<std::uint8_t>(buf_[pos_ + i])) << (8 * i);
    }
    pos_ += 4;
    return v;
  }

  float f32(const char* what) {
    const std::uint32_t bits = u32(what);
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
  }

  std::string_view bytes(std::size_t n, const char* what) {
    need(n, what);
    std::string_view v = buf_.substr(pos_, n);
    pos_ += n;
    return v;
  }

  void need(std::size_t n, const char* what) const {
    if (buf_.size() - pos_ < n) {
      throw FormatError(std::string("truncated while reading ") + what, pos_);
    }
  }

 private:
  std::string_view buf_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string encode_checkpoint(const NetworkConfig& cfg, const ParameterStore& params) {
  std::string out;
  out.append(kMagic, 4);
  append_u32(out, kCheckpointVersion);
  append_string(out, network_config_text(cfg));
  if (params.size() > 0xffffffffu) throw UsageError("too many parameters");
  append_u32(out, static_cast<std::uint32_t>(params.size()));
  for (const auto& e : params.entries()) {
    append_string(out, e.name);
    if (e.value.rank() > 0xff) throw UsageError("parameter rank too large");
    append_u8(out, static_cast<std::uint8_t>(e.value.rank()));
    for (std::size_t ext : e.value.shape()) {
      if (ext > 0xffffffffu) throw UsageError("parameter extent too large");
      append_u32(out, static_cast<std::uint32_t>(ext));
    }
    for (std::size_t i = 0; i < e.value.size(); ++i) append_f32(out, e.value[i]);
  }
  return out;
}

Checkpoint decode_checkpoint(std::string_view bytes) {
  Reader r(bytes);

  const std::string_view magic = r.bytes(4, "magic");
  if (std::memcmp(magic.data(), kMagic, 4) != 0) {
    throw FormatError("bad magic, not a checkpoint", 0);
  }
  const std::size_t version_at = r.pos();
  const std::uint32_t version = r.u32("format version");
  if (version != kCheckpointVersion) {
    throw FormatError("unsupported format version " + std::to_string(version), version_at);
  }

  const std::size_t config_at = r.pos();
  const std::uint32_t config_len = r.u32("config length");
  const std::string config_text(r.bytes(config_len, "config text"));
  Checkpoint ck;
  try {
    ck.config = parse_network_config_text(config_text);
  } catch (const std::exception& e) {
    throw FormatError(std::string("embedded config rejected: ") + e.what(), config_at);
  }

  const auto plan = plan_parameters(ck.config);
  const std::size_t count_at = r.pos();
  const std::uint32_t count = r.u32("parameter count");
  if (count != plan.size()) {
    throw FormatError("parameter count " + std::to_string(count) + " does not match the config's " +
                          std::to_string(plan.size()),
                      count_at);
  }

  for (std::size_t pi = 0; pi < count; ++pi) {
    const std::size_t entry_at = r.pos();
    const std::uint32_t name_len = r.u32("parameter name length");
    const std::string name(r.bytes(name_len, "parameter name"));
    if (name != plan[pi].first) {
      throw FormatError("parameter " + std::to_string(pi) + " is '" + name + "', expected '" +
                            plan[pi].first + "'",
                        entry_at);
    }
    const std::uint8_t rank = r.u8("parameter rank");
    Shape shape;
    for (std::uint8_t d = 0; d < rank; ++d) {
      const std::size_t ext_at = r.pos();
      const std::uint32_t ext = r.u32("extent");
      if (ext == 0) throw FormatError("zero extent in '" + name + "'", ext_at);
      shape.push_back(ext);
    }
    if (shape != plan[pi].second) {
      throw FormatError("parameter '" + name + "' has shape " + shape_str(shape) + ", expected " +
                            shape_str(plan[pi].second),
                        entry_at);
    }
    const std::size_t volume = shape_volume(shape);
    r.need(volume * 4, "parameter values");
    std::vector<float> values(volume);
    for (std::size_t i = 0; i < volume; ++i) values[i] = r.f32("parameter values");
    ck.params.add(name, Tensor(shape, values));
  }

  if (!r.done()) {
    throw FormatError("trailing bytes after the last parameter", r.pos());
  }
  return ck;
}

void save_checkpoint(const std::string& path, const NetworkConfig& cfg,
                     const ParameterStore& params) {
  const std::string blob = encode_checkpoint(cfg, params);
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open '" + tmp + "' for writing");
    out.write(blob.data(), static_cast<std::streamsize>(blob.size()));
    if (!out) throw IoError("short write to '" + tmp + "'");
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0) {
    std::remove(tmp.c_str());
    throw IoError("cannot rename '" + tmp + "' to '" + path + "'");
  }
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint '" + path + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return decode_checkpoint(buf.str());
}

}  // namespace pnet
