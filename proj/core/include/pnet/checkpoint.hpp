#ifndef PNET_CHECKPOINT_HPP
#define PNET_CHECKPOINT_HPP

#include <string>
#include <string_view>

#include "pnet/network.hpp"

namespace pnet {

// Binary weight snapshot. Little-endian throughout:
//   magic "PNET", u32 format version,
//   u32 byte length + UTF-8 network config text,
//   u32 parameter count, then per parameter:
//     u32 byte length + name, u8 rank, rank x u32 extents,
//     f32 values in row-major order.
// Decode failures raise FormatError carrying the offending byte offset.

struct Checkpoint {
  NetworkConfig config;
  ParameterStore params;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

std::string encode_checkpoint(const NetworkConfig& cfg, const ParameterStore& params);
Checkpoint decode_checkpoint(std::string_view bytes);

// File wrappers; save writes a sibling temp file then renames over path.
void save_checkpoint(const std::string& path, const NetworkConfig& cfg, const ParameterStore& params);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace pnet

#endif
