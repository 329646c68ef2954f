#ifndef PNET_ERRORS_HPP
#define PNET_ERRORS_HPP

#include <stdexcept>
#include <string>

namespace pnet {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Tensor extents disagree with what an operation requires.
struct ShapeError : Error {
  using Error::Error;
};

// A scalar argument is outside its documented domain.
struct ArgumentError : Error {
  using Error::Error;
};

// Config file or derived layer plan is invalid.
struct ConfigError : Error {
  using Error::Error;
};

// Binary or text payload does not match its format contract.
// Carries the byte offset at which decoding failed.
struct FormatError : Error {
  FormatError(const std::string& what, std::size_t offset)
      : Error(what + " (at byte " + std::to_string(offset) + ")"), byte_offset(offset) {}
  explicit FormatError(const std::string& what) : Error(what), byte_offset(0) {}
  std::size_t byte_offset;
};

struct IoError : Error {
  using Error::Error;
};

// Dataset cannot satisfy a sampling request.
struct SamplingError : Error {
  using Error::Error;
};

// Evaluation protocol preconditions violated (gallery composition etc).
struct ProtocolError : Error {
  using Error::Error;
};

// NaN/Inf surfaced where finite values are required.
struct NumericError : Error {
  using Error::Error;
};

// API misuse: stale cache, missing state, wrong call order.
struct UsageError : Error {
  using Error::Error;
};

}  // namespace pnet

#endif
