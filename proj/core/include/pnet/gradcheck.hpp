#ifndef PNET_GRADCHECK_HPP
#define PNET_GRADCHECK_HPP

#include <cstdint>
#include <string>
#include <vector>

#include "pnet/network.hpp"

namespace pnet {

struct GradCheckEntry {
  std::string block;
  double max_rel_err = 0.0;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;

  double worst() const;
  std::vector<std::string> offenders(double tolerance) const;
  bool passed(double tolerance) const { return worst() < tolerance; }
};

// Central finite differences in double precision, step 1e-5, relative
// error |a - n| / max(|a|, |n|, floor). Covers each layer kernel in
// isolation and then the full pair network end to end, one entry per
// parameter block plus the two input images. `sabotage` mis-scales one
// backward formula so the check can prove it would catch a real bug.
GradCheckReport run_gradcheck(const NetworkConfig& cfg, std::uint64_t seed, bool sabotage = false);

std::string gradcheck_text(const GradCheckReport& report, double tolerance);

}  // namespace pnet

#endif
