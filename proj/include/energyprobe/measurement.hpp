#pragma once

#include <cstdint>
#include <map>
#include <string>

#include "energyprobe/probe.hpp"

namespace energyprobe {

/// Finalized result of one or more tracked intervals.
struct Measurement {
  std::string label;
  std::int64_t wall_start_ms = 0;
  /// Exact sum of the monotonic interval spans.
  std::int64_t duration_ns = 0;
  /// Channel id to summed corrected deltas, one entry per tracked channel.
  std::map<std::string, Microjoules> energy;
  bool degraded_gpu = false;

  /// Whole milliseconds, rounded up so any tracked span reports at least 1.
  std::int64_t duration_ms() const noexcept { return (duration_ns + 999'999) / 1'000'000; }

  friend bool operator==(const Measurement&, const Measurement&) = default;
};

}  // namespace energyprobe
