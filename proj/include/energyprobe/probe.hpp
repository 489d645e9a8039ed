#pragma once

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdint>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "energyprobe/error.hpp"

namespace energyprobe {

/// Energy in microjoules. All internal arithmetic stays in this unit; joules
/// only appear at report edges.
using Microjoules = std::uint64_t;

inline constexpr Microjoules kMaxMicrojoules = ~Microjoules{0};

enum class ChannelKind { cpu_domain, cpu_subdomain, gpu };

constexpr std::string_view to_string(ChannelKind kind) noexcept {
  switch (kind) {
    case ChannelKind::cpu_domain: return "cpu-domain";
    case ChannelKind::cpu_subdomain: return "cpu-subdomain";
    case ChannelKind::gpu: return "gpu";
  }
  return "?";
}

/// One measurable energy counter: a CPU power domain on a socket or a GPU.
/// The counter wraps to 0 after reaching max_energy_range.
struct Channel {
  std::string id;
  std::string name;
  Microjoules max_energy_range = 0;
  ChannelKind kind = ChannelKind::cpu_domain;

  friend bool operator==(const Channel&, const Channel&) = default;
};

struct CounterSample {
  std::string channel;
  Microjoules raw_energy = 0;
  std::int64_t mono_time_ns = 0;
};

// Channel identifiers, used verbatim as CSV column stems.
inline std::string cpu_channel_id(unsigned socket, std::string_view domain) {
  return "cpu:" + std::to_string(socket) + ":" + std::string(domain);
}

inline std::string cpu_channel_id(unsigned socket, std::string_view domain,
                                  std::string_view sub) {
  return cpu_channel_id(socket, domain) + ":" + std::string(sub);
}

inline std::string gpu_channel_id(unsigned index) { return "gpu:" + std::to_string(index); }

inline void sort_channels(std::vector<Channel>& channels) {
  std::sort(channels.begin(), channels.end(),
            [](const Channel& a, const Channel& b) { return a.id < b.id; });
}

/// Process-wide monotonic nanosecond clock that never returns the same value
/// twice, so every interval closed after it was opened has a positive span.
inline std::int64_t monotonic_ns() {
  static std::atomic<std::int64_t> last{0};
  const std::int64_t now = std::chrono::duration_cast<std::chrono::nanoseconds>(
                               std::chrono::steady_clock::now().time_since_epoch())
                               .count();
  std::int64_t prev = last.load(std::memory_order_relaxed);
  std::int64_t next = 0;
  do {
    next = std::max(now, prev + 1);
  } while (!last.compare_exchange_weak(prev, next, std::memory_order_relaxed));
  return next;
}

inline std::int64_t wall_clock_ms() {
  return std::chrono::duration_cast<std::chrono::milliseconds>(
             std::chrono::system_clock::now().time_since_epoch())
      .count();
}

/// Energy consumed between two readings of a counter with period
/// max_energy_range. At most one wrap is assumed between the readings; an
/// interval spanning several wraps under-reports.
inline Microjoules corrected_delta(Microjoules start, Microjoules end,
                                   Microjoules max_energy_range) {
  if (max_energy_range == 0) {
    throw Error(Errc::corrupt_counter, "max_energy_range is 0");
  }
  if (start > max_energy_range || end > max_energy_range) {
    throw Error(Errc::corrupt_counter,
                "sample (" + std::to_string(start) + ", " + std::to_string(end) +
                    ") exceeds range " + std::to_string(max_energy_range));
  }
  if (end >= start) return end - start;
  return end + (max_energy_range - start);
}

enum class SupportStatus { supported, absent, permission };

constexpr std::string_view to_string(SupportStatus s) noexcept {
  switch (s) {
    case SupportStatus::supported: return "supported";
    case SupportStatus::absent: return "absent";
    case SupportStatus::permission: return "permission";
  }
  return "?";
}

struct SupportReport {
  SupportStatus status = SupportStatus::absent;
  std::string root;     // resolved directory holding the zones, when supported
  std::string message;  // human-actionable reason when not supported

  bool supported() const noexcept { return status == SupportStatus::supported; }
};

class UnsupportedHostError : public Error {
 public:
  explicit UnsupportedHostError(SupportReport report)
      : Error(Errc::unsupported_host, report.message), report_(std::move(report)) {}

  const SupportReport& report() const noexcept { return report_; }

 private:
  SupportReport report_;
};

/// A backend that exposes energy channels. Implementations are read-only
/// after construction and may be read from several threads at once.
class Probe {
 public:
  virtual ~Probe() = default;

  virtual SupportReport support() const {
    return {SupportStatus::supported, {}, {}};
  }

  /// All readable channels, sorted by id.
  virtual std::vector<Channel> discover() const = 0;

  /// Throws Errc::unknown_channel for ids not returned by discover().
  virtual CounterSample read(std::string_view channel_id) const = 0;
};

}  // namespace energyprobe
