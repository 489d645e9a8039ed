#pragma once

#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <charconv>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include "energyprobe/probe.hpp"

namespace energyprobe {

inline constexpr std::string_view kDefaultPowercapRoot = "/sys/class/powercap";
inline constexpr const char* kPowercapRootEnv = "ENERGY_PROBE_ROOT";

/// ENERGY_PROBE_ROOT when set and non-empty, else the kernel's sysfs tree.
inline std::filesystem::path default_powercap_root() {
  if (const char* env = std::getenv(kPowercapRootEnv); env != nullptr && *env != '\0') {
    return env;
  }
  return std::filesystem::path(kDefaultPowercapRoot);
}

struct PowercapZone {
  std::filesystem::path dir_path;
  std::string zone_id;  // "N" or "N:M"
  unsigned socket = 0;
  std::string name;
  Microjoules max_energy_range = 0;
  bool is_subzone = false;
  std::string channel_id;
};

namespace detail {

inline std::string permission_hint(const std::filesystem::path& path) {
  return "cannot read " + path.string() +
         "; energy counters need elevated read access to /sys/class/powercap "
         "(run as root or grant read permission on the energy_uj files)";
}

// Reads a whole small file. errno is mapped onto the library's codes.
inline std::string read_small_file(const std::filesystem::path& path) {
  const int fd = ::open(path.c_str(), O_RDONLY | O_CLOEXEC);
  if (fd < 0) {
    const int err = errno;
    if (err == EACCES || err == EPERM) {
      throw Error(Errc::permission_denied, permission_hint(path));
    }
    throw Error(Errc::read_failure, path.string() + ": " + std::strerror(err));
  }
  std::string out;
  char buf[256];
  for (;;) {
    const ssize_t n = ::read(fd, buf, sizeof buf);
    if (n < 0) {
      if (errno == EINTR) continue;
      const int err = errno;
      ::close(fd);
      if (err == EACCES || err == EPERM) {
        throw Error(Errc::permission_denied, permission_hint(path));
      }
      throw Error(Errc::read_failure, path.string() + ": " + std::strerror(err));
    }
    if (n == 0) break;
    out.append(buf, static_cast<std::size_t>(n));
  }
  ::close(fd);
  return out;
}

inline std::string_view trim(std::string_view s) {
  constexpr std::string_view ws = " \t\r\n\v\f";
  const auto b = s.find_first_not_of(ws);
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(ws);
  return s.substr(b, e - b + 1);
}

inline std::optional<std::uint64_t> parse_u64(std::string_view text) {
  if (text.empty()) return std::nullopt;
  std::uint64_t value = 0;
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (ec != std::errc{} || ptr != text.data() + text.size()) return std::nullopt;
  return value;
}

inline std::uint64_t read_u64_file(const std::filesystem::path& path) {
  const std::string raw = read_small_file(path);
  auto value = parse_u64(trim(raw));
  if (!value) {
    throw Error(Errc::parse_error, path.string() + ": expected an unsigned integer, got '" +
                                       std::string(trim(raw)) + "'");
  }
  return *value;
}

inline std::string read_name_file(const std::filesystem::path& path) {
  const std::string raw = read_small_file(path);
  std::string_view name = trim(raw);
  if (name.empty() || name.find_first_of(":,\n\r\t ") != std::string_view::npos) {
    throw Error(Errc::parse_error, path.string() + ": invalid zone name '" +
                                       std::string(name) + "'");
  }
  return std::string(name);
}

struct ZoneDirName {
  bool mmio = false;
  std::vector<unsigned> parts;  // numeric suffix, e.g. {0, 1} for intel-rapl:0:1
};

// Matches intel-rapl:<N>[:<M>...] and its intel-rapl-mmio variant. Entries
// without a numeric suffix (the bare "intel-rapl" control directory) and
// unrelated entries yield nullopt.
inline std::optional<ZoneDirName> parse_zone_dir_name(std::string_view entry,
                                                      const std::filesystem::path& full) {
  const auto colon = entry.find(':');
  if (colon == std::string_view::npos) return std::nullopt;
  const std::string_view prefix = entry.substr(0, colon);
  if (prefix.rfind("intel-rapl", 0) != 0) return std::nullopt;
  ZoneDirName out;
  out.mmio = prefix != "intel-rapl";
  std::string_view rest = entry.substr(colon + 1);
  for (;;) {
    const auto next = rest.find(':');
    const auto part = parse_u64(rest.substr(0, next));
    if (!part || *part > 0xFFFFFFFFu) {
      throw Error(Errc::parse_error, full.string() + ": malformed zone id '" +
                                         std::string(entry.substr(colon + 1)) + "'");
    }
    out.parts.push_back(static_cast<unsigned>(*part));
    if (next == std::string_view::npos) break;
    rest = rest.substr(next + 1);
  }
  return out;
}

struct ZoneDir {
  std::filesystem::path path;
  ZoneDirName parsed;
};

// Zone directories directly under `dir` whose suffix has `depth` parts.
// Entries with more parts than `max_depth` are rejected.
inline std::vector<ZoneDir> list_zone_dirs(const std::filesystem::path& dir, std::size_t depth,
                                           std::size_t max_depth) {
  std::vector<ZoneDir> out;
  std::error_code ec;
  std::filesystem::directory_iterator it(dir, ec);
  if (ec) {
    if (ec == std::errc::permission_denied) {
      throw Error(Errc::permission_denied, permission_hint(dir));
    }
    throw Error(Errc::read_failure, dir.string() + ": " + ec.message());
  }
  for (const auto& entry : it) {
    const std::string fname = entry.path().filename().string();
    auto parsed = parse_zone_dir_name(fname, entry.path());
    if (!parsed) continue;
    if (parsed->parts.size() > max_depth) {
      throw Error(Errc::parse_error, entry.path().string() +
                                         ": zone nesting deeper than zone/subzone is not supported");
    }
    if (parsed->parts.size() != depth) continue;
    if (!entry.is_directory()) continue;
    out.push_back({entry.path(), std::move(*parsed)});
  }
  std::sort(out.begin(), out.end(),
            [](const ZoneDir& a, const ZoneDir& b) { return a.path < b.path; });
  return out;
}

inline std::string zone_id_string(const std::vector<unsigned>& parts) {
  std::string s;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    if (i) s += ':';
    s += std::to_string(parts[i]);
  }
  return s;
}

}  // namespace detail

/// Verifies that `root` holds a readable RAPL powercap tree. Never throws;
/// every failure mode is encoded in the report.
inline SupportReport check_support(const std::filesystem::path& root) {
  SupportReport report;
  std::error_code ec;
  if (!std::filesystem::is_directory(root, ec)) {
    report.status = SupportStatus::absent;
    report.message = "powercap directory " + root.string() +
                     " not found; this host does not expose Intel RAPL energy counters";
    return report;
  }
  try {
    const auto zones = detail::list_zone_dirs(root, 1, 2);
    if (zones.empty()) {
      report.status = SupportStatus::absent;
      report.message = "no intel-rapl zones under " + root.string() +
                       "; this host does not expose Intel RAPL energy counters";
      return report;
    }
    std::vector<std::filesystem::path> dirs;
    for (const auto& z : zones) {
      dirs.push_back(z.path);
      for (const auto& sub : detail::list_zone_dirs(z.path, 2, 2)) dirs.push_back(sub.path);
    }
    for (const auto& dir : dirs) {
      for (const char* file : {"name", "energy_uj", "max_energy_range_uj"}) {
        const auto path = dir / file;
        if (!std::filesystem::exists(path, ec)) {
          report.status = SupportStatus::absent;
          report.message = "missing " + path.string();
          return report;
        }
        detail::read_small_file(path);
      }
    }
  } catch (const Error& e) {
    report.status =
        e.code() == Errc::permission_denied ? SupportStatus::permission : SupportStatus::absent;
    report.message = e.detail();
    return report;
  }
  report.status = SupportStatus::supported;
  report.root = root.string();
  return report;
}

/// Every zone and subzone under `root`, sorted by channel id. An mmio zone
/// whose channel id duplicates an MSR zone is dropped (same counter, two
/// interfaces).
inline std::vector<PowercapZone> scan_zones(const std::filesystem::path& root) {
  auto tops = detail::list_zone_dirs(root, 1, 2);
  std::stable_partition(tops.begin(), tops.end(),
                        [](const detail::ZoneDir& z) { return !z.parsed.mmio; });

  std::vector<PowercapZone> zones;
  std::map<std::string, std::filesystem::path> seen;
  auto add = [&](PowercapZone zone, bool mmio) {
    auto [it, inserted] = seen.emplace(zone.channel_id, zone.dir_path);
    if (!inserted) {
      if (mmio) return false;
      throw Error(Errc::parse_error, "zones " + it->second.string() + " and " +
                                         zone.dir_path.string() + " map to the same channel " +
                                         zone.channel_id);
    }
    zones.push_back(std::move(zone));
    return true;
  };

  for (const auto& top : tops) {
    PowercapZone zone;
    zone.dir_path = top.path;
    zone.zone_id = detail::zone_id_string(top.parsed.parts);
    zone.socket = top.parsed.parts[0];
    zone.name = detail::read_name_file(top.path / "name");
    zone.max_energy_range = detail::read_u64_file(top.path / "max_energy_range_uj");
    if (zone.max_energy_range == 0) {
      throw Error(Errc::parse_error, (top.path / "max_energy_range_uj").string() + ": range is 0");
    }
    zone.channel_id = cpu_channel_id(zone.socket, zone.name);
    const std::string parent_name = zone.name;
    const unsigned socket = zone.socket;
    if (!add(std::move(zone), top.parsed.mmio)) continue;

    for (const auto& sub : detail::list_zone_dirs(top.path, 2, 2)) {
      if (sub.parsed.parts[0] != socket) {
        throw Error(Errc::parse_error,
                    sub.path.string() + ": subzone socket does not match its parent");
      }
      // Anything nested below a subzone is rejected.
      detail::list_zone_dirs(sub.path, 3, 2);
      PowercapZone sz;
      sz.dir_path = sub.path;
      sz.zone_id = detail::zone_id_string(sub.parsed.parts);
      sz.socket = socket;
      sz.name = detail::read_name_file(sub.path / "name");
      sz.max_energy_range = detail::read_u64_file(sub.path / "max_energy_range_uj");
      if (sz.max_energy_range == 0) {
        throw Error(Errc::parse_error,
                    (sub.path / "max_energy_range_uj").string() + ": range is 0");
      }
      sz.is_subzone = true;
      sz.channel_id = cpu_channel_id(socket, parent_name, sz.name);
      add(std::move(sz), top.parsed.mmio);
    }
  }
  std::sort(zones.begin(), zones.end(), [](const PowercapZone& a, const PowercapZone& b) {
    return a.channel_id < b.channel_id;
  });
  return zones;
}

inline Channel to_channel(const PowercapZone& zone) {
  return {zone.channel_id, zone.name, zone.max_energy_range,
          zone.is_subzone ? ChannelKind::cpu_subdomain : ChannelKind::cpu_domain};
}

/// Channels for every zone under `root`. Requires check_support(root) to pass.
inline std::vector<Channel> discover_zones(const std::filesystem::path& root) {
  const auto report = check_support(root);
  if (!report.supported()) throw UnsupportedHostError(report);
  std::vector<Channel> out;
  for (const auto& z : scan_zones(root)) out.push_back(to_channel(z));
  return out;
}

/// Current counter value of one zone, bounded by its declared range.
inline Microjoules read_energy_uj(const PowercapZone& zone) {
  const Microjoules value = detail::read_u64_file(zone.dir_path / "energy_uj");
  if (value > zone.max_energy_range) {
    throw Error(Errc::corrupt_counter, (zone.dir_path / "energy_uj").string() + " holds " +
                                           std::to_string(value) + " above range " +
                                           std::to_string(zone.max_energy_range));
  }
  return value;
}

/// CPU energy channels backed by a powercap tree. Construction never throws
/// for an unsupported host; support() reports it and discover() refuses.
class PowercapProbe : public Probe {
 public:
  PowercapProbe() : PowercapProbe(default_powercap_root()) {}

  explicit PowercapProbe(std::filesystem::path root)
      : root_(std::move(root)), report_(check_support(root_)) {
    if (report_.supported()) {
      for (auto& z : scan_zones(root_)) {
        auto id = z.channel_id;
        channels_.push_back(to_channel(z));
        zones_.emplace(std::move(id), std::move(z));
      }
    }
  }

  const std::filesystem::path& root() const noexcept { return root_; }

  SupportReport support() const override { return report_; }

  std::vector<Channel> discover() const override {
    if (!report_.supported()) throw UnsupportedHostError(report_);
    return channels_;
  }

  CounterSample read(std::string_view channel_id) const override {
    auto it = zones_.find(channel_id);
    if (it == zones_.end()) throw Error(Errc::unknown_channel, std::string(channel_id));
    try {
      const Microjoules value = read_energy_uj(it->second);
      return {it->first, value, monotonic_ns()};
    } catch (const Error& e) {
      throw Error(e.code(), it->first + ": " + e.detail());
    }
  }

 private:
  std::filesystem::path root_;
  SupportReport report_;
  std::vector<Channel> channels_;
  std::map<std::string, PowercapZone, std::less<>> zones_;
};

}  // namespace energyprobe
