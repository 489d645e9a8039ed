#pragma once

#include <cinttypes>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "energyprobe/measurement.hpp"
#include "energyprobe/powercap.hpp"

// CSV schema:
//   label,wall_start_ms,duration_ms,<channel-id>_J,...
// Channel columns are sorted by id. Energies are joules with exactly six
// fractional digits (full microjoule precision). Lines end with '\n'.
//
// Subzone channels (e.g. cpu:0:package-0:core) are already included in their
// parent zone's counter; columns must not be summed across that hierarchy.

namespace energyprobe {

inline constexpr std::string_view kJouleSuffix = "_J";

/// Microjoules as joules with six fractional digits, without going through
/// floating point.
inline std::string format_joules(Microjoules uj) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%" PRIu64 ".%06" PRIu64, uj / 1'000'000, uj % 1'000'000);
  return buf;
}

/// Inverse of format_joules; accepts up to six fractional digits.
inline Microjoules parse_joules(std::string_view text) {
  const auto dot = text.find('.');
  const std::string_view whole = text.substr(0, dot);
  std::string_view frac = dot == std::string_view::npos ? std::string_view{} : text.substr(dot + 1);
  const auto w = detail::parse_u64(whole);
  if (!w || frac.size() > 6 || (dot != std::string_view::npos && frac.empty()) ||
      *w > kMaxMicrojoules / 1'000'000) {
    throw Error(Errc::parse_error, "invalid joule value '" + std::string(text) + "'");
  }
  std::string padded(frac);
  padded.resize(6, '0');
  const auto f = detail::parse_u64(padded);
  if (!f) throw Error(Errc::parse_error, "invalid joule value '" + std::string(text) + "'");
  return *w * 1'000'000 + *f;
}

namespace detail {

inline std::string csv_field(std::string_view s) {
  if (s.find_first_of(",\"\n\r") == std::string_view::npos) return std::string(s);
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  out += '"';
  return out;
}

}  // namespace detail

inline std::string csv_header(const Measurement& m) {
  std::string h = "label,wall_start_ms,duration_ms";
  for (const auto& [id, uj] : m.energy) {
    h += ',';
    h += id;
    h += kJouleSuffix;
  }
  return h;
}

inline std::string format_csv_row(const Measurement& m) {
  std::string row = detail::csv_field(m.label);
  row += ',' + std::to_string(m.wall_start_ms);
  row += ',' + std::to_string(m.duration_ms());
  for (const auto& [id, uj] : m.energy) row += ',' + format_joules(uj);
  return row;
}

/// Header plus one row per measurement. All measurements must share one
/// channel set.
inline std::string format_csv(std::span<const Measurement> measurements) {
  if (measurements.empty()) throw Error(Errc::schema, "no measurements to format");
  const std::string header = csv_header(measurements.front());
  std::string out = header + '\n';
  for (const auto& m : measurements) {
    if (csv_header(m) != header) {
      throw Error(Errc::schema, "measurement '" + m.label + "' has channels " + csv_header(m) +
                                    ", expected " + header);
    }
    out += format_csv_row(m);
    out += '\n';
  }
  return out;
}

/// Writes header and row to a new (or empty) file, or appends the row when the
/// file already starts with the same header. Existing bytes are never rewritten.
inline void save_csv(const Measurement& m, const std::filesystem::path& path) {
  std::error_code ec;
  const auto parent = path.has_parent_path() ? path.parent_path() : std::filesystem::path(".");
  if (!std::filesystem::is_directory(parent, ec)) {
    throw Error(Errc::io, path.string() + ": directory " + parent.string() + " does not exist");
  }
  const std::string header = csv_header(m);
  bool write_header = true;
  if (std::filesystem::exists(path, ec)) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(Errc::io, path.string() + ": cannot open for reading");
    std::string first;
    if (std::getline(in, first)) {
      if (first != header) {
        throw Error(Errc::schema, path.string() + ": existing header '" + first +
                                      "' does not match '" + header + "'");
      }
      write_header = false;
    }
    if (!write_header) {
      // A file cut off mid-line would merge the new row into the old one.
      in.clear();
      in.seekg(-1, std::ios::end);
      char last = 0;
      if (in.get(last) && last != '\n') {
        throw Error(Errc::schema, path.string() + ": does not end with a newline");
      }
    }
  }
  std::ofstream out(path, std::ios::binary | std::ios::app);
  if (!out) throw Error(Errc::io, path.string() + ": cannot open for writing");
  if (write_header) out << header << '\n';
  out << format_csv_row(m) << '\n';
  out.flush();
  if (!out) throw Error(Errc::io, path.string() + ": write failed");
}

/// Console block: one `<id> = <J> J` line per channel, the runtime, and a
/// `gpu: unavailable` line in degraded mode.
inline std::string format_energy(const Measurement& m) {
  std::string out;
  for (const auto& [id, uj] : m.energy) out += id + " = " + format_joules(uj) + " J\n";
  out += "runtime = " + std::to_string(m.duration_ms()) + " ms\n";
  if (m.degraded_gpu) out += "gpu: unavailable\n";
  return out;
}

inline void print_energy(const Measurement& m, std::ostream& os = std::cout) {
  os << format_energy(m);
}

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  /// Column index by name, or -1.
  std::ptrdiff_t column(std::string_view name) const {
    for (std::size_t i = 0; i < header.size(); ++i) {
      if (header[i] == name) return static_cast<std::ptrdiff_t>(i);
    }
    return -1;
  }
};

/// RFC 4180 style parser (quoted fields, doubled quotes). Every row must have
/// as many fields as the header.
inline CsvTable parse_csv(std::string_view text) {
  std::vector<std::vector<std::string>> records;
  std::vector<std::string> record;
  std::string field;
  bool quoted = false;
  bool field_started = false;
  for (std::size_t i = 0; i < text.size(); ++i) {
    const char c = text[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < text.size() && text[i + 1] == '"') {
          field += '"';
          ++i;
        } else {
          quoted = false;
        }
      } else {
        field += c;
      }
      continue;
    }
    switch (c) {
      case '"':
        if (!field.empty()) throw Error(Errc::parse_error, "stray quote in CSV field");
        quoted = true;
        field_started = true;
        break;
      case ',':
        record.push_back(std::move(field));
        field.clear();
        field_started = true;
        break;
      case '\r':
        break;
      case '\n':
        record.push_back(std::move(field));
        field.clear();
        records.push_back(std::move(record));
        record.clear();
        field_started = false;
        break;
      default:
        field += c;
        field_started = true;
    }
  }
  if (quoted) throw Error(Errc::parse_error, "unterminated quoted CSV field");
  if (field_started || !record.empty()) {
    record.push_back(std::move(field));
    records.push_back(std::move(record));
  }
  if (records.empty()) throw Error(Errc::parse_error, "empty CSV");
  CsvTable table;
  table.header = std::move(records.front());
  for (std::size_t r = 1; r < records.size(); ++r) {
    if (records[r].size() != table.header.size()) {
      throw Error(Errc::parse_error, "CSV row " + std::to_string(r + 1) + " has " +
                                         std::to_string(records[r].size()) + " fields, header has " +
                                         std::to_string(table.header.size()));
    }
    table.rows.push_back(std::move(records[r]));
  }
  return table;
}

inline CsvTable read_csv_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::io, path.string() + ": cannot open");
  std::ostringstream ss;
  ss << in.rdbuf();
  try {
    return parse_csv(ss.str());
  } catch (const Error& e) {
    throw Error(e.code(), path.string() + ": " + e.detail());
  }
}

/// Measurements back from a table in this module's schema. duration_ns is
/// reconstructed from whole milliseconds; degraded_gpu is not stored.
inline std::vector<Measurement> parse_measurements(const CsvTable& table) {
  const auto& h = table.header;
  if (h.size() < 3 || h[0] != "label" || h[1] != "wall_start_ms" || h[2] != "duration_ms") {
    throw Error(Errc::schema, "not an energy CSV header");
  }
  std::vector<std::string> ids;
  for (std::size_t i = 3; i < h.size(); ++i) {
    if (h[i].size() <= kJouleSuffix.size() || !h[i].ends_with(kJouleSuffix)) {
      throw Error(Errc::schema, "column '" + h[i] + "' is not a joule column");
    }
    ids.push_back(h[i].substr(0, h[i].size() - kJouleSuffix.size()));
  }
  std::vector<Measurement> out;
  for (const auto& row : table.rows) {
    Measurement m;
    m.label = row[0];
    const auto wall = detail::parse_u64(row[1]);
    const auto dur = detail::parse_u64(row[2]);
    if (!wall || !dur) throw Error(Errc::parse_error, "invalid metadata in row '" + row[0] + "'");
    m.wall_start_ms = static_cast<std::int64_t>(*wall);
    m.duration_ns = static_cast<std::int64_t>(*dur) * 1'000'000;
    for (std::size_t i = 0; i < ids.size(); ++i) m.energy.emplace(ids[i], parse_joules(row[i + 3]));
    out.push_back(std::move(m));
  }
  return out;
}

}  // namespace energyprobe
