#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace energyprobe {

enum class Errc {
  corrupt_counter,
  backend_unavailable,
  unknown_channel,
  read_failure,
  permission_denied,
  parse_error,
  unsupported_host,
  lifecycle,
  nothing_measured,
  clock,
  schema,
  io,
  domain,
  zero_variance,
  task_failed,
};

constexpr std::string_view to_string(Errc code) noexcept {
  switch (code) {
    case Errc::corrupt_counter: return "corrupt counter";
    case Errc::backend_unavailable: return "backend unavailable";
    case Errc::unknown_channel: return "unknown channel";
    case Errc::read_failure: return "read failure";
    case Errc::permission_denied: return "permission denied";
    case Errc::parse_error: return "parse error";
    case Errc::unsupported_host: return "unsupported host";
    case Errc::lifecycle: return "lifecycle violation";
    case Errc::nothing_measured: return "nothing measured";
    case Errc::clock: return "clock did not advance";
    case Errc::schema: return "schema mismatch";
    case Errc::io: return "i/o error";
    case Errc::domain: return "domain error";
    case Errc::zero_variance: return "zero variance";
    case Errc::task_failed: return "task failed";
  }
  return "unknown error";
}

// Every failure raised by the library carries one of the codes above so that
// front ends (the CLI exit-code table in particular) can classify it.
class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what),
        code_(code),
        detail_(what) {}

  Errc code() const noexcept { return code_; }

  /// The message without the code prefix.
  const std::string& detail() const noexcept { return detail_; }

 private:
  Errc code_;
  std::string detail_;
};

}  // namespace energyprobe
