#pragma once

// Test-only helpers: temporary powercap trees and subprocess runners.

#include <fcntl.h>
#include <grp.h>
#include <sys/stat.h>
#include <sys/wait.h>
#include <unistd.h>

#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

extern char** environ;

namespace fixture {

namespace fs = std::filesystem;

inline constexpr std::uint64_t kRaplRange = 262143328850ULL;

class TempDir {
 public:
  TempDir() {
    std::string tmpl = (fs::temp_directory_path() / "energyprobe-XXXXXX").string();
    if (::mkdtemp(tmpl.data()) == nullptr) throw std::runtime_error("mkdtemp failed");
    path_ = tmpl;
    // Traversable by the unprivileged user used in permission tests.
    fs::permissions(path_, fs::perms::owner_all | fs::perms::group_read | fs::perms::group_exec |
                               fs::perms::others_read | fs::perms::others_exec);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const fs::path& path() const noexcept { return path_; }

 private:
  fs::path path_;
};

inline void write_file(const fs::path& p, const std::string& content) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + p.string());
  out << content;
}

inline std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

/// Builds <root>/intel-rapl:N[/intel-rapl:N:M] trees with name, energy_uj and
/// max_energy_range_uj files. Files are world-readable.
class PowercapTree {
 public:
  PowercapTree() : root_(dir_.path() / "powercap") { fs::create_directory(root_); }

  const fs::path& root() const noexcept { return root_; }

  fs::path zone_dir(unsigned n) const { return root_ / ("intel-rapl:" + std::to_string(n)); }

  fs::path subzone_dir(unsigned n, unsigned m) const {
    return zone_dir(n) / ("intel-rapl:" + std::to_string(n) + ":" + std::to_string(m));
  }

  PowercapTree& zone(unsigned n, const std::string& name, std::uint64_t energy,
                     std::uint64_t range = kRaplRange) {
    populate(zone_dir(n), name, energy, range);
    return *this;
  }

  PowercapTree& subzone(unsigned n, unsigned m, const std::string& name, std::uint64_t energy,
                        std::uint64_t range = kRaplRange) {
    populate(subzone_dir(n, m), name, energy, range);
    return *this;
  }

  void set_energy(unsigned n, std::uint64_t energy) {
    write_file(zone_dir(n) / "energy_uj", std::to_string(energy) + "\n");
  }

  void set_energy(unsigned n, unsigned m, std::uint64_t energy) {
    write_file(subzone_dir(n, m) / "energy_uj", std::to_string(energy) + "\n");
  }

  /// Scratch space next to the tree for CSVs and scripts.
  fs::path scratch(const std::string& name) const { return dir_.path() / name; }

 private:
  static void populate(const fs::path& dir, const std::string& name, std::uint64_t energy,
                       std::uint64_t range) {
    fs::create_directories(dir);
    const auto rx = fs::perms::owner_all | fs::perms::group_read | fs::perms::group_exec |
                    fs::perms::others_read | fs::perms::others_exec;
    fs::permissions(dir, rx);
    write_file(dir / "name", name + "\n");
    write_file(dir / "energy_uj", std::to_string(energy) + "\n");
    write_file(dir / "max_energy_range_uj", std::to_string(range) + "\n");
    for (const char* f : {"name", "energy_uj", "max_energy_range_uj"}) {
      fs::permissions(dir / f, fs::perms::owner_read | fs::perms::owner_write |
                                   fs::perms::group_read | fs::perms::others_read);
    }
  }

  TempDir dir_;
  fs::path root_;
};

inline constexpr uid_t kNobody = 65534;

// Root reads files regardless of mode bits, so permission tests run their
// body in a child that has dropped to an unprivileged uid.
inline void drop_privileges_if_root() {
  if (::geteuid() != 0) return;
  ::setgroups(0, nullptr);
  if (::setgid(kNobody) != 0 || ::setuid(kNobody) != 0) ::_exit(99);
}

/// Runs `body` in a forked, unprivileged child and returns its exit code.
inline int run_unprivileged(const std::function<int()>& body) {
  const pid_t pid = ::fork();
  if (pid < 0) throw std::runtime_error("fork failed");
  if (pid == 0) {
    drop_privileges_if_root();
    int code = 98;
    try {
      code = body();
    } catch (...) {
      code = 97;
    }
    ::_exit(code);
  }
  int status = 0;
  ::waitpid(pid, &status, 0);
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

struct CommandResult {
  int exit_code = -1;
  std::string out;
  std::string err;
};

/// Runs argv with extra environment variables (an empty value unsets the
/// variable), capturing stdout and stderr.
inline CommandResult run_command(const std::vector<std::string>& argv,
                                 const std::map<std::string, std::string>& env = {},
                                 bool unprivileged = false) {
  TempDir capture;
  const auto out_path = capture.path() / "stdout";
  const auto err_path = capture.path() / "stderr";

  std::vector<std::string> env_strings;
  for (char** e = environ; *e != nullptr; ++e) {
    std::string kv = *e;
    const auto key = kv.substr(0, kv.find('='));
    if (env.count(key) == 0) env_strings.push_back(kv);
  }
  for (const auto& [k, v] : env) {
    if (!v.empty()) env_strings.push_back(k + "=" + v);
  }
  std::vector<char*> envp;
  for (auto& s : env_strings) envp.push_back(s.data());
  envp.push_back(nullptr);
  std::vector<std::string> args = argv;
  std::vector<char*> cargv;
  for (auto& a : args) cargv.push_back(a.data());
  cargv.push_back(nullptr);

  const pid_t pid = ::fork();
  if (pid < 0) throw std::runtime_error("fork failed");
  if (pid == 0) {
    const int o = ::open(out_path.c_str(), O_WRONLY | O_CREAT | O_TRUNC, 0644);
    const int e = ::open(err_path.c_str(), O_WRONLY | O_CREAT | O_TRUNC, 0644);
    if (o < 0 || e < 0) ::_exit(96);
    ::dup2(o, 1);
    ::dup2(e, 2);
    if (unprivileged) drop_privileges_if_root();
    ::execve(cargv[0], cargv.data(), envp.data());
    ::_exit(95);
  }
  int status = 0;
  ::waitpid(pid, &status, 0);
  CommandResult r;
  r.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : 128 + WTERMSIG(status);
  r.out = read_file(out_path);
  r.err = read_file(err_path);
  return r;
}

}  // namespace fixture
