// energyprobe: command-line front end for host energy measurement.
//
// Exit codes:
//   0    success
//   2    host unsupported (no readable powercap tree)
//   3    CSV output error (schema clash or unwritable file)
//   4    input error (usage, unreadable or malformed CSV, row/column mismatch)
//   5    degenerate statistics (all paired differences zero)
//   127  the wrapped command could not be spawned
//   otherwise, `measure` passes through the wrapped command's exit status
//   (128 + signal number when it was killed by a signal)

#include <poll.h>
#include <signal.h>
#include <spawn.h>
#include <sys/syscall.h>
#include <sys/wait.h>
#include <unistd.h>

#include <CLI11.hpp>
#include <cerrno>
#include <chrono>
#include <cstring>
#include <iostream>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "energyprobe/energyprobe.hpp"

extern char** environ;

namespace ep = energyprobe;

namespace {

enum Exit : int {
  kOk = 0,
  kUnsupported = 2,
  kOutput = 3,
  kInput = 4,
  kDegenerate = 5,
  kSpawn = 127,
};

int exit_for(const ep::Error& e) {
  switch (e.code()) {
    case ep::Errc::unsupported_host:
    case ep::Errc::permission_denied:
    case ep::Errc::backend_unavailable:
      return kUnsupported;
    case ep::Errc::schema:
    case ep::Errc::io:
      return kOutput;
    case ep::Errc::zero_variance:
      return kDegenerate;
    default:
      return kInput;
  }
}

void print_report(const ep::SupportReport& report, std::ostream& os) {
  if (report.supported()) {
    os << "cpu: supported\nroot: " << report.root << "\n";
  } else {
    os << "cpu: unsupported (" << ep::to_string(report.status) << ")\n"
              << "reason: " << report.message << "\n";
  }
}

int cmd_check() {
  const ep::PowercapProbe cpu;
  const auto report = cpu.support();
  print_report(report, std::cout);
  if (report.supported()) {
    for (const auto& ch : cpu.discover()) std::cout << "zone: " << ch.id << "\n";
  }
  const ep::GpuProbe gpu(ep::default_gpu_driver());
  if (gpu.degraded()) {
    std::cout << "gpu: unavailable\n";
  } else {
    std::cout << "gpu: " << gpu.discover().size() << " device(s)\n";
  }
  return report.supported() ? kOk : kUnsupported;
}

int cmd_list() {
  const ep::EnergyTracker tracker;
  for (const auto& ch : tracker.channels()) {
    std::cout << ch.id << '\t' << ch.name << '\t' << ep::to_string(ch.kind) << '\t'
              << ch.max_energy_range << '\n';
  }
  if (tracker.degraded_gpu()) std::cerr << "gpu: unavailable\n";
  return kOk;
}

struct MeasureArgs {
  std::string tag;
  std::string out;
  unsigned reps = 1;
  double idle = 0.0;
  unsigned checkpoint_ms = 1000;
  std::vector<std::string> command;
};

int decode_status(int status) {
  if (WIFEXITED(status)) return WEXITSTATUS(status);
  if (WIFSIGNALED(status)) return 128 + WTERMSIG(status);
  return kInput;
}

// Waits for `pid`, checkpointing the tracker every `period` while it runs.
// Waiting and checkpointing share this one thread.
int wait_with_checkpoints(pid_t pid, ep::EnergyTracker& tracker,
                          std::chrono::milliseconds period) {
  using clock = std::chrono::steady_clock;
  auto next = clock::now() + period;
  const int pidfd = period.count() > 0 ? static_cast<int>(::syscall(SYS_pidfd_open, pid, 0)) : -1;
  int status = 0;
  if (period.count() == 0) {
    while (::waitpid(pid, &status, 0) < 0 && errno == EINTR) {
    }
    return decode_status(status);
  }
  for (;;) {
    const auto now = clock::now();
    if (now >= next) {
      tracker.checkpoint();
      next += period;
      continue;
    }
    const auto remaining =
        std::chrono::duration_cast<std::chrono::milliseconds>(next - now).count() + 1;
    if (pidfd >= 0) {
      pollfd pfd{pidfd, POLLIN, 0};
      const int rc = ::poll(&pfd, 1, static_cast<int>(remaining));
      if (rc < 0 && errno != EINTR) break;
      if (rc > 0) break;
    } else {
      const pid_t r = ::waitpid(pid, &status, WNOHANG);
      if (r == pid) return decode_status(status);
      std::this_thread::sleep_for(std::chrono::milliseconds(std::min<long long>(remaining, 1)));
    }
  }
  if (pidfd >= 0) ::close(pidfd);
  while (::waitpid(pid, &status, 0) < 0 && errno == EINTR) {
  }
  return decode_status(status);
}

int cmd_measure(const MeasureArgs& args) {
  if (args.command.empty()) {
    std::cerr << "measure: no command given (use -- <command> [args...])\n";
    return kInput;
  }
  ep::RepetitionPlan plan{args.reps, args.idle, args.tag};
  plan.validate();
  if (plan.label.empty()) plan.label = args.command.front();

  ep::EnergyTracker tracker(plan.label);
  std::vector<char*> argv;
  for (const auto& a : args.command) argv.push_back(const_cast<char*>(a.c_str()));
  argv.push_back(nullptr);

  int child_exit = 0;
  std::optional<ep::Measurement> last;
  for (unsigned rep = 0; rep < plan.repetitions; ++rep) {
    if (rep > 0) ep::sleep_for_real(std::chrono::duration<double>(plan.idle_seconds));
    tracker.reset();
    tracker.start();
    pid_t pid = 0;
    const int rc = ::posix_spawnp(&pid, argv[0], nullptr, nullptr, argv.data(), environ);
    if (rc != 0) {
      std::cerr << "measure: cannot run '" << args.command.front() << "': " << std::strerror(rc)
                << "\n";
      return kSpawn;
    }
    child_exit = wait_with_checkpoints(pid, tracker, std::chrono::milliseconds(args.checkpoint_ms));
    tracker.stop();
    last = tracker.calculate_energy();
    if (!args.out.empty()) ep::save_csv(*last, args.out);
  }
  ep::print_energy(*last, std::cout);
  return child_exit;
}

struct CompareArgs {
  std::string file_a;
  std::string file_b;
  std::string column;
};

std::vector<double> column_values(const ep::CsvTable& t, std::size_t col) {
  std::vector<double> out;
  const bool joules = t.header[col].ends_with(ep::kJouleSuffix);
  for (const auto& row : t.rows) {
    if (joules) {
      out.push_back(static_cast<double>(ep::parse_joules(row[col])) / 1e6);
    } else {
      const auto v = ep::detail::parse_u64(row[col]);
      if (!v) throw ep::Error(ep::Errc::parse_error, "invalid value '" + row[col] + "'");
      out.push_back(static_cast<double>(*v));
    }
  }
  return out;
}

int cmd_compare(const CompareArgs& args) {
  ep::CsvTable a;
  ep::CsvTable b;
  try {
    a = ep::read_csv_file(args.file_a);
    b = ep::read_csv_file(args.file_b);
    ep::parse_measurements(a);
    ep::parse_measurements(b);
  } catch (const ep::Error& e) {
    std::cerr << "compare: " << e.detail() << "\n";
    return kInput;
  }
  if (a.header != b.header) {
    std::cerr << "compare: " << args.file_a << " and " << args.file_b
              << " have different columns\n";
    return kOutput;
  }
  if (a.rows.size() != b.rows.size()) {
    std::cerr << "compare: row counts differ (" << a.rows.size() << " vs " << b.rows.size()
              << ")\n";
    return kInput;
  }
  if (a.rows.empty()) {
    std::cerr << "compare: no data rows\n";
    return kInput;
  }

  std::vector<std::size_t> columns;
  if (args.column.empty()) {
    for (std::size_t i = 2; i < a.header.size(); ++i) columns.push_back(i);
  } else {
    auto idx = a.column(args.column);
    if (idx < 0) idx = a.column(args.column + std::string(ep::kJouleSuffix));
    if (idx < 2) {
      std::cerr << "compare: unknown metric column '" << args.column << "'\n";
      return kInput;
    }
    columns.push_back(static_cast<std::size_t>(idx));
  }

  std::vector<ep::SummaryRow> rows;
  bool degenerate = false;
  for (const auto col : columns) {
    const auto va = column_values(a, col);
    const auto vb = column_values(b, col);
    ep::SummaryRow row{a.rows.front()[0], a.header[col], ep::mean(va), ep::mean(vb), {}};
    try {
      row.p_value = ep::wilcoxon_signed_rank(va, vb).p_value;
    } catch (const ep::Error& e) {
      if (e.code() != ep::Errc::zero_variance) throw;
      std::cerr << "compare: " << a.header[col]
                << ": every paired difference is zero, the signed-rank test is undefined\n";
      degenerate = true;
    }
    rows.push_back(std::move(row));
  }
  std::cout << ep::format_summary_table(rows);
  return degenerate ? kDegenerate : kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Measure host energy (Intel RAPL via powercap, NVIDIA GPUs) of commands"};
  app.require_subcommand(1);

  app.add_subcommand("check", "Report whether this host exposes readable energy counters");
  app.add_subcommand("list", "List the energy channels this host exposes");

  MeasureArgs margs;
  auto* measure = app.add_subcommand(
      "measure",
      "Run a command and report the energy the whole system consumed while it ran. "
      "Counters are system-wide: energy is not attributed to the child process alone.");
  measure->add_option("-t,--tag", margs.tag, "Label for the CSV rows (default: command name)");
  measure->add_option("-o,--out", margs.out, "Append one CSV row per repetition to this file");
  measure->add_option("-r,--reps", margs.reps, "Number of repetitions")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  measure->add_option("-i,--idle", margs.idle, "Idle seconds between repetitions")
      ->check(CLI::NonNegativeNumber)
      ->capture_default_str();
  measure
      ->add_option("-c,--checkpoint-ms", margs.checkpoint_ms,
                   "Split long runs into intervals of this many ms to bound counter wrap "
                   "(0 disables)")
      ->capture_default_str();
  measure->add_option("command", margs.command, "Command to run, after --")->required();

  CompareArgs cargs;
  auto* compare =
      app.add_subcommand("compare", "Compare two result CSVs with the Wilcoxon signed-rank test");
  compare->add_option("file_a", cargs.file_a)->required();
  compare->add_option("file_b", cargs.file_b)->required();
  compare->add_option("-c,--column", cargs.column,
                      "Metric column (header name or channel id); default: all metrics");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kInput;
  }

  try {
    if (app.got_subcommand("check")) return cmd_check();
    if (app.got_subcommand("list")) return cmd_list();
    if (measure->parsed()) return cmd_measure(margs);
    if (compare->parsed()) return cmd_compare(cargs);
  } catch (const ep::UnsupportedHostError& e) {
    print_report(e.report(), std::cerr);
    return kUnsupported;
  } catch (const ep::Error& e) {
    std::cerr << "energyprobe: " << e.what() << "\n";
    return exit_for(e);
  } catch (const std::exception& e) {
    std::cerr << "energyprobe: " << e.what() << "\n";
    return kInput;
  }
  return kInput;
}
