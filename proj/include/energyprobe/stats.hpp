#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include "energyprobe/error.hpp"
#include "energyprobe/measurement.hpp"
#include "energyprobe/tracker.hpp"

namespace energyprobe {

// ---------------------------------------------------------------------------
// Repetition harness

struct RepetitionPlan {
  unsigned repetitions = 10;
  double idle_seconds = 30.0;
  std::string label;

  void validate() const {
    if (repetitions < 1) throw Error(Errc::domain, "repetitions must be at least 1");
    if (!(idle_seconds >= 0.0) || !std::isfinite(idle_seconds)) {
      throw Error(Errc::domain, "idle_seconds must be a finite non-negative number");
    }
  }
};

using Sleeper = std::function<void(std::chrono::duration<double>)>;
using TrackerFactory = std::function<EnergyTracker()>;

inline void sleep_for_real(std::chrono::duration<double> d) { std::this_thread::sleep_for(d); }

/// Raised when the measured task throws; carries the repetitions that
/// completed before it.
class RepetitionError : public Error {
 public:
  RepetitionError(const std::string& what, std::vector<Measurement> completed)
      : Error(Errc::task_failed, what), completed_(std::move(completed)) {}

  const std::vector<Measurement>& completed() const noexcept { return completed_; }

 private:
  std::vector<Measurement> completed_;
};

/// Runs `task` plan.repetitions times, each under a fresh tracker, idling
/// between runs (not after the last) so power tail states settle. Runs are
/// strictly sequential.
inline std::vector<Measurement> run_repetitions(const RepetitionPlan& plan,
                                                const std::function<void()>& task,
                                                const TrackerFactory& make_tracker,
                                                const Sleeper& sleep = sleep_for_real) {
  plan.validate();
  std::vector<Measurement> out;
  out.reserve(plan.repetitions);
  for (unsigned rep = 0; rep < plan.repetitions; ++rep) {
    if (rep > 0) sleep(std::chrono::duration<double>(plan.idle_seconds));
    EnergyTracker tracker = make_tracker();
    if (!plan.label.empty()) tracker.set_label(plan.label);
    tracker.start();
    try {
      task();
    } catch (const std::exception& e) {
      throw RepetitionError("repetition " + std::to_string(rep + 1) + " failed: " + e.what(),
                            std::move(out));
    } catch (...) {
      throw RepetitionError("repetition " + std::to_string(rep + 1) + " failed", std::move(out));
    }
    tracker.stop();
    out.push_back(tracker.calculate_energy());
  }
  return out;
}

// ---------------------------------------------------------------------------
// Statistics

/// Arithmetic mean, accumulated incrementally so identical inputs reproduce
/// themselves exactly.
inline double mean(std::span<const double> values) {
  if (values.empty()) throw Error(Errc::domain, "mean of an empty series");
  double m = 0.0;
  for (std::size_t i = 0; i < values.size(); ++i) {
    m += (values[i] - m) / static_cast<double>(i + 1);
  }
  return m;
}

struct SeriesComparison {
  std::vector<double> series_a;
  std::vector<double> series_b;
  double mean_a = 0.0;
  double mean_b = 0.0;
  double w_plus = 0.0;
  double w_minus = 0.0;
  double w_statistic = 0.0;  // min(w_plus, w_minus)
  double p_value = 1.0;      // two-sided
  std::size_t n_effective = 0;
  bool exact = true;
};

inline constexpr std::size_t kWilcoxonExactLimit = 25;

namespace detail {

// Ranks of |d| (1-based, ties averaged), doubled so they stay integral.
inline std::vector<std::uint64_t> doubled_average_ranks(const std::vector<double>& abs_diffs) {
  const std::size_t n = abs_diffs.size();
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return abs_diffs[a] < abs_diffs[b]; });
  std::vector<std::uint64_t> ranks(n);
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j + 1 < n && abs_diffs[order[j + 1]] == abs_diffs[order[i]]) ++j;
    // positions i+1 .. j+1 share the average rank (i+j+2)/2
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = i + j + 2;
    i = j + 1;
  }
  return ranks;
}

// P(W+ <= threshold) under the null, by counting sign assignments: a subset
// sum table over the doubled ranks.
inline double exact_lower_tail(const std::vector<std::uint64_t>& doubled_ranks,
                               std::uint64_t doubled_threshold) {
  std::uint64_t total = 0;
  for (auto r : doubled_ranks) total += r;
  std::vector<std::uint64_t> ways(total + 1, 0);
  ways[0] = 1;
  std::uint64_t reach = 0;
  for (auto r : doubled_ranks) {
    reach += r;
    for (std::uint64_t s = reach; s >= r; --s) {
      ways[s] += ways[s - r];
      if (s == r) break;
    }
  }
  std::uint64_t count = 0;
  for (std::uint64_t s = 0; s <= std::min(doubled_threshold, total); ++s) count += ways[s];
  return static_cast<double>(count) / std::ldexp(1.0, static_cast<int>(doubled_ranks.size()));
}

}  // namespace detail

/// Wilcoxon signed-rank test on paired series. Zero differences are dropped,
/// tied magnitudes get average ranks, and the two-sided p-value is
/// 2 * P(W+ <= min(W+, W-)) capped at 1: exact enumeration up to 25 effective
/// pairs, normal approximation with continuity correction above.
inline SeriesComparison wilcoxon_signed_rank(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) {
    throw Error(Errc::domain, "paired series differ in length (" + std::to_string(a.size()) +
                                  " vs " + std::to_string(b.size()) + ")");
  }
  if (a.empty()) throw Error(Errc::domain, "empty series");
  SeriesComparison c;
  c.series_a.assign(a.begin(), a.end());
  c.series_b.assign(b.begin(), b.end());
  c.mean_a = mean(a);
  c.mean_b = mean(b);

  std::vector<double> abs_diffs;
  std::vector<bool> positive;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    if (d == 0.0) continue;
    abs_diffs.push_back(std::fabs(d));
    positive.push_back(d > 0.0);
  }
  c.n_effective = abs_diffs.size();
  if (c.n_effective == 0) {
    throw Error(Errc::zero_variance, "all paired differences are zero");
  }
  const auto ranks = detail::doubled_average_ranks(abs_diffs);
  std::uint64_t plus2 = 0;
  std::uint64_t minus2 = 0;
  for (std::size_t i = 0; i < ranks.size(); ++i) (positive[i] ? plus2 : minus2) += ranks[i];
  c.w_plus = static_cast<double>(plus2) / 2.0;
  c.w_minus = static_cast<double>(minus2) / 2.0;
  const std::uint64_t w2 = std::min(plus2, minus2);
  c.w_statistic = static_cast<double>(w2) / 2.0;

  const auto n = static_cast<double>(c.n_effective);
  if (c.n_effective <= kWilcoxonExactLimit) {
    c.exact = true;
    c.p_value = std::min(1.0, 2.0 * detail::exact_lower_tail(ranks, w2));
  } else {
    c.exact = false;
    const double mu = n * (n + 1.0) / 4.0;
    const double sigma = std::sqrt(n * (n + 1.0) * (2.0 * n + 1.0) / 24.0);
    const double z = (c.w_statistic - mu + 0.5) / sigma;
    c.p_value = std::min(1.0, std::erfc(-z / std::sqrt(2.0)));
  }
  return c;
}

// ---------------------------------------------------------------------------
// Summary table (task, metric, both means, p-value to 3 decimals)

struct SummaryRow {
  std::string task;
  std::string metric;
  double mean_a = 0.0;
  double mean_b = 0.0;
  std::optional<double> p_value;  // empty when the comparison is degenerate
};

inline std::string format_p_value(double p) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%.3f", p);
  return buf;
}

inline std::string format_summary_table(std::span<const SummaryRow> rows) {
  std::size_t task_w = 4, metric_w = 6;
  for (const auto& r : rows) {
    task_w = std::max(task_w, r.task.size());
    metric_w = std::max(metric_w, r.metric.size());
  }
  auto line = [&](const std::string& task, const std::string& metric, const std::string& a,
                  const std::string& b, const std::string& p) {
    char buf[512];
    std::snprintf(buf, sizeof buf, "%-*s  %-*s  %14s  %14s  %8s\n", static_cast<int>(task_w),
                  task.c_str(), static_cast<int>(metric_w), metric.c_str(), a.c_str(), b.c_str(),
                  p.c_str());
    return std::string(buf);
  };
  std::string out = line("task", "metric", "mean_a", "mean_b", "p-value");
  for (const auto& r : rows) {
    char a[64], b[64];
    std::snprintf(a, sizeof a, "%.6f", r.mean_a);
    std::snprintf(b, sizeof b, "%.6f", r.mean_b);
    out += line(r.task, r.metric, a, b, r.p_value ? format_p_value(*r.p_value) : "n/a");
  }
  return out;
}

}  // namespace energyprobe
