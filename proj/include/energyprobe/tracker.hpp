#pragma once

#include <cstdint>
#include <functional>
#include <iostream>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "energyprobe/gpu.hpp"
#include "energyprobe/measurement.hpp"
#include "energyprobe/powercap.hpp"
#include "energyprobe/probe.hpp"
#include "energyprobe/report.hpp"

namespace energyprobe {

/// Time sources used by a tracker. Interval spans come from `mono_ns`, which
/// must strictly advance between the open and close of an interval; `wall_ms`
/// only stamps the reported start time.
struct TrackerClock {
  std::function<std::int64_t()> mono_ns = monotonic_ns;
  std::function<std::int64_t()> wall_ms = wall_clock_ms;
};

/// Start/stop energy tracker over every CPU and GPU channel found at
/// construction.
///
/// Accepted call sequences are (start checkpoint* stop)+, with
/// calculate_energy() and reset() allowed only while no interval is open.
/// Closed intervals accumulate until reset(), so repeated short start/stop
/// pairs can be used to keep each interval within one counter wrap.
///
/// A tracker is single-owner: calls must be serialized by the caller.
class EnergyTracker {
 public:
  struct Interval {
    std::vector<Microjoules> deltas;  // aligned with channels()
    std::int64_t duration_ns = 0;
  };

  /// Host tracker: powercap at the default root plus the default GPU driver.
  explicit EnergyTracker(std::string label = {})
      : EnergyTracker(std::make_shared<PowercapProbe>(), default_gpu_driver(), std::move(label)) {}

  /// Throws UnsupportedHostError when the CPU probe reports no support. An
  /// unavailable GPU driver only sets degraded_gpu().
  EnergyTracker(std::shared_ptr<const Probe> cpu, std::shared_ptr<const GpuDriver> gpu,
                std::string label = {}, TrackerClock clock = {})
      : cpu_(std::move(cpu)),
        gpu_(std::make_shared<GpuProbe>(std::move(gpu))),
        label_(std::move(label)),
        clock_(std::move(clock)) {
    const SupportReport report = cpu_->support();
    if (!report.supported()) throw UnsupportedHostError(report);
    for (auto& ch : cpu_->discover()) sources_.push_back({std::move(ch), cpu_.get()});
    for (auto& ch : gpu_->discover()) sources_.push_back({std::move(ch), gpu_.get()});
    std::sort(sources_.begin(), sources_.end(),
              [](const Source& a, const Source& b) { return a.channel.id < b.channel.id; });
    for (std::size_t i = 1; i < sources_.size(); ++i) {
      if (sources_[i - 1].channel.id == sources_[i].channel.id) {
        throw Error(Errc::domain, "duplicate channel id " + sources_[i].channel.id);
      }
    }
  }

  std::vector<Channel> channels() const {
    std::vector<Channel> out;
    out.reserve(sources_.size());
    for (const auto& s : sources_) out.push_back(s.channel);
    return out;
  }

  const std::string& label() const noexcept { return label_; }
  void set_label(std::string label) { label_ = std::move(label); }
  bool degraded_gpu() const noexcept { return gpu_->degraded(); }
  bool is_open() const noexcept { return open_.has_value(); }
  const std::vector<Interval>& intervals() const noexcept { return closed_; }

  /// Opening samples of the current interval, in channel order.
  const std::vector<CounterSample>& open_samples() const {
    if (!open_) throw Error(Errc::lifecycle, "no interval is open");
    return open_->samples;
  }

  void start() {
    if (open_) throw Error(Errc::lifecycle, "start() while an interval is already open");
    auto samples = sample_all();
    const std::int64_t now = clock_.mono_ns();
    if (closed_.empty()) wall_start_ms_ = clock_.wall_ms();
    open_ = OpenInterval{std::move(samples), now};
  }

  void stop() {
    if (!open_) throw Error(Errc::lifecycle, "stop() without a matching start()");
    close_with_fresh_samples();
  }

  /// stop() immediately followed by start(), sharing one read per channel so
  /// no energy falls between the two intervals.
  void checkpoint() {
    if (!open_) throw Error(Errc::lifecycle, "checkpoint() without an open interval");
    auto [samples, now] = close_with_fresh_samples();
    open_ = OpenInterval{std::move(samples), now};
  }

  /// Sums all closed intervals. Does not modify the tracker.
  Measurement calculate_energy() const {
    if (open_) throw Error(Errc::lifecycle, "calculate_energy() while an interval is open");
    if (closed_.empty()) throw Error(Errc::nothing_measured, "no closed interval to report");
    Measurement m;
    m.label = label_;
    m.wall_start_ms = wall_start_ms_;
    m.degraded_gpu = degraded_gpu();
    std::vector<Microjoules> total(sources_.size(), 0);
    for (const auto& iv : closed_) {
      m.duration_ns += iv.duration_ns;
      for (std::size_t i = 0; i < total.size(); ++i) total[i] += iv.deltas[i];
    }
    for (std::size_t i = 0; i < sources_.size(); ++i) {
      m.energy.emplace(sources_[i].channel.id, total[i]);
    }
    return m;
  }

  void reset() {
    if (open_) throw Error(Errc::lifecycle, "reset() while an interval is open");
    closed_.clear();
    wall_start_ms_ = 0;
  }

  void print_energy(std::ostream& os = std::cout) const { os << format_energy(calculate_energy()); }

  void save_csv(const std::filesystem::path& path) const {
    energyprobe::save_csv(calculate_energy(), path);
  }

 private:
  struct Source {
    Channel channel;
    const Probe* probe;
  };

  struct OpenInterval {
    std::vector<CounterSample> samples;
    std::int64_t mono_ns = 0;
  };

  std::vector<CounterSample> sample_all() const {
    std::vector<CounterSample> out;
    out.reserve(sources_.size());
    for (const auto& s : sources_) out.push_back(s.probe->read(s.channel.id));
    return out;
  }

  // Closes the open interval against a fresh read of every channel. On any
  // failure the open interval is discarded and nothing is appended.
  std::pair<std::vector<CounterSample>, std::int64_t> close_with_fresh_samples() {
    OpenInterval opened = std::move(*open_);
    open_.reset();
    auto samples = sample_all();
    const std::int64_t now = clock_.mono_ns();
    if (now <= opened.mono_ns) {
      throw Error(Errc::clock, "monotonic clock did not advance across the interval");
    }
    Interval iv;
    iv.duration_ns = now - opened.mono_ns;
    iv.deltas.reserve(sources_.size());
    for (std::size_t i = 0; i < sources_.size(); ++i) {
      iv.deltas.push_back(corrected_delta(opened.samples[i].raw_energy, samples[i].raw_energy,
                                          sources_[i].channel.max_energy_range));
    }
    closed_.push_back(std::move(iv));
    return {std::move(samples), now};
  }

  std::shared_ptr<const Probe> cpu_;
  std::shared_ptr<GpuProbe> gpu_;
  std::vector<Source> sources_;
  std::string label_;
  TrackerClock clock_;
  std::optional<OpenInterval> open_;
  std::vector<Interval> closed_;
  std::int64_t wall_start_ms_ = 0;
};

}  // namespace energyprobe
