#pragma once

#include <dlfcn.h>

#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <memory>
#include <mutex>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "energyprobe/powercap.hpp"
#include "energyprobe/probe.hpp"

namespace energyprobe {

inline constexpr const char* kGpuFakeEnv = "ENERGY_GPU_FAKE";

/// Source of cumulative per-device GPU energy in millijoules. Device indices
/// are 0..device_count()-1 and stay fixed for the driver's lifetime.
class GpuDriver {
 public:
  virtual ~GpuDriver() = default;
  virtual bool available() const = 0;
  virtual unsigned device_count() const = 0;
  virtual std::uint64_t total_energy_mj(unsigned index) const = 0;
};

/// Scripted driver for tests and fixture runs. Each device replays its own
/// sequence and holds the last value once exhausted.
class FakeGpuDriver : public GpuDriver {
 public:
  /// One script per device.
  explicit FakeGpuDriver(std::vector<std::vector<std::uint64_t>> scripts)
      : scripts_(std::move(scripts)), cursors_(scripts_.size(), 0) {}

  static std::shared_ptr<FakeGpuDriver> unavailable() {
    auto d = std::make_shared<FakeGpuDriver>(std::vector<std::vector<std::uint64_t>>{});
    d->available_ = false;
    return d;
  }

  // Fixture file: one line per read, whitespace-separated readings with one
  // column per device. A file whose only token is "unavailable" models a host
  // without the driver; an empty file models zero devices.
  static std::shared_ptr<FakeGpuDriver> from_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error(Errc::io, "cannot open GPU fixture " + path.string());
    std::vector<std::vector<std::uint64_t>> rows;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      const auto trimmed = detail::trim(line);
      if (trimmed.empty()) continue;
      if (trimmed == "unavailable" && rows.empty()) return unavailable();
      std::istringstream ss{std::string(trimmed)};
      std::vector<std::uint64_t> row;
      std::string tok;
      while (ss >> tok) {
        auto v = detail::parse_u64(tok);
        if (!v) {
          throw Error(Errc::parse_error, path.string() + ":" + std::to_string(lineno) +
                                             ": expected millijoules, got '" + tok + "'");
        }
        row.push_back(*v);
      }
      if (!rows.empty() && row.size() != rows.front().size()) {
        throw Error(Errc::parse_error, path.string() + ":" + std::to_string(lineno) +
                                           ": device column count changed");
      }
      rows.push_back(std::move(row));
    }
    std::vector<std::vector<std::uint64_t>> scripts(rows.empty() ? 0 : rows.front().size());
    for (const auto& row : rows) {
      for (std::size_t d = 0; d < row.size(); ++d) scripts[d].push_back(row[d]);
    }
    return std::make_shared<FakeGpuDriver>(std::move(scripts));
  }

  void set_failing(bool failing) {
    std::lock_guard lock(mu_);
    failing_ = failing;
  }

  bool available() const override { return available_; }

  unsigned device_count() const override {
    return available_ ? static_cast<unsigned>(scripts_.size()) : 0;
  }

  std::uint64_t total_energy_mj(unsigned index) const override {
    std::lock_guard lock(mu_);
    if (failing_ || index >= scripts_.size()) {
      throw Error(Errc::read_failure, "scripted GPU query failure on device " +
                                          std::to_string(index));
    }
    const auto& script = scripts_[index];
    if (script.empty()) return 0;
    auto& cursor = cursors_[index];
    const auto value = script[std::min(cursor, script.size() - 1)];
    if (cursor < script.size()) ++cursor;
    return value;
  }

 private:
  std::vector<std::vector<std::uint64_t>> scripts_;
  mutable std::vector<std::size_t> cursors_;
  mutable std::mutex mu_;
  bool available_ = true;
  bool failing_ = false;
};

/// NVIDIA management library loaded at runtime. A missing library or a
/// failed init leaves the driver unavailable rather than failing.
class NvmlDriver : public GpuDriver {
 public:
  NvmlDriver() {
    handle_ = ::dlopen("libnvidia-ml.so.1", RTLD_NOW | RTLD_LOCAL);
    if (handle_ == nullptr) return;
    init_ = reinterpret_cast<InitFn>(::dlsym(handle_, "nvmlInit_v2"));
    shutdown_ = reinterpret_cast<InitFn>(::dlsym(handle_, "nvmlShutdown"));
    count_ = reinterpret_cast<CountFn>(::dlsym(handle_, "nvmlDeviceGetCount_v2"));
    by_index_ = reinterpret_cast<HandleFn>(::dlsym(handle_, "nvmlDeviceGetHandleByIndex_v2"));
    energy_ =
        reinterpret_cast<EnergyFn>(::dlsym(handle_, "nvmlDeviceGetTotalEnergyConsumption"));
    if (!init_ || !shutdown_ || !count_ || !by_index_ || !energy_ || init_() != 0) {
      ::dlclose(handle_);
      handle_ = nullptr;
      return;
    }
    unsigned n = 0;
    if (count_(&n) != 0) n = 0;
    for (unsigned i = 0; i < n; ++i) {
      void* dev = nullptr;
      if (by_index_(i, &dev) != 0) break;
      devices_.push_back(dev);
    }
  }

  ~NvmlDriver() override {
    if (handle_ != nullptr) {
      shutdown_();
      ::dlclose(handle_);
    }
  }

  NvmlDriver(const NvmlDriver&) = delete;
  NvmlDriver& operator=(const NvmlDriver&) = delete;

  bool available() const override { return handle_ != nullptr; }

  unsigned device_count() const override { return static_cast<unsigned>(devices_.size()); }

  std::uint64_t total_energy_mj(unsigned index) const override {
    if (index >= devices_.size()) {
      throw Error(Errc::read_failure, "no GPU device " + std::to_string(index));
    }
    unsigned long long mj = 0;
    if (const int rc = energy_(devices_[index], &mj); rc != 0) {
      throw Error(Errc::read_failure, "total energy query failed on GPU device " +
                                          std::to_string(index) + " (nvml status " +
                                          std::to_string(rc) + ")");
    }
    return mj;
  }

 private:
  using InitFn = int (*)();
  using CountFn = int (*)(unsigned*);
  using HandleFn = int (*)(unsigned, void**);
  using EnergyFn = int (*)(void*, unsigned long long*);

  void* handle_ = nullptr;
  InitFn init_ = nullptr;
  InitFn shutdown_ = nullptr;
  CountFn count_ = nullptr;
  HandleFn by_index_ = nullptr;
  EnergyFn energy_ = nullptr;
  std::vector<void*> devices_;
};

/// The fixture driver named by ENERGY_GPU_FAKE when set, else NVML.
inline std::shared_ptr<GpuDriver> default_gpu_driver() {
  if (const char* env = std::getenv(kGpuFakeEnv); env != nullptr && *env != '\0') {
    return FakeGpuDriver::from_file(env);
  }
  return std::make_shared<NvmlDriver>();
}

/// Adapts a GpuDriver to the Probe contract. The vendor counter is treated as
/// non-wrapping, so channels get the full 64-bit range.
class GpuProbe : public Probe {
 public:
  explicit GpuProbe(std::shared_ptr<const GpuDriver> driver) : driver_(std::move(driver)) {
    if (driver_ && driver_->available()) {
      const unsigned n = driver_->device_count();
      for (unsigned i = 0; i < n; ++i) {
        channels_.push_back({gpu_channel_id(i), "gpu-" + std::to_string(i), kMaxMicrojoules,
                             ChannelKind::gpu});
      }
      sort_channels(channels_);
    }
  }

  /// True when no driver is loaded; CPU measurement proceeds without GPUs.
  bool degraded() const noexcept { return !driver_ || !driver_->available(); }

  std::vector<Channel> discover() const override { return channels_; }

  CounterSample read(std::string_view channel_id) const override {
    const unsigned index = parse_index(channel_id);
    std::uint64_t mj = 0;
    try {
      mj = driver_->total_energy_mj(index);
    } catch (const Error& e) {
      throw Error(e.code(), std::string(channel_id) + ": " + e.detail());
    }
    if (mj > kMaxMicrojoules / 1000) {
      throw Error(Errc::corrupt_counter,
                  std::string(channel_id) + ": " + std::to_string(mj) + " mJ overflows");
    }
    return {std::string(channel_id), mj * 1000, monotonic_ns()};
  }

 private:
  unsigned parse_index(std::string_view channel_id) const {
    if (degraded() || channel_id.rfind("gpu:", 0) != 0) {
      throw Error(Errc::unknown_channel, std::string(channel_id));
    }
    const auto idx = detail::parse_u64(channel_id.substr(4));
    if (!idx || *idx >= channels_.size() || gpu_channel_id(static_cast<unsigned>(*idx)) != channel_id) {
      throw Error(Errc::unknown_channel, std::string(channel_id));
    }
    return static_cast<unsigned>(*idx);
  }

  std::shared_ptr<const GpuDriver> driver_;
  std::vector<Channel> channels_;
};

}  // namespace energyprobe
