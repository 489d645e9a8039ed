#pragma once

#include <cstddef>
#include <map>
#include <mutex>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "energyprobe/probe.hpp"

namespace energyprobe {

/// Scripted in-memory probe. Each channel replays its script one value per
/// read and holds the last value once the script is exhausted.
class FakeProbe : public Probe {
 public:
  FakeProbe() = default;

  void add_channel(Channel channel, std::vector<Microjoules> script) {
    std::lock_guard lock(mu_);
    auto id = channel.id;
    entries_.insert_or_assign(id, Entry{std::move(channel), std::move(script), 0});
  }

  void set_support(SupportReport report) {
    std::lock_guard lock(mu_);
    support_ = std::move(report);
  }

  /// Reads of a failing channel throw Errc::read_failure.
  void set_failing(std::string_view channel_id, bool failing) {
    std::lock_guard lock(mu_);
    if (failing) {
      failing_.emplace(channel_id);
    } else {
      failing_.erase(std::string(channel_id));
    }
  }

  std::size_t read_count() const {
    std::lock_guard lock(mu_);
    return reads_;
  }

  SupportReport support() const override {
    std::lock_guard lock(mu_);
    return support_;
  }

  std::vector<Channel> discover() const override {
    std::lock_guard lock(mu_);
    std::vector<Channel> out;
    out.reserve(entries_.size());
    for (const auto& [id, entry] : entries_) out.push_back(entry.channel);
    sort_channels(out);
    return out;
  }

  CounterSample read(std::string_view channel_id) const override {
    std::lock_guard lock(mu_);
    auto it = entries_.find(std::string(channel_id));
    if (it == entries_.end()) {
      throw Error(Errc::unknown_channel, std::string(channel_id));
    }
    ++reads_;
    if (failing_.count(it->first) != 0) {
      throw Error(Errc::read_failure, "scripted failure on " + it->first);
    }
    Entry& e = it->second;
    Microjoules value = 0;
    if (!e.script.empty()) {
      value = e.script[std::min(e.cursor, e.script.size() - 1)];
      if (e.cursor < e.script.size()) ++e.cursor;
    }
    if (value > e.channel.max_energy_range) {
      throw Error(Errc::corrupt_counter, it->first + " reported " + std::to_string(value) +
                                             " above range " +
                                             std::to_string(e.channel.max_energy_range));
    }
    return {it->first, value, monotonic_ns()};
  }

 private:
  struct Entry {
    Channel channel;
    std::vector<Microjoules> script;
    std::size_t cursor = 0;
  };

  mutable std::mutex mu_;
  mutable std::map<std::string, Entry, std::less<>> entries_;
  std::set<std::string, std::less<>> failing_;
  SupportReport support_{SupportStatus::supported, "fake", {}};
  mutable std::size_t reads_ = 0;
};

}  // namespace energyprobe
