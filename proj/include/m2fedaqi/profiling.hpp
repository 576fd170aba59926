#pragma once

#include <atomic>
#include <chrono>
#include <cstdint>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <thread>
#include <vector>

namespace m2fedaqi {

/// One process-level resource reading from /proc.
struct ResourceReading {
  std::chrono::steady_clock::time_point when;
  double cpu_seconds = 0.0;  // user + system time consumed so far
  std::uint64_t rss_bytes = 0;
};

/// Returns nothing when the statistics interface is unavailable.
std::optional<ResourceReading> read_process_resources();

struct ResourceSummary {
  std::optional<double> mean_cpu_percent;   // one fully busy core = 100
  std::optional<std::uint64_t> peak_rss_bytes;
  std::size_t samples = 0;
};

/// Background sampler of process CPU share and resident memory. Never
/// throws out of the sampling thread; an unreadable /proc just yields an
/// empty summary.
class ResourceSampler {
 public:
  explicit ResourceSampler(std::chrono::milliseconds interval = std::chrono::milliseconds(100));
  ~ResourceSampler();

  ResourceSampler(const ResourceSampler&) = delete;
  ResourceSampler& operator=(const ResourceSampler&) = delete;

  /// Stops sampling (joining the thread) and summarizes the window.
  ResourceSummary finalize();

 private:
  void run();

  std::chrono::milliseconds interval_;
  std::atomic<bool> stop_{false};
  std::mutex mutex_;
  std::optional<ResourceReading> previous_;
  std::vector<double> cpu_percent_;
  std::optional<std::uint64_t> peak_rss_;
  std::size_t samples_ = 0;
  std::thread thread_;
  bool finalized_ = false;
  ResourceSummary summary_;
};

struct RoundProfile {
  std::uint32_t round = 0;
  double train_seconds = 0.0;
  std::optional<std::uint64_t> peak_rss_bytes;
  std::optional<double> mean_cpu_percent;
  std::uint64_t bytes_up = 0;
  std::uint64_t bytes_down = 0;

  bool operator==(const RoundProfile&) const = default;
};

class ProfileHistory {
 public:
  void record_round(const RoundProfile& profile);
  const std::vector<RoundProfile>& rounds() const { return rounds_; }
  bool empty() const { return rounds_.empty(); }

 private:
  std::vector<RoundProfile> rounds_;
};

enum class ExportFormat { kCsv, kJson };

/// CSV columns: round, train_seconds, peak_rss_bytes, mean_cpu_percent,
/// bytes_up, bytes_down (absent fields are empty cells). JSON is an array of
/// objects with the same keys (absent fields are null). Throws IoError on an
/// unwritable path and ConfigError on an empty history.
void export_profiles(std::span<const RoundProfile> history, const std::string& path, ExportFormat format);
std::vector<RoundProfile> import_profiles(const std::string& path, ExportFormat format);

}  // namespace m2fedaqi
