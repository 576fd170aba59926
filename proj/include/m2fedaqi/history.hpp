#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "m2fedaqi/metrics.hpp"
#include "m2fedaqi/profiling.hpp"

namespace m2fedaqi {

/// One federated round or centralized epoch.
struct HistoryRow {
  std::uint32_t round = 0;
  double loss = 0.0;
  MetricsReport metrics;
  std::uint64_t weights_hash = 0;
  RoundProfile profile;
  double round_seconds = 0.0;
};

/// CSV columns: round, loss, mae, rmse, r2, accuracy, macro_f1, macro_auc,
/// bytes_up, bytes_down, round_seconds. Empty cell = not available.
void write_history_csv(std::span<const HistoryRow> history, const std::string& path);
void write_history_json(std::span<const HistoryRow> history, const std::string& path);
std::vector<HistoryRow> read_history_csv(const std::string& path);

/// Names of the metric columns in the history CSV.
const std::vector<std::string>& history_metric_columns();

/// Long-format merge: run, round, metric, value. Only available values are emitted.
struct LongRow {
  std::string run;
  std::uint32_t round = 0;
  std::string metric;
  double value = 0.0;
};
std::vector<LongRow> merge_histories(std::span<const std::pair<std::string, std::vector<HistoryRow>>> runs);
void write_long_csv(std::span<const LongRow> rows, const std::string& path);

}  // namespace m2fedaqi
