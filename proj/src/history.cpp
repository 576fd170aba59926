#include "m2fedaqi/history.hpp"

#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "m2fedaqi/error.hpp"

namespace m2fedaqi {

namespace {

constexpr const char* kHeader =
    "round,loss,mae,rmse,r2,accuracy,macro_f1,macro_auc,bytes_up,bytes_down,round_seconds";

std::string num(double v) {
  std::ostringstream s;
  s.precision(17);
  s << v;
  return s.str();
}

std::string opt(const std::optional<double>& v) { return v ? num(*v) : ""; }

std::optional<double> parse_opt(const std::string& s) {
  if (s.empty()) return std::nullopt;
  return std::stod(s);
}

nlohmann::ordered_json opt_json(const std::optional<double>& v) {
  return v ? nlohmann::ordered_json(*v) : nlohmann::ordered_json(nullptr);
}

}  // namespace

const std::vector<std::string>& history_metric_columns() {
  static const std::vector<std::string> cols = {"loss", "mae", "rmse", "r2", "accuracy", "macro_f1", "macro_auc"};
  return cols;
}

void write_history_csv(std::span<const HistoryRow> history, const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path);
  out << kHeader << "\n";
  for (const auto& r : history) {
    const auto& m = r.metrics;
    out << r.round << "," << num(r.loss) << "," << opt(m.mae) << "," << opt(m.rmse) << "," << opt(m.r2) << ","
        << opt(m.accuracy) << "," << opt(m.macro_f1) << "," << opt(m.macro_auc) << "," << r.profile.bytes_up << ","
        << r.profile.bytes_down << "," << num(r.round_seconds) << "\n";
  }
  if (!out) throw IoError("short write to " + path);
}

void write_history_json(std::span<const HistoryRow> history, const std::string& path) {
  nlohmann::ordered_json arr = nlohmann::ordered_json::array();
  for (const auto& r : history) {
    const auto& m = r.metrics;
    nlohmann::ordered_json j;
    j["round"] = r.round;
    j["task"] = to_string(m.task);
    j["loss"] = r.loss;
    j["mae"] = opt_json(m.mae);
    j["rmse"] = opt_json(m.rmse);
    j["r2"] = opt_json(m.r2);
    j["accuracy"] = opt_json(m.accuracy);
    j["macro_f1"] = opt_json(m.macro_f1);
    j["macro_auc"] = opt_json(m.macro_auc);
    j["n"] = m.n;
    j["weights_hash"] = r.weights_hash;
    j["bytes_up"] = r.profile.bytes_up;
    j["bytes_down"] = r.profile.bytes_down;
    j["round_seconds"] = r.round_seconds;
    arr.push_back(std::move(j));
  }
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path);
  out << arr.dump(2) << "\n";
  if (!out) throw IoError("short write to " + path);
}

std::vector<HistoryRow> read_history_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  std::string line;
  if (!std::getline(in, line) || line != kHeader) throw DataError(path + ": not a history CSV");
  std::vector<HistoryRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::string cell;
    std::istringstream ss(line);
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (!line.empty() && line.back() == ',') cells.emplace_back();
    if (cells.size() != 11) throw DataError(path + ": history row has " + std::to_string(cells.size()) + " cells");
    try {
      HistoryRow r;
      r.round = static_cast<std::uint32_t>(std::stoul(cells[0]));
      r.loss = std::stod(cells[1]);
      r.metrics.mae = parse_opt(cells[2]);
      r.metrics.rmse = parse_opt(cells[3]);
      r.metrics.r2 = parse_opt(cells[4]);
      r.metrics.accuracy = parse_opt(cells[5]);
      r.metrics.macro_f1 = parse_opt(cells[6]);
      r.metrics.macro_auc = parse_opt(cells[7]);
      r.metrics.task = (r.metrics.accuracy || r.metrics.macro_f1) ? Task::kClassification : Task::kRegression;
      r.profile.round = r.round;
      r.profile.bytes_up = std::stoull(cells[8]);
      r.profile.bytes_down = std::stoull(cells[9]);
      r.round_seconds = std::stod(cells[10]);
      rows.push_back(std::move(r));
    } catch (const std::logic_error&) {
      throw DataError(path + ": malformed history row '" + line + "'");
    }
  }
  return rows;
}

std::vector<LongRow> merge_histories(std::span<const std::pair<std::string, std::vector<HistoryRow>>> runs) {
  std::vector<LongRow> out;
  for (const auto& [label, history] : runs) {
    for (const auto& r : history) {
      const auto& m = r.metrics;
      const std::pair<const char*, std::optional<double>> values[] = {
          {"loss", r.loss},     {"mae", m.mae},           {"rmse", m.rmse},          {"r2", m.r2},
          {"accuracy", m.accuracy}, {"macro_f1", m.macro_f1}, {"macro_auc", m.macro_auc},
      };
      for (const auto& [metric, value] : values) {
        if (value) out.push_back({label, r.round, metric, *value});
      }
    }
  }
  return out;
}

void write_long_csv(std::span<const LongRow> rows, const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path);
  out << "run,round,metric,value\n";
  for (const auto& r : rows) out << r.run << "," << r.round << "," << r.metric << "," << num(r.value) << "\n";
  if (!out) throw IoError("short write to " + path);
}

}  // namespace m2fedaqi
