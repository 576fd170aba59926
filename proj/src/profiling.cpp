#include "m2fedaqi/profiling.hpp"

#include <unistd.h>

#include <charconv>
#include <fstream>
#include <numeric>
#include <sstream>

#include <nlohmann/json.hpp>

#include "m2fedaqi/error.hpp"

namespace m2fedaqi {

std::optional<ResourceReading> read_process_resources() {
  ResourceReading reading;
  reading.when = std::chrono::steady_clock::now();

  std::ifstream stat("/proc/self/stat");
  std::string line;
  if (!stat || !std::getline(stat, line)) return std::nullopt;
  // Fields after the parenthesized command name; utime and stime are fields 14 and 15.
  const auto close = line.rfind(')');
  if (close == std::string::npos) return std::nullopt;
  std::istringstream rest(line.substr(close + 2));
  std::string field;
  unsigned long long utime = 0, stime = 0;
  for (int i = 3; i <= 15 && rest >> field; ++i) {
    if (i == 14) utime = std::stoull(field);
    if (i == 15) stime = std::stoull(field);
  }
  const long ticks = sysconf(_SC_CLK_TCK);
  if (ticks <= 0) return std::nullopt;
  reading.cpu_seconds = static_cast<double>(utime + stime) / static_cast<double>(ticks);

  std::ifstream statm("/proc/self/statm");
  unsigned long long size_pages = 0, resident_pages = 0;
  if (!(statm >> size_pages >> resident_pages)) return std::nullopt;
  reading.rss_bytes = resident_pages * static_cast<std::uint64_t>(sysconf(_SC_PAGESIZE));
  return reading;
}

ResourceSampler::ResourceSampler(std::chrono::milliseconds interval) : interval_(interval) {
  if (interval_ < std::chrono::milliseconds(50)) interval_ = std::chrono::milliseconds(50);
  previous_ = read_process_resources();
  if (previous_) peak_rss_ = previous_->rss_bytes;
  thread_ = std::thread([this] { run(); });
}

ResourceSampler::~ResourceSampler() { finalize(); }

void ResourceSampler::run() {
  auto next = std::chrono::steady_clock::now() + interval_;
  while (!stop_.load()) {
    std::this_thread::sleep_until(next);
    next += interval_;
    if (stop_.load()) break;
    auto reading = read_process_resources();
    std::lock_guard lock(mutex_);
    if (!reading) continue;
    if (previous_) {
      const double wall = std::chrono::duration<double>(reading->when - previous_->when).count();
      if (wall > 0.0) {
        cpu_percent_.push_back(100.0 * (reading->cpu_seconds - previous_->cpu_seconds) / wall);
        ++samples_;
      }
    }
    peak_rss_ = std::max(peak_rss_.value_or(0), reading->rss_bytes);
    previous_ = reading;
  }
}

ResourceSummary ResourceSampler::finalize() {
  if (finalized_) return summary_;
  stop_.store(true);
  if (thread_.joinable()) thread_.join();
  finalized_ = true;
  std::lock_guard lock(mutex_);
  summary_.samples = samples_;
  if (samples_ > 0) {
    summary_.mean_cpu_percent =
        std::accumulate(cpu_percent_.begin(), cpu_percent_.end(), 0.0) / static_cast<double>(cpu_percent_.size());
    summary_.peak_rss_bytes = peak_rss_;
  }
  return summary_;
}

void ProfileHistory::record_round(const RoundProfile& profile) {
  if (!rounds_.empty() && profile.round <= rounds_.back().round) {
    throw ConfigError("profile rounds must be recorded in increasing order");
  }
  rounds_.push_back(profile);
}

namespace {

constexpr const char* kCsvHeader = "round,train_seconds,peak_rss_bytes,mean_cpu_percent,bytes_up,bytes_down";

template <typename T>
std::string cell(const std::optional<T>& v) {
  if (!v) return "";
  std::ostringstream s;
  s.precision(17);
  s << *v;
  return s.str();
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream ss(line);
  while (std::getline(ss, item, ',')) out.push_back(item);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

}  // namespace

void export_profiles(std::span<const RoundProfile> history, const std::string& path, ExportFormat format) {
  if (history.empty()) throw ConfigError("export_profiles: history is empty");
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path);
  if (format == ExportFormat::kCsv) {
    out << kCsvHeader << "\n";
    out.precision(17);
    for (const auto& p : history) {
      out << p.round << "," << p.train_seconds << "," << cell(p.peak_rss_bytes) << "," << cell(p.mean_cpu_percent)
          << "," << p.bytes_up << "," << p.bytes_down << "\n";
    }
  } else {
    nlohmann::ordered_json arr = nlohmann::ordered_json::array();
    for (const auto& p : history) {
      nlohmann::ordered_json j;
      j["round"] = p.round;
      j["train_seconds"] = p.train_seconds;
      j["peak_rss_bytes"] = p.peak_rss_bytes ? nlohmann::ordered_json(*p.peak_rss_bytes) : nlohmann::ordered_json(nullptr);
      j["mean_cpu_percent"] = p.mean_cpu_percent ? nlohmann::ordered_json(*p.mean_cpu_percent) : nlohmann::ordered_json(nullptr);
      j["bytes_up"] = p.bytes_up;
      j["bytes_down"] = p.bytes_down;
      arr.push_back(std::move(j));
    }
    out << arr.dump(2) << "\n";
  }
  if (!out) throw IoError("short write to " + path);
}

std::vector<RoundProfile> import_profiles(const std::string& path, ExportFormat format) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  std::vector<RoundProfile> out;
  if (format == ExportFormat::kCsv) {
    std::string line;
    if (!std::getline(in, line) || line != kCsvHeader) throw DataError(path + ": unexpected profile CSV header");
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      const auto cells = split_csv(line);
      if (cells.size() != 6) throw DataError(path + ": profile row has " + std::to_string(cells.size()) + " cells");
      RoundProfile p;
      p.round = static_cast<std::uint32_t>(std::stoul(cells[0]));
      p.train_seconds = std::stod(cells[1]);
      if (!cells[2].empty()) p.peak_rss_bytes = std::stoull(cells[2]);
      if (!cells[3].empty()) p.mean_cpu_percent = std::stod(cells[3]);
      p.bytes_up = std::stoull(cells[4]);
      p.bytes_down = std::stoull(cells[5]);
      out.push_back(p);
    }
  } else {
    try {
      const auto arr = nlohmann::json::parse(in);
      for (const auto& j : arr) {
        RoundProfile p;
        p.round = j.at("round").get<std::uint32_t>();
        p.train_seconds = j.at("train_seconds").get<double>();
        if (!j.at("peak_rss_bytes").is_null()) p.peak_rss_bytes = j.at("peak_rss_bytes").get<std::uint64_t>();
        if (!j.at("mean_cpu_percent").is_null()) p.mean_cpu_percent = j.at("mean_cpu_percent").get<double>();
        p.bytes_up = j.at("bytes_up").get<std::uint64_t>();
        p.bytes_down = j.at("bytes_down").get<std::uint64_t>();
        out.push_back(p);
      }
    } catch (const nlohmann::json::exception& e) {
      throw DataError(path + ": " + e.what());
    }
  }
  return out;
}

}  // namespace m2fedaqi
