#include "m2fedaqi/metrics.hpp"

#include <algorithm>
#include <memory>
#include <cmath>
#include <numeric>
#include <set>

#include <nlohmann/json.hpp>

#include "m2fedaqi/error.hpp"

namespace m2fedaqi {

MetricsReport regression_metrics(std::span<const double> y, std::span<const double> y_hat) {
  if (y.size() != y_hat.size()) {
    throw DataError("regression_metrics: " + std::to_string(y.size()) + " targets vs " +
                    std::to_string(y_hat.size()) + " predictions");
  }
  if (y.empty()) throw DataError("regression_metrics: empty input");
  const double n = static_cast<double>(y.size());
  double abs_sum = 0.0, sq_sum = 0.0, mean = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    if (!std::isfinite(y[i]) || !std::isfinite(y_hat[i])) {
      throw DataError("regression_metrics: non-finite value at index " + std::to_string(i));
    }
    const double e = y[i] - y_hat[i];
    abs_sum += std::abs(e);
    sq_sum += e * e;
    mean += y[i];
  }
  mean /= n;
  double ss_tot = 0.0;
  for (double v : y) ss_tot += (v - mean) * (v - mean);

  MetricsReport r;
  r.task = Task::kRegression;
  r.n = y.size();
  r.mae = abs_sum / n;
  r.rmse = std::sqrt(sq_sum / n);
  if (ss_tot > 0.0) {
    r.r2 = 1.0 - sq_sum / ss_tot;
  } else if (sq_sum == 0.0) {
    r.r2 = 1.0;
  }
  return r;
}

int argmax_lowest(const Eigen::Ref<const Eigen::RowVectorXd>& row) {
  int best = 0;
  for (int c = 1; c < row.size(); ++c) {
    if (row(c) > row(best)) best = c;
  }
  return best;
}

std::optional<double> roc_auc(std::span<const double> scores, std::span<const bool> positive) {
  if (scores.size() != positive.size()) throw DataError("roc_auc: scores and labels differ in length");
  const auto n_pos = static_cast<double>(std::count(positive.begin(), positive.end(), true));
  const double n_neg = static_cast<double>(positive.size()) - n_pos;
  if (n_pos == 0.0 || n_neg == 0.0) return std::nullopt;

  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });

  // Walk thresholds from high to low; each block of tied scores is one ROC step.
  double area = 0.0, tp = 0.0, fp = 0.0;
  for (std::size_t i = 0; i < order.size();) {
    double dtp = 0.0, dfp = 0.0;
    std::size_t j = i;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) {
      (positive[order[j]] ? dtp : dfp) += 1.0;
      ++j;
    }
    area += dfp * (tp + 0.5 * dtp);
    tp += dtp;
    fp += dfp;
    i = j;
  }
  return area / (n_pos * n_neg);
}

double macro_f1(std::span<const int> labels, std::span<const int> predicted, int num_classes) {
  std::set<int> present(labels.begin(), labels.end());
  present.insert(predicted.begin(), predicted.end());
  if (present.empty()) return 0.0;
  double total = 0.0;
  for (int c : present) {
    if (c < 0 || c >= num_classes) throw DataError("macro_f1: class " + std::to_string(c) + " out of range");
    double tp = 0, fp = 0, fn = 0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
      const bool is = labels[i] == c, said = predicted[i] == c;
      tp += is && said;
      fp += !is && said;
      fn += is && !said;
    }
    const double precision = tp + fp > 0 ? tp / (tp + fp) : 0.0;
    const double recall = tp + fn > 0 ? tp / (tp + fn) : 0.0;
    total += precision + recall > 0 ? 2.0 * precision * recall / (precision + recall) : 0.0;
  }
  return total / static_cast<double>(present.size());
}

MetricsReport classification_metrics(std::span<const int> labels, const Eigen::MatrixXd& probs) {
  if (labels.empty()) throw DataError("classification_metrics: empty input");
  if (static_cast<Eigen::Index>(labels.size()) != probs.rows()) {
    throw DataError("classification_metrics: " + std::to_string(labels.size()) + " labels vs " +
                    std::to_string(probs.rows()) + " probability rows");
  }
  const int num_classes = static_cast<int>(probs.cols());
  std::vector<int> predicted(labels.size());
  for (Eigen::Index i = 0; i < probs.rows(); ++i) {
    const auto row = probs.row(i);
    if (!row.allFinite() || (row.array() < 0.0).any() || std::abs(row.sum() - 1.0) > 1e-5) {
      throw DataError("classification_metrics: malformed probability row " + std::to_string(i));
    }
    const int label = labels[static_cast<std::size_t>(i)];
    if (label < 0 || label >= num_classes) {
      throw DataError("classification_metrics: label " + std::to_string(label) + " at row " + std::to_string(i) +
                      " out of range");
    }
    predicted[static_cast<std::size_t>(i)] = argmax_lowest(row);
  }

  MetricsReport r;
  r.task = Task::kClassification;
  r.n = labels.size();
  std::size_t correct = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) correct += labels[i] == predicted[i];
  r.accuracy = static_cast<double>(correct) / static_cast<double>(labels.size());
  r.macro_f1 = macro_f1(labels, predicted, num_classes);

  std::set<int> present(labels.begin(), labels.end());
  std::vector<double> scores(labels.size());
  auto pos = std::make_unique<bool[]>(labels.size());
  double auc_sum = 0.0;
  int auc_count = 0;
  for (int c : present) {
    for (std::size_t i = 0; i < labels.size(); ++i) {
      scores[i] = probs(static_cast<Eigen::Index>(i), c);
      pos[i] = labels[i] == c;
    }
    if (auto auc = roc_auc(scores, {pos.get(), labels.size()})) {
      auc_sum += *auc;
      ++auc_count;
    }
  }
  if (auc_count > 0) r.macro_auc = auc_sum / auc_count;
  return r;
}

std::optional<double> MetricsReport::headline() const {
  return task == Task::kClassification ? accuracy : r2;
}

namespace {

using Field = std::optional<double> MetricsReport::*;

struct FieldInfo {
  const char* key;
  Field field;
  Task task;
};

constexpr FieldInfo kFields[] = {
    {"mae", &MetricsReport::mae, Task::kRegression},
    {"rmse", &MetricsReport::rmse, Task::kRegression},
    {"r2", &MetricsReport::r2, Task::kRegression},
    {"accuracy", &MetricsReport::accuracy, Task::kClassification},
    {"macro_f1", &MetricsReport::macro_f1, Task::kClassification},
    {"macro_auc", &MetricsReport::macro_auc, Task::kClassification},
};

}  // namespace

std::string MetricsReport::to_json() const {
  nlohmann::ordered_json j;
  j["task"] = to_string(task);
  j["n"] = n;
  for (const auto& f : kFields) {
    const auto& v = this->*f.field;
    if (v) {
      j[f.key] = *v;
    } else if (f.task == task) {
      j[f.key] = "undefined";
    } else {
      j[f.key] = nullptr;
    }
  }
  return j.dump();
}

MetricsReport MetricsReport::from_json(const std::string& text) {
  MetricsReport r;
  try {
    const auto j = nlohmann::json::parse(text);
    r.task = parse_task(j.at("task").get<std::string>());
    r.n = j.at("n").get<std::size_t>();
    for (const auto& f : kFields) {
      const auto& v = j.at(f.key);
      if (v.is_number()) r.*f.field = v.get<double>();
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("metrics JSON: ") + e.what());
  }
  return r;
}

void MetricsReport::encode(ByteWriter& out) const {
  out.u8(static_cast<std::uint8_t>(task));
  out.u64(n);
  std::uint8_t mask = 0;
  for (std::size_t i = 0; i < std::size(kFields); ++i) {
    if ((this->*kFields[i].field).has_value()) mask |= static_cast<std::uint8_t>(1u << i);
  }
  out.u8(mask);
  for (const auto& f : kFields) {
    if (const auto& v = this->*f.field) out.f64(*v);
  }
}

MetricsReport MetricsReport::decode(ByteReader& in) {
  MetricsReport r;
  const auto task = in.u8();
  if (task > 1) throw CodecError("metrics: unknown task code " + std::to_string(task));
  r.task = static_cast<Task>(task);
  r.n = in.u64();
  const auto mask = in.u8();
  for (std::size_t i = 0; i < std::size(kFields); ++i) {
    if (mask & (1u << i)) r.*kFields[i].field = in.f64();
  }
  return r;
}

MetricsReport weighted_mean(std::span<const MetricsReport> reports, std::span<const double> weights) {
  if (reports.empty() || reports.size() != weights.size()) {
    throw DataError("weighted_mean: need one weight per report and at least one report");
  }
  MetricsReport out;
  out.task = reports.front().task;
  for (const auto& r : reports) out.n += r.n;
  for (const auto& f : kFields) {
    double num = 0.0, den = 0.0;
    for (std::size_t k = 0; k < reports.size(); ++k) {
      if (const auto& v = reports[k].*f.field) {
        num += weights[k] * *v;
        den += weights[k];
      }
    }
    if (den > 0.0) out.*f.field = num / den;
  }
  return out;
}

}  // namespace m2fedaqi
