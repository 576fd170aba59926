#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "m2fedaqi/bytes.hpp"
#include "m2fedaqi/model_config.hpp"

namespace m2fedaqi {

/// Evaluation summary for one task. Fields not belonging to the task are
/// empty. For regression an empty r2 means "undefined" (constant targets
/// with nonzero residual); for classification an empty macro_auc means no
/// class had both positives and negatives.
struct MetricsReport {
  Task task = Task::kClassification;
  std::size_t n = 0;
  std::optional<double> mae, rmse, r2;
  std::optional<double> accuracy, macro_f1, macro_auc;

  /// Flat JSON object with keys task, n, mae, rmse, r2, accuracy, macro_f1,
  /// macro_auc. Inapplicable fields are null; an undefined r2 (or AUC) is
  /// the string "undefined".
  std::string to_json() const;
  static MetricsReport from_json(const std::string& text);

  void encode(ByteWriter& out) const;
  static MetricsReport decode(ByteReader& in);

  /// Headline value: accuracy for classification, R^2 for regression.
  std::optional<double> headline() const;

  bool operator==(const MetricsReport&) const = default;
};

MetricsReport regression_metrics(std::span<const double> y, std::span<const double> y_hat);

/// `probs` is [n x C], rows non-negative and summing to 1 within 1e-5.
MetricsReport classification_metrics(std::span<const int> labels, const Eigen::MatrixXd& probs);

/// Index of the largest entry; ties resolve to the lowest index.
int argmax_lowest(const Eigen::Ref<const Eigen::RowVectorXd>& row);

/// One-vs-rest ROC AUC by trapezoidal integration over all thresholds
/// (tied scores share one ROC step). Empty when either side has no samples.
std::optional<double> roc_auc(std::span<const double> scores, std::span<const bool> positive);

/// Macro F1 over classes present in labels or predictions.
double macro_f1(std::span<const int> labels, std::span<const int> predicted, int num_classes);

/// Per-field weighted mean of reports (weights are sample counts); fields
/// missing from a report are skipped and the remaining weights renormalized.
MetricsReport weighted_mean(std::span<const MetricsReport> reports, std::span<const double> weights);

}  // namespace m2fedaqi
