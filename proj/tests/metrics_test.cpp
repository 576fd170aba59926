#include <gtest/gtest.h>

#include <algorithm>
#include <memory>
#include <numeric>
#include <span>

#include "m2fedaqi/error.hpp"
#include "m2fedaqi/metrics.hpp"
#include "m2fedaqi/rng.hpp"

namespace m2fedaqi {
namespace {

// Probability rows whose argmax is `pred`, 6 classes.
Eigen::MatrixXd confident(const std::vector<int>& pred) {
  Eigen::MatrixXd p = Eigen::MatrixXd::Constant(static_cast<Eigen::Index>(pred.size()), 6, 0.02);
  for (std::size_t i = 0; i < pred.size(); ++i) p(static_cast<Eigen::Index>(i), pred[i]) = 0.9;
  return p;
}

std::unique_ptr<bool[]> as_bool_storage;

std::span<const bool> as_bool(const std::vector<char>& v) {
  as_bool_storage = std::make_unique<bool[]>(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) as_bool_storage[i] = v[i] != 0;
  return {as_bool_storage.get(), v.size()};
}

// (concordant + ties / 2) / (positives * negatives) over all pairs.
double brute_force_auc(const std::vector<double>& s, const std::vector<char>& pos) {
  double num = 0, pairs = 0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    for (std::size_t j = 0; j < s.size(); ++j) {
      if (!pos[i] || pos[j]) continue;
      pairs += 1;
      if (s[i] > s[j]) num += 1;
      else if (s[i] == s[j]) num += 0.5;
    }
  }
  return num / pairs;
}

TEST(Regression, PerfectFit) {
  const std::vector<double> y = {3, 1, 4, 1, 5};
  const auto m = regression_metrics(y, y);
  EXPECT_EQ(*m.mae, 0.0);
  EXPECT_EQ(*m.rmse, 0.0);
  EXPECT_EQ(*m.r2, 1.0);
  EXPECT_FALSE(m.accuracy.has_value());
}

TEST(Regression, PredictTheMean) {
  const auto m = regression_metrics(std::vector<double>{0, 10}, std::vector<double>{5, 5});
  EXPECT_NEAR(*m.mae, 5.0, 1e-12);
  EXPECT_NEAR(*m.rmse, 5.0, 1e-12);
  EXPECT_NEAR(*m.r2, 0.0, 1e-12);
}

TEST(Regression, NegativeR2Fixture) {
  const auto m = regression_metrics(std::vector<double>{1, 2, 3, 4}, std::vector<double>{1, 2, 3, 8});
  EXPECT_NEAR(*m.mae, 1.0, 1e-6);
  EXPECT_NEAR(*m.rmse, 2.0, 1e-6);
  EXPECT_NEAR(*m.r2, -2.2, 1e-6);
  EXPECT_EQ(m.n, 4u);
}

TEST(Regression, ConstantTargets) {
  const std::vector<double> y = {7, 7, 7};
  EXPECT_EQ(*regression_metrics(y, y).r2, 1.0);
  const auto m = regression_metrics(y, std::vector<double>{7, 8, 7});
  EXPECT_FALSE(m.r2.has_value());
  EXPECT_NE(m.to_json().find("\"r2\":\"undefined\""), std::string::npos) << m.to_json();
}

TEST(Regression, MeanPredictorScoresZeroForAnyTargets) {
  RandomStream rng(4);
  for (int t = 0; t < 20; ++t) {
    std::vector<double> y(30);
    for (auto& v : y) v = 100 * rng.uniform();
    const double mean = std::accumulate(y.begin(), y.end(), 0.0) / 30.0;
    EXPECT_NEAR(*regression_metrics(y, std::vector<double>(30, mean)).r2, 0.0, 1e-6);
  }
}

TEST(Regression, Errors) {
  EXPECT_THROW(regression_metrics(std::vector<double>{}, std::vector<double>{}), DataError);
  EXPECT_THROW(regression_metrics(std::vector<double>{1}, std::vector<double>{1, 2}), DataError);
  EXPECT_THROW(regression_metrics(std::vector<double>{1}, std::vector<double>{std::nan("")}), DataError);
}

TEST(Classification, PerfectClassifier) {
  const std::vector<int> labels = {0, 1, 2, 3, 4, 5, 0, 1};
  const auto m = classification_metrics(labels, confident(labels));
  EXPECT_EQ(*m.accuracy, 1.0);
  EXPECT_NEAR(*m.macro_f1, 1.0, 1e-12);
  EXPECT_NEAR(*m.macro_auc, 1.0, 1e-12);
  EXPECT_FALSE(m.mae.has_value());
}

TEST(Classification, ConfusionFixture) {
  const std::vector<int> labels = {0, 1, 2, 1};
  const auto m = classification_metrics(labels, confident({0, 2, 2, 1}));
  EXPECT_NEAR(*m.accuracy, 0.75, 1e-6);
  EXPECT_NEAR(*m.macro_f1, 7.0 / 9.0, 1e-6);
}

TEST(Classification, PairCountingFixture) {
  const std::vector<double> s = {0.1, 0.4, 0.35, 0.8};
  const std::vector<char> pos = {0, 0, 1, 1};
  EXPECT_NEAR(*roc_auc(s, as_bool(pos)), 0.75, 1e-12);
}

TEST(Classification, AucMatchesBruteForce) {
  RandomStream rng(11);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 2 + rng() % 49;
    std::vector<double> s(n);
    std::vector<char> pos(n);
    for (std::size_t i = 0; i < n; ++i) {
      s[i] = std::floor(rng.uniform() * 8) / 8;  // coarse grid forces ties
      pos[i] = rng.uniform() < 0.4;
    }
    pos[0] = true;
    pos[1] = false;
    EXPECT_NEAR(*roc_auc(s, as_bool(pos)), brute_force_auc(s, pos), 1e-12) << "trial " << trial;
  }
}

TEST(Classification, AucUndefinedWithoutBothSides) {
  EXPECT_FALSE(roc_auc(std::vector<double>{0.1, 0.2}, as_bool({1, 1})).has_value());
}

TEST(Classification, AbsentClassesAreSkippedInAuc) {
  // Only classes 0 and 1 appear; AUC averages over those two.
  const std::vector<int> labels = {0, 0, 1, 1};
  Eigen::MatrixXd p = Eigen::MatrixXd::Zero(4, 6);
  p.row(0) << 0.6, 0.4, 0, 0, 0, 0;
  p.row(1) << 0.3, 0.7, 0, 0, 0, 0;
  p.row(2) << 0.2, 0.8, 0, 0, 0, 0;
  p.row(3) << 0.5, 0.5, 0, 0, 0, 0;
  const auto m = classification_metrics(labels, p);
  std::vector<double> s0 = {0.6, 0.3, 0.2, 0.5}, s1 = {0.4, 0.7, 0.8, 0.5};
  const double expected = 0.5 * (brute_force_auc(s0, {1, 1, 0, 0}) +
                                 brute_force_auc(s1, {0, 0, 1, 1}));
  EXPECT_NEAR(*m.macro_auc, expected, 1e-12);
  // Row 3 ties and resolves to class 0, so rows 0 and 2 are the hits.
  EXPECT_NEAR(*m.accuracy, 0.5, 1e-12);
}

TEST(Classification, ArgmaxTieBreaksLow) {
  Eigen::RowVectorXd r(6);
  r << 0.1, 0.3, 0.3, 0.1, 0.1, 0.1;
  EXPECT_EQ(argmax_lowest(r), 1);
}

TEST(Classification, PermutationInvariance) {
  RandomStream rng(3);
  const Eigen::Index n = 40;
  std::vector<int> labels(n);
  Eigen::MatrixXd p(n, 6);
  for (Eigen::Index i = 0; i < n; ++i) {
    labels[static_cast<std::size_t>(i)] = static_cast<int>(rng() % 6);
    for (int c = 0; c < 6; ++c) p(i, c) = rng.uniform() + 1e-3;
    p.row(i) /= p.row(i).sum();
  }
  const auto a = classification_metrics(labels, p);
  std::vector<Eigen::Index> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<int> l2(n);
  Eigen::MatrixXd p2(n, 6);
  for (Eigen::Index i = 0; i < n; ++i) {
    l2[static_cast<std::size_t>(i)] = labels[static_cast<std::size_t>(order[i])];
    p2.row(i) = p.row(order[i]);
  }
  const auto b = classification_metrics(l2, p2);
  EXPECT_NEAR(*a.accuracy, *b.accuracy, 1e-12);
  EXPECT_NEAR(*a.macro_f1, *b.macro_f1, 1e-12);
  EXPECT_NEAR(*a.macro_auc, *b.macro_auc, 1e-12);

  std::vector<int> pred(n);
  for (Eigen::Index i = 0; i < n; ++i) pred[static_cast<std::size_t>(i)] = argmax_lowest(p.row(i));
  double hits = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) hits += labels[i] == pred[i];
  EXPECT_NEAR(*a.accuracy, hits / n, 1e-12);
  EXPECT_NEAR(*a.macro_f1, macro_f1(labels, pred, 6), 1e-12);
}

TEST(Classification, MalformedInput) {
  const std::vector<int> labels = {0};
  Eigen::MatrixXd bad = Eigen::MatrixXd::Constant(1, 6, 0.5);
  EXPECT_THROW(classification_metrics(labels, bad), DataError);
  EXPECT_THROW(classification_metrics(std::vector<int>{}, Eigen::MatrixXd(0, 6)), DataError);
  const std::vector<int> out_of_range = {6};
  EXPECT_THROW(classification_metrics(out_of_range, confident({0})), DataError);
}

TEST(Report, JsonRoundTripAndCodec) {
  const std::vector<int> labels = {0, 1, 2, 1};
  const auto m = classification_metrics(labels, confident({0, 2, 2, 1}));
  const auto json = m.to_json();
  EXPECT_NE(json.find("\"mae\":null"), std::string::npos);
  for (const char* key : {"\"task\"", "\"n\"", "\"accuracy\"", "\"macro_f1\"", "\"macro_auc\"", "\"rmse\"", "\"r2\""}) {
    EXPECT_NE(json.find(key), std::string::npos) << key;
  }
  EXPECT_EQ(MetricsReport::from_json(json), m);
  ByteWriter w;
  m.encode(w);
  ByteReader r(w.bytes());
  EXPECT_EQ(MetricsReport::decode(r), m);

  const auto reg = regression_metrics(std::vector<double>{7, 7}, std::vector<double>{7, 8});
  EXPECT_EQ(MetricsReport::from_json(reg.to_json()), reg);
}

TEST(Report, WeightedMeanFixture) {
  MetricsReport a, b;
  a.n = 10;
  a.accuracy = 1.0;
  b.n = 30;
  b.accuracy = 0.5;
  b.macro_auc = 0.8;
  const std::vector<MetricsReport> reports = {a, b};
  const std::vector<double> w = {10, 30};
  const auto m = weighted_mean(reports, w);
  EXPECT_NEAR(*m.accuracy, 0.625, 1e-12);
  EXPECT_NEAR(*m.macro_auc, 0.8, 1e-12);
  EXPECT_EQ(m.n, 40u);
}

}  // namespace
}  // namespace m2fedaqi
