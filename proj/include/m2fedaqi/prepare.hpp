#pragma once

#include <string>
#include <vector>

#include "m2fedaqi/data.hpp"
#include "m2fedaqi/partition.hpp"

namespace m2fedaqi {

/// Test holdout plus Dirichlet partition of the remaining training pool.
/// Normalization and target scaling are fitted on the training pool only.
struct FederatedSplit {
  Dataset train;  // raw features
  Dataset test;   // raw features
  IndexLists clients;  // indices into `train`
  NormalizationStats stats;
  float target_mean = 0.0f;
  float target_scale = 1.0f;

  /// Normalized local dataset of client k.
  Dataset client(std::size_t k) const;
  Dataset normalized_train() const;
  Dataset normalized_test() const;
  /// Counts per AQI class for each client.
  std::vector<std::vector<std::size_t>> class_histogram() const;
  DatasetManifest manifest_for(const std::string& name, const std::string& split, std::size_t n,
                               const std::string& features_path) const;
};

FederatedSplit split_federated(const Dataset& raw, const PartitionConfig& partition, double test_fraction);

struct PreparedFiles {
  std::vector<std::string> client_manifests;
  std::string train_manifest;
  std::string test_manifest;
  std::string summary_csv;
};

/// Writes client-k.{m2fa,manifest}, train.*, test.* and partition_summary.csv into `out_dir`.
PreparedFiles write_federated_split(const FederatedSplit& split, const std::string& out_dir);

}  // namespace m2fedaqi
