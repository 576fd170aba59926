#include "m2fedaqi/prepare.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>

#include "m2fedaqi/error.hpp"

namespace m2fedaqi {

Dataset FederatedSplit::client(std::size_t k) const { return normalize(train.subset(clients.at(k)), stats); }

Dataset FederatedSplit::normalized_train() const { return normalize(train, stats); }

Dataset FederatedSplit::normalized_test() const { return normalize(test, stats); }

std::vector<std::vector<std::size_t>> FederatedSplit::class_histogram() const {
  std::vector<std::vector<std::size_t>> out(clients.size(), std::vector<std::size_t>(kNumAqiClasses, 0));
  for (std::size_t k = 0; k < clients.size(); ++k) {
    for (auto i : clients[k]) ++out[k][train.labels[i]];
  }
  return out;
}

DatasetManifest FederatedSplit::manifest_for(const std::string& name, const std::string& split, std::size_t n,
                                             const std::string& features_path) const {
  DatasetManifest m;
  m.name = name;
  m.split = split;
  m.d_tab = train.d_tab();
  m.d_img = train.d_img();
  m.n = n;
  m.stats = stats;
  m.target_mean = target_mean;
  m.target_scale = target_scale;
  m.features_path = features_path;
  return m;
}

FederatedSplit split_federated(const Dataset& raw, const PartitionConfig& partition, double test_fraction) {
  partition.validate();
  raw.validate();
  const auto holdout = split_holdout(raw.size(), test_fraction, RandomStream(partition.seed).derive("test-split"));
  FederatedSplit out;
  out.train = raw.subset(holdout.kept);
  out.test = raw.subset(holdout.held_out);
  out.train.name = raw.name + "-train";
  out.test.name = raw.name + "-test";
  if (out.train.size() == 0) throw DataError("no training samples left after the test split");
  out.clients = partition_dirichlet(out.train.label_vector(), partition);
  out.stats = NormalizationStats::compute(out.train);

  double sum = 0.0, sq = 0.0;
  for (float v : out.train.pm25) sum += v;
  const double mean = sum / static_cast<double>(out.train.size());
  for (float v : out.train.pm25) sq += (v - mean) * (v - mean);
  const double sd = std::sqrt(sq / static_cast<double>(out.train.size()));
  out.target_mean = static_cast<float>(mean);
  out.target_scale = sd > 0.0 ? static_cast<float>(sd) : 1.0f;
  return out;
}

PreparedFiles write_federated_split(const FederatedSplit& split, const std::string& out_dir) {
  namespace fs = std::filesystem;
  fs::create_directories(out_dir);
  PreparedFiles files;
  auto emit = [&](const Dataset& d, const std::string& stem, const std::string& split_name) {
    write_dataset_file((fs::path(out_dir) / (stem + ".m2fa")).string(), d);
    const auto path = (fs::path(out_dir) / (stem + ".manifest")).string();
    split.manifest_for(stem, split_name, d.size(), stem + ".m2fa").write(path);
    return path;
  };
  for (std::size_t k = 0; k < split.clients.size(); ++k) {
    files.client_manifests.push_back(
        emit(split.train.subset(split.clients[k]), "client-" + std::to_string(k), "train"));
  }
  files.train_manifest = emit(split.train, "train", "train");
  if (split.test.size() > 0) files.test_manifest = emit(split.test, "test", "test");

  files.summary_csv = (fs::path(out_dir) / "partition_summary.csv").string();
  std::ofstream out(files.summary_csv, std::ios::trunc);
  if (!out) throw IoError("cannot write " + files.summary_csv);
  out << "client,n";
  for (int c = 0; c < kNumAqiClasses; ++c) out << ",class_" << c;
  out << "\n";
  const auto hist = split.class_histogram();
  for (std::size_t k = 0; k < hist.size(); ++k) {
    out << k << "," << split.clients[k].size();
    for (auto v : hist[k]) out << "," << v;
    out << "\n";
  }
  if (!out) throw IoError("short write to " + files.summary_csv);
  return files;
}

}  // namespace m2fedaqi
