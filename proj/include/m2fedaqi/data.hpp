#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "m2fedaqi/model.hpp"
#include "m2fedaqi/nn/tensor.hpp"

namespace m2fedaqi {

/// AQI band index 0..5 with upper-inclusive bounds 50/100/150/200/300:
/// Good, Moderate, Unhealthy for Sensitive Groups, Unhealthy, Very Unhealthy, Hazardous.
int aqi_to_category(double aqi);
const char* aqi_category_name(int category);

struct Sample {
  std::uint64_t id = 0;
  std::vector<float> img_feat;
  std::vector<float> tab_feat;
  float pm25 = 0.0f;
  std::uint8_t class_label = 0;
};

/// Column-aligned storage for N samples; sample ids are row indices.
struct Dataset {
  std::string name;
  nn::Matrix<float> tabular;  // [N x d_tab]
  nn::Matrix<float> image;    // [N x d_img]
  std::vector<float> pm25;
  std::vector<std::uint8_t> labels;

  std::size_t size() const { return pm25.size(); }
  int d_tab() const { return static_cast<int>(tabular.cols()); }
  int d_img() const { return static_cast<int>(image.cols()); }

  Sample sample(std::size_t i) const;
  Dataset subset(std::span<const std::size_t> indices) const;
  Batch<float> batch(std::span<const std::size_t> indices) const;
  Batch<float> all() const;
  std::vector<int> label_vector() const { return {labels.begin(), labels.end()}; }

  /// Throws DataError naming the first offending row.
  void validate() const;

  bool operator==(const Dataset& other) const;
};

struct NormalizationStats {
  std::vector<float> mean;
  std::vector<float> stddev;

  static NormalizationStats compute(const Dataset& data);
};

/// z-scores tabular columns with the given stats; columns with stddev 0 map
/// to 0. Image features pass through unscaled.
Dataset normalize(const Dataset& data, const NormalizationStats& stats);

/// Binary feature file: "M2FA", u8 version, u64 rows, u32 d_tab, u32 d_img,
/// then per row d_tab f32, d_img f32, pm25 f32, class u8 (little-endian).
inline constexpr std::uint8_t kDatasetVersion = 1;

std::vector<std::uint8_t> encode_dataset(const Dataset& data);
Dataset decode_dataset(std::span<const std::uint8_t> bytes);
void write_dataset_file(const std::string& path, const Dataset& data);
Dataset read_dataset_file(const std::string& path);

/// UTF-8 key=value text describing one dataset file and its normalization.
struct DatasetManifest {
  std::string name;
  std::string split = "train";
  int d_tab = 0;
  int d_img = 0;
  std::size_t n = 0;
  NormalizationStats stats;
  float target_mean = 0.0f;
  float target_scale = 1.0f;
  bool supports_classification = true;
  bool supports_regression = true;
  std::string features_path;  // relative paths resolve against the manifest's directory

  void validate() const;
  void write(const std::string& path) const;
  static DatasetManifest read(const std::string& path);
};

/// Loads the feature file named by the manifest, checks it against the
/// manifest, and applies the manifest's normalization when requested.
Dataset load_dataset(const DatasetManifest& manifest, bool apply_normalization = true);

/// Copies the regression target scaling recorded in a manifest into a model config.
void apply_target_scaling(ModelConfig& cfg, const DatasetManifest& manifest);

}  // namespace m2fedaqi
