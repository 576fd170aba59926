#pragma once

#include <cstdint>
#include <string>

#include "m2fedaqi/bytes.hpp"

namespace m2fedaqi {

enum class Task : std::uint8_t { kClassification = 0, kRegression = 1 };

/// Which input branches feed the prediction head. kBoth is the full
/// multimodal network; the single-branch settings exist for ablations.
enum class Modality : std::uint8_t { kBoth = 0, kImageOnly = 1, kTabularOnly = 2 };

const char* to_string(Task task);
const char* to_string(Modality modality);
Task parse_task(const std::string& s);
Modality parse_modality(const std::string& s);

inline constexpr int kNumAqiClasses = 6;

struct ModelConfig {
  int d_img_in = 1280;
  int d_tab_in = 10;
  int d_emb = 64;
  Task task = Task::kClassification;
  int num_classes = kNumAqiClasses;
  float dropout_p = 0.2f;
  bool use_skip = true;
  bool use_film_fusion = true;
  Modality modality = Modality::kBoth;
  // Regression targets are standardized as (y - target_mean) / target_scale
  // for the loss; predictions are mapped back to the raw scale.
  float target_mean = 0.0f;
  float target_scale = 1.0f;

  bool has_image() const { return modality != Modality::kTabularOnly; }
  bool has_tabular() const { return modality != Modality::kImageOnly; }
  bool has_fusion_layer() const { return use_film_fusion && modality == Modality::kBoth; }
  /// Skip projection is needed only when the tabular width differs from the embedding width.
  bool has_skip_projection() const { return use_skip && has_tabular() && d_tab_in != d_emb; }
  int d_fused() const { return modality == Modality::kBoth ? 2 * d_emb : d_emb; }
  int output_dim() const { return task == Task::kClassification ? num_classes : 1; }

  /// Throws ConfigError on any invalid field.
  void validate() const;

  void encode(ByteWriter& out) const;
  static ModelConfig decode(ByteReader& in);

  bool operator==(const ModelConfig&) const = default;
};

}  // namespace m2fedaqi
