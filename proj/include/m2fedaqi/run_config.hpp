#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "m2fedaqi/federation.hpp"
#include "m2fedaqi/model_config.hpp"
#include "m2fedaqi/transport/frame.hpp"
#include "m2fedaqi/transport/tls.hpp"

namespace m2fedaqi {

/// Flat `section.key = value` configuration shared by the command suite.
/// Lines starting with '#' are comments. Unknown keys are rejected.
///
///   model.      d_tab d_img d_emb task dropout_p use_skip use_film_fusion modality
///   federation. rounds local_epochs lr batch_size expected_clients timeout_s seed validation_fraction
///   transport.  endpoint ca_cert cert key max_frame
///   data.       manifest test_manifest
///   output.     directory
struct RunConfig {
  ModelConfig model;
  FederationConfig federation;
  std::string endpoint = "127.0.0.1:7443";
  transport::TrustConfig trust;
  std::uint32_t max_frame = transport::kDefaultMaxFrame;
  std::string manifest;
  std::string test_manifest;
  std::string output_dir = ".";

  /// Sets one key from its text form; throws ConfigError naming the key.
  void set(const std::string& key, const std::string& value);
  /// Applies `key=value` strings (command-line overrides).
  void apply_overrides(const std::vector<std::string>& assignments);

  static RunConfig parse(std::string_view text, const std::string& origin = "<config>");
  static RunConfig load(const std::string& path);

  /// Makes every relative path absolute against `base` and applies the
  /// certificate environment overrides.
  void resolve_paths(const std::filesystem::path& base);

  static const std::vector<std::string>& keys();
};

bool parse_bool(const std::string& key, const std::string& value);

}  // namespace m2fedaqi
