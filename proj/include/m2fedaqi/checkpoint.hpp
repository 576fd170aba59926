#pragma once

#include <string>

#include "m2fedaqi/model_config.hpp"
#include "m2fedaqi/nn/tensor_set.hpp"

namespace m2fedaqi {

/// Checkpoint file: magic "M2CK", u8 format version, ModelConfig header,
/// then the ParameterSet file form.
inline constexpr std::uint8_t kCheckpointVersion = 1;

struct Checkpoint {
  ModelConfig config;
  nn::ParameterSet<float> params;
};

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& checkpoint);
/// Throws CodecError on a bad header or when the stored layout does not
/// match the layout implied by the stored config.
Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes);

void save_checkpoint(const std::string& path, const Checkpoint& checkpoint);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace m2fedaqi
