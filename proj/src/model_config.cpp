#include "m2fedaqi/model_config.hpp"

#include <cmath>

#include "m2fedaqi/error.hpp"

namespace m2fedaqi {

const char* to_string(Task task) {
  return task == Task::kClassification ? "classification" : "regression";
}

const char* to_string(Modality modality) {
  switch (modality) {
    case Modality::kBoth: return "both";
    case Modality::kImageOnly: return "image";
    case Modality::kTabularOnly: return "tabular";
  }
  return "both";
}

Task parse_task(const std::string& s) {
  if (s == "classification") return Task::kClassification;
  if (s == "regression") return Task::kRegression;
  throw ConfigError("unknown task '" + s + "' (expected classification|regression)");
}

Modality parse_modality(const std::string& s) {
  if (s == "both") return Modality::kBoth;
  if (s == "image") return Modality::kImageOnly;
  if (s == "tabular") return Modality::kTabularOnly;
  throw ConfigError("unknown modality '" + s + "' (expected both|image|tabular)");
}

void ModelConfig::validate() const {
  if (d_img_in <= 0) throw ConfigError("model.d_img must be positive");
  if (d_tab_in <= 0) throw ConfigError("model.d_tab must be positive");
  if (d_emb <= 0) throw ConfigError("model.d_emb must be positive");
  if (task == Task::kClassification && num_classes < 2) {
    throw ConfigError("model.num_classes must be at least 2");
  }
  if (!(dropout_p >= 0.0f && dropout_p < 1.0f)) {
    throw ConfigError("model.dropout_p must lie in [0, 1)");
  }
  if (!std::isfinite(target_mean) || !(target_scale > 0.0f) || !std::isfinite(target_scale)) {
    throw ConfigError("model target scaling must be finite with positive scale");
  }
}

void ModelConfig::encode(ByteWriter& out) const {
  out.u32(static_cast<std::uint32_t>(d_img_in));
  out.u32(static_cast<std::uint32_t>(d_tab_in));
  out.u32(static_cast<std::uint32_t>(d_emb));
  out.u8(static_cast<std::uint8_t>(task));
  out.u32(static_cast<std::uint32_t>(num_classes));
  out.f32(dropout_p);
  out.u8(use_skip ? 1 : 0);
  out.u8(use_film_fusion ? 1 : 0);
  out.u8(static_cast<std::uint8_t>(modality));
  out.f32(target_mean);
  out.f32(target_scale);
}

ModelConfig ModelConfig::decode(ByteReader& in) {
  ModelConfig c;
  c.d_img_in = static_cast<int>(in.u32());
  c.d_tab_in = static_cast<int>(in.u32());
  c.d_emb = static_cast<int>(in.u32());
  const auto task = in.u8();
  if (task > 1) throw CodecError("model config: unknown task code " + std::to_string(task));
  c.task = static_cast<Task>(task);
  c.num_classes = static_cast<int>(in.u32());
  c.dropout_p = in.f32();
  c.use_skip = in.u8() != 0;
  c.use_film_fusion = in.u8() != 0;
  const auto modality = in.u8();
  if (modality > 2) throw CodecError("model config: unknown modality code " + std::to_string(modality));
  c.modality = static_cast<Modality>(modality);
  c.target_mean = in.f32();
  c.target_scale = in.f32();
  try {
    c.validate();
  } catch (const ConfigError& e) {
    throw CodecError(std::string("model config: ") + e.what());
  }
  return c;
}

}  // namespace m2fedaqi
