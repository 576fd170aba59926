#include "m2fedaqi/checkpoint.hpp"

#include <cstring>

#include "m2fedaqi/model.hpp"

namespace m2fedaqi {

namespace {
constexpr char kMagic[4] = {'M', '2', 'C', 'K'};
}

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& checkpoint) {
  ByteWriter w;
  w.raw({reinterpret_cast<const std::uint8_t*>(kMagic), 4});
  w.u8(kCheckpointVersion);
  checkpoint.config.encode(w);
  nn::encode_parameters(checkpoint.params, w);
  return w.take();
}

Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes);
  auto magic = r.raw(4);
  if (std::memcmp(magic.data(), kMagic, 4) != 0) throw CodecError("checkpoint: bad magic");
  const auto version = r.u8();
  if (version != kCheckpointVersion) {
    throw CodecError("checkpoint: unsupported format version " + std::to_string(version));
  }
  Checkpoint c;
  c.config = ModelConfig::decode(r);
  c.params = nn::decode_parameters(r);
  r.expect_end();
  if (!(c.params.layout() == model_layout(c.config))) {
    throw CodecError("checkpoint: parameter layout does not match the stored model config");
  }
  return c;
}

void save_checkpoint(const std::string& path, const Checkpoint& checkpoint) {
  write_file(path, encode_checkpoint(checkpoint));
}

Checkpoint load_checkpoint(const std::string& path) { return decode_checkpoint(read_file(path)); }

}  // namespace m2fedaqi
