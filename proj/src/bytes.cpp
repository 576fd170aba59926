#include "m2fedaqi/bytes.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "m2fedaqi/error.hpp"

namespace m2fedaqi {

const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kDimension: return "dimension error";
    case ErrorKind::kConfig: return "config error";
    case ErrorKind::kCodec: return "codec error";
    case ErrorKind::kLayout: return "layout error";
    case ErrorKind::kData: return "data error";
    case ErrorKind::kPartition: return "partition error";
    case ErrorKind::kAggregation: return "aggregation error";
    case ErrorKind::kProtocol: return "protocol error";
    case ErrorKind::kAuth: return "auth error";
    case ErrorKind::kTimeout: return "timeout";
    case ErrorKind::kIo: return "i/o error";
  }
  return "error";
}

int exit_code_for(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kConfig:
      return 2;
    case ErrorKind::kDimension:
    case ErrorKind::kCodec:
    case ErrorKind::kLayout:
    case ErrorKind::kData:
    case ErrorKind::kPartition:
    case ErrorKind::kIo:
      return 3;
    case ErrorKind::kAuth:
      return 4;
    case ErrorKind::kAggregation:
    case ErrorKind::kProtocol:
    case ErrorKind::kTimeout:
      return 5;
  }
  return 1;
}

void ByteWriter::u32(std::uint32_t v) {
  for (int i = 0; i < 4; ++i) buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void ByteWriter::u64(std::uint64_t v) {
  for (int i = 0; i < 8; ++i) buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void ByteWriter::f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
void ByteWriter::f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }

void ByteWriter::str(std::string_view s) {
  u32(static_cast<std::uint32_t>(s.size()));
  buf_.insert(buf_.end(), s.begin(), s.end());
}

void ByteWriter::raw(std::span<const std::uint8_t> bytes) {
  buf_.insert(buf_.end(), bytes.begin(), bytes.end());
}

void ByteWriter::f32_array(std::span<const float> values) {
  const std::size_t start = buf_.size();
  buf_.resize(start + 4 * values.size());
  if constexpr (std::endian::native == std::endian::little) {
    std::memcpy(buf_.data() + start, values.data(), 4 * values.size());
  } else {
    for (std::size_t i = 0; i < values.size(); ++i) {
      const auto bits = std::bit_cast<std::uint32_t>(values[i]);
      for (int b = 0; b < 4; ++b) buf_[start + 4 * i + b] = static_cast<std::uint8_t>(bits >> (8 * b));
    }
  }
}

void ByteReader::need(std::size_t n) const {
  if (remaining() < n) {
    throw CodecError("truncated input: need " + std::to_string(n) + " bytes at offset " +
                     std::to_string(pos_) + ", have " + std::to_string(remaining()));
  }
}

std::uint8_t ByteReader::u8() {
  need(1);
  return bytes_[pos_++];
}

std::uint32_t ByteReader::u32() {
  need(4);
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes_[pos_ + i]) << (8 * i);
  pos_ += 4;
  return v;
}

std::uint64_t ByteReader::u64() {
  need(8);
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(bytes_[pos_ + i]) << (8 * i);
  pos_ += 8;
  return v;
}

float ByteReader::f32() { return std::bit_cast<float>(u32()); }
double ByteReader::f64() { return std::bit_cast<double>(u64()); }

std::string ByteReader::str() {
  const std::uint32_t n = u32();
  auto bytes = raw(n);
  return std::string(bytes.begin(), bytes.end());
}

std::span<const std::uint8_t> ByteReader::raw(std::size_t n) {
  need(n);
  auto out = bytes_.subspan(pos_, n);
  pos_ += n;
  return out;
}

void ByteReader::f32_array(std::span<float> out) {
  auto bytes = raw(4 * out.size());
  if constexpr (std::endian::native == std::endian::little) {
    std::memcpy(out.data(), bytes.data(), bytes.size());
  } else {
    for (std::size_t i = 0; i < out.size(); ++i) {
      std::uint32_t bits = 0;
      for (int b = 0; b < 4; ++b) bits |= static_cast<std::uint32_t>(bytes[4 * i + b]) << (8 * b);
      out[i] = std::bit_cast<float>(bits);
    }
  }
}

void ByteReader::expect_end() const {
  if (remaining() != 0) {
    throw CodecError("trailing bytes: " + std::to_string(remaining()) + " unread at offset " +
                     std::to_string(pos_));
  }
}

std::vector<std::uint8_t> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), {});
}

void write_file(const std::string& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("short write to " + path);
}

std::uint64_t fnv1a(std::span<const std::uint8_t> bytes, std::uint64_t seed) {
  std::uint64_t h = seed;
  for (auto b : bytes) {
    h ^= b;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::uint64_t fingerprint(std::span<const float> values) {
  return fnv1a({reinterpret_cast<const std::uint8_t*>(values.data()), values.size() * 4});
}

}  // namespace m2fedaqi
