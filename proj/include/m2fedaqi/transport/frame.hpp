#pragma once

#include <cstdint>
#include <span>
#include <vector>

namespace m2fedaqi::transport {

enum class MessageKind : std::uint8_t {
  kJoinRequest = 1,
  kJoinAccept = 2,
  kJoinReject = 3,
  kRoundStart = 4,
  kRoundUpdate = 5,
  kRoundResult = 6,
  kShutdown = 7,
};

const char* to_string(MessageKind kind);
bool is_known_kind(std::uint8_t code);

inline constexpr std::uint8_t kProtocolVersion = 1;
/// length u32 + version u8 + kind u8 + round u32 ahead of the payload.
inline constexpr std::size_t kFrameHeaderSize = 10;
/// Header plus trailing crc32.
inline constexpr std::size_t kFrameOverhead = kFrameHeaderSize + 4;
inline constexpr std::uint32_t kDefaultMaxFrame = 64u << 20;

struct Frame {
  MessageKind kind = MessageKind::kJoinRequest;
  std::uint32_t round = 0;
  std::vector<std::uint8_t> payload;

  std::size_t wire_size() const { return kFrameOverhead + payload.size(); }
  bool operator==(const Frame&) const = default;
};

std::uint32_t crc32(std::span<const std::uint8_t> bytes);

std::vector<std::uint8_t> encode_frame(const Frame& frame);
/// Parses exactly one frame occupying all of `bytes`.
Frame decode_frame(std::span<const std::uint8_t> bytes, std::uint32_t max_payload = kDefaultMaxFrame);

/// Blocking byte transport underneath the framing layer.
class ByteStream {
 public:
  virtual ~ByteStream() = default;
  virtual void write_all(std::span<const std::uint8_t> bytes) = 0;
  /// Fills `out` completely or throws.
  virtual void read_exact(std::span<std::uint8_t> out) = 0;
};

void send_frame(ByteStream& stream, const Frame& frame);

/// Reads the header, rejects oversized lengths, bad versions and unknown
/// kinds before allocating the payload, then verifies the crc. All
/// violations throw ProtocolError.
Frame recv_frame(ByteStream& stream, std::uint32_t max_payload = kDefaultMaxFrame);

/// In-memory stream; used by tests and for replaying captured frames.
class MemoryStream : public ByteStream {
 public:
  MemoryStream() = default;
  explicit MemoryStream(std::vector<std::uint8_t> contents) : buf_(std::move(contents)) {}

  void write_all(std::span<const std::uint8_t> bytes) override;
  void read_exact(std::span<std::uint8_t> out) override;

  const std::vector<std::uint8_t>& contents() const { return buf_; }
  std::size_t read_position() const { return pos_; }

 private:
  std::vector<std::uint8_t> buf_;
  std::size_t pos_ = 0;
};

}  // namespace m2fedaqi::transport
