#include "m2fedaqi/transport/frame.hpp"

#include <zlib.h>

#include <algorithm>
#include <string>

#include "m2fedaqi/bytes.hpp"
#include "m2fedaqi/error.hpp"

namespace m2fedaqi::transport {

const char* to_string(MessageKind kind) {
  switch (kind) {
    case MessageKind::kJoinRequest: return "JoinRequest";
    case MessageKind::kJoinAccept: return "JoinAccept";
    case MessageKind::kJoinReject: return "JoinReject";
    case MessageKind::kRoundStart: return "RoundStart";
    case MessageKind::kRoundUpdate: return "RoundUpdate";
    case MessageKind::kRoundResult: return "RoundResult";
    case MessageKind::kShutdown: return "Shutdown";
  }
  return "unknown";
}

bool is_known_kind(std::uint8_t code) { return code >= 1 && code <= 7; }

std::uint32_t crc32(std::span<const std::uint8_t> bytes) {
  uLong crc = ::crc32(0L, Z_NULL, 0);
  // zlib takes uInt lengths; feed large buffers in chunks.
  std::size_t offset = 0;
  while (offset < bytes.size()) {
    const auto chunk = static_cast<uInt>(std::min<std::size_t>(bytes.size() - offset, 1u << 30));
    crc = ::crc32(crc, bytes.data() + offset, chunk);
    offset += chunk;
  }
  return static_cast<std::uint32_t>(crc);
}

std::vector<std::uint8_t> encode_frame(const Frame& frame) {
  if (frame.payload.size() > 0xffffffffu) throw ProtocolError("frame payload exceeds 4 GiB");
  ByteWriter w;
  w.u32(static_cast<std::uint32_t>(frame.payload.size()));
  w.u8(kProtocolVersion);
  w.u8(static_cast<std::uint8_t>(frame.kind));
  w.u32(frame.round);
  w.raw(frame.payload);
  w.u32(crc32(frame.payload));
  return w.take();
}

namespace {

struct Header {
  std::uint32_t length;
  MessageKind kind;
  std::uint32_t round;
};

Header check_header(std::span<const std::uint8_t> bytes, std::uint32_t max_payload) {
  ByteReader r(bytes);
  Header h{};
  h.length = r.u32();
  const auto version = r.u8();
  const auto kind = r.u8();
  h.round = r.u32();
  if (h.length > max_payload) {
    throw ProtocolError("frame length " + std::to_string(h.length) + " exceeds maximum " + std::to_string(max_payload));
  }
  if (version != kProtocolVersion) throw ProtocolError("unsupported version " + std::to_string(version));
  if (!is_known_kind(kind)) throw ProtocolError("unknown message kind " + std::to_string(kind));
  h.kind = static_cast<MessageKind>(kind);
  return h;
}

void check_crc(std::span<const std::uint8_t> payload, std::uint32_t expected) {
  const auto actual = crc32(payload);
  if (actual != expected) {
    throw ProtocolError("frame crc mismatch: header says " + std::to_string(expected) + ", payload hashes to " +
                        std::to_string(actual));
  }
}

}  // namespace

Frame decode_frame(std::span<const std::uint8_t> bytes, std::uint32_t max_payload) {
  if (bytes.size() < kFrameOverhead) {
    throw ProtocolError("frame needs at least " + std::to_string(kFrameOverhead) + " bytes, got " +
                        std::to_string(bytes.size()));
  }
  const auto h = check_header(bytes.first(kFrameHeaderSize), max_payload);
  if (bytes.size() != kFrameOverhead + h.length) {
    throw ProtocolError("frame declares " + std::to_string(h.length) + " payload bytes but buffer holds " +
                        std::to_string(bytes.size() - kFrameOverhead));
  }
  Frame f;
  f.kind = h.kind;
  f.round = h.round;
  const auto payload = bytes.subspan(kFrameHeaderSize, h.length);
  ByteReader tail(bytes.subspan(kFrameHeaderSize + h.length));
  check_crc(payload, tail.u32());
  f.payload.assign(payload.begin(), payload.end());
  return f;
}

void send_frame(ByteStream& stream, const Frame& frame) { stream.write_all(encode_frame(frame)); }

Frame recv_frame(ByteStream& stream, std::uint32_t max_payload) {
  std::uint8_t header[kFrameHeaderSize];
  stream.read_exact(header);
  const auto h = check_header(header, max_payload);
  Frame f;
  f.kind = h.kind;
  f.round = h.round;
  f.payload.resize(h.length);
  stream.read_exact(f.payload);
  std::uint8_t crc_bytes[4];
  stream.read_exact(crc_bytes);
  ByteReader r(crc_bytes);
  check_crc(f.payload, r.u32());
  return f;
}

void MemoryStream::write_all(std::span<const std::uint8_t> bytes) { buf_.insert(buf_.end(), bytes.begin(), bytes.end()); }

void MemoryStream::read_exact(std::span<std::uint8_t> out) {
  if (buf_.size() - pos_ < out.size()) {
    throw ProtocolError("stream ended: needed " + std::to_string(out.size()) + " bytes, " +
                        std::to_string(buf_.size() - pos_) + " left");
  }
  std::copy_n(buf_.begin() + static_cast<std::ptrdiff_t>(pos_), out.size(), out.begin());
  pos_ += out.size();
}

}  // namespace m2fedaqi::transport
