#include "m2fedaqi/transport/messages.hpp"

#include <cmath>

#include "m2fedaqi/error.hpp"

namespace m2fedaqi::transport {

namespace {

void check_finite(std::span<const float> weights) {
  for (std::size_t i = 0; i < weights.size(); ++i) {
    if (!std::isfinite(weights[i])) {
      throw ProtocolError("weight vector holds a non-finite value at index " + std::to_string(i));
    }
  }
}

Frame make(MessageKind kind, std::uint32_t round, ByteWriter&& w) {
  Frame f;
  f.kind = kind;
  f.round = round;
  f.payload = w.take();
  return f;
}

void expect_kind(const Frame& f, MessageKind kind) {
  if (f.kind != kind) {
    throw ProtocolError(std::string("expected ") + to_string(kind) + ", received " + to_string(f.kind));
  }
}

template <typename Fn>
auto parse(const Frame& f, MessageKind kind, Fn&& body) {
  expect_kind(f, kind);
  ByteReader r(f.payload);
  try {
    auto out = body(r);
    r.expect_end();
    return out;
  } catch (const CodecError& e) {
    throw ProtocolError(std::string("malformed ") + to_string(kind) + ": " + e.what());
  }
}

}  // namespace

void write_weights(ByteWriter& out, std::span<const float> weights) {
  check_finite(weights);
  out.u64(weights.size());
  out.f32_array(weights);
}

std::vector<float> read_weights(ByteReader& in) {
  const auto count = in.u64();
  if (count > in.remaining() / 4) {
    throw CodecError("weight vector declares " + std::to_string(count) + " values (" + std::to_string(count * 4) +
                     " bytes) but only " + std::to_string(in.remaining()) + " bytes follow");
  }
  std::vector<float> out(count);
  in.f32_array(out);
  check_finite(out);
  return out;
}

std::vector<std::uint8_t> encode_weights(std::span<const float> weights) {
  ByteWriter w;
  write_weights(w, weights);
  return w.take();
}

std::vector<float> decode_weights(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes);
  if (bytes.size() < 8) {
    throw CodecError("weight payload needs an 8-byte header, got " + std::to_string(bytes.size()) + " bytes");
  }
  const auto count = ByteReader(bytes).u64();
  const std::size_t body = bytes.size() - 8;
  if (body % 4 != 0 || body / 4 != count) {
    throw CodecError("weight payload length mismatch: header declares " + std::to_string(count) +
                     " values, expected " + std::to_string(count) + "*4 + 8 bytes, got " + std::to_string(bytes.size()));
  }
  return read_weights(r);
}

Frame to_frame(const JoinRequest& m) {
  ByteWriter w;
  w.str(m.client_name);
  w.u32(m.d_tab);
  w.u64(m.dataset_size);
  return make(MessageKind::kJoinRequest, 0, std::move(w));
}

Frame to_frame(const JoinAccept& m) {
  ByteWriter w;
  w.u32(m.client_id);
  m.model.encode(w);
  m.federation.encode(w);
  return make(MessageKind::kJoinAccept, 0, std::move(w));
}

Frame to_frame(const JoinReject& m) {
  ByteWriter w;
  w.str(m.reason);
  return make(MessageKind::kJoinReject, 0, std::move(w));
}

Frame to_frame(const RoundStart& m) {
  ByteWriter w;
  write_weights(w, m.weights);
  return make(MessageKind::kRoundStart, m.round, std::move(w));
}

Frame to_frame(const RoundUpdate& m) {
  ByteWriter w;
  write_weights(w, m.weights);
  w.u64(m.layout_hash);
  w.u64(m.n_samples);
  w.f64(m.loss);
  m.metrics.encode(w);
  return make(MessageKind::kRoundUpdate, m.round, std::move(w));
}

Frame to_frame(const RoundResult& m) {
  ByteWriter w;
  m.metrics.encode(w);
  return make(MessageKind::kRoundResult, m.round, std::move(w));
}

Frame to_frame(const Shutdown& m) {
  ByteWriter w;
  w.u64(m.final_weights_hash);
  return make(MessageKind::kShutdown, 0, std::move(w));
}

JoinRequest parse_join_request(const Frame& f) {
  return parse(f, MessageKind::kJoinRequest, [](ByteReader& r) {
    JoinRequest m;
    m.client_name = r.str();
    m.d_tab = r.u32();
    m.dataset_size = r.u64();
    return m;
  });
}

JoinAccept parse_join_accept(const Frame& f) {
  return parse(f, MessageKind::kJoinAccept, [](ByteReader& r) {
    JoinAccept m;
    m.client_id = r.u32();
    m.model = ModelConfig::decode(r);
    m.federation = FederationConfig::decode(r);
    return m;
  });
}

JoinReject parse_join_reject(const Frame& f) {
  return parse(f, MessageKind::kJoinReject, [](ByteReader& r) { return JoinReject{r.str()}; });
}

RoundStart parse_round_start(const Frame& f) {
  return parse(f, MessageKind::kRoundStart, [&f](ByteReader& r) { return RoundStart{f.round, read_weights(r)}; });
}

RoundUpdate parse_round_update(const Frame& f) {
  return parse(f, MessageKind::kRoundUpdate, [&f](ByteReader& r) {
    RoundUpdate m;
    m.round = f.round;
    m.weights = read_weights(r);
    m.layout_hash = r.u64();
    m.n_samples = r.u64();
    m.loss = r.f64();
    m.metrics = MetricsReport::decode(r);
    return m;
  });
}

RoundResult parse_round_result(const Frame& f) {
  return parse(f, MessageKind::kRoundResult,
               [&f](ByteReader& r) { return RoundResult{f.round, MetricsReport::decode(r)}; });
}

Shutdown parse_shutdown(const Frame& f) {
  return parse(f, MessageKind::kShutdown, [](ByteReader& r) { return Shutdown{r.u64()}; });
}

RoundUpdate to_round_update(const ClientUpdate& update, std::uint32_t round) {
  return RoundUpdate{round, update.weights, update.layout_hash, update.n_samples, update.train_loss, update.validation};
}

ClientUpdate to_client_update(const RoundUpdate& msg, std::uint32_t client_id) {
  ClientUpdate u;
  u.client_id = client_id;
  u.weights = msg.weights;
  u.layout_hash = msg.layout_hash;
  u.n_samples = msg.n_samples;
  u.train_loss = msg.loss;
  u.validation = msg.metrics;
  return u;
}

}  // namespace m2fedaqi::transport
