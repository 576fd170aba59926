#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "m2fedaqi/federation.hpp"
#include "m2fedaqi/metrics.hpp"
#include "m2fedaqi/model_config.hpp"
#include "m2fedaqi/transport/frame.hpp"

namespace m2fedaqi::transport {

/// u64 element count followed by little-endian f32 values. Non-finite
/// elements are refused in both directions (ProtocolError); a byte length
/// that disagrees with the count is a CodecError.
std::vector<std::uint8_t> encode_weights(std::span<const float> weights);
std::vector<float> decode_weights(std::span<const std::uint8_t> bytes);

void write_weights(ByteWriter& out, std::span<const float> weights);
std::vector<float> read_weights(ByteReader& in);

struct JoinRequest {
  std::string client_name;
  std::uint32_t d_tab = 0;
  std::uint64_t dataset_size = 0;
};

struct JoinAccept {
  std::uint32_t client_id = 0;
  ModelConfig model;
  FederationConfig federation;
};

struct JoinReject {
  std::string reason;
};

struct RoundStart {
  std::uint32_t round = 0;
  std::vector<float> weights;
};

struct RoundUpdate {
  std::uint32_t round = 0;
  std::vector<float> weights;
  std::uint64_t layout_hash = 0;
  std::uint64_t n_samples = 0;
  double loss = 0.0;
  MetricsReport metrics;
};

struct RoundResult {
  std::uint32_t round = 0;
  MetricsReport metrics;
};

struct Shutdown {
  std::uint64_t final_weights_hash = 0;
};

// The round of round-scoped messages travels in the frame header.
Frame to_frame(const JoinRequest& m);
Frame to_frame(const JoinAccept& m);
Frame to_frame(const JoinReject& m);
Frame to_frame(const RoundStart& m);
Frame to_frame(const RoundUpdate& m);
Frame to_frame(const RoundResult& m);
Frame to_frame(const Shutdown& m);

/// Each parser checks the frame kind and consumes the whole payload.
JoinRequest parse_join_request(const Frame& f);
JoinAccept parse_join_accept(const Frame& f);
JoinReject parse_join_reject(const Frame& f);
RoundStart parse_round_start(const Frame& f);
RoundUpdate parse_round_update(const Frame& f);
RoundResult parse_round_result(const Frame& f);
Shutdown parse_shutdown(const Frame& f);

RoundUpdate to_round_update(const ClientUpdate& update, std::uint32_t round);
ClientUpdate to_client_update(const RoundUpdate& msg, std::uint32_t client_id);

}  // namespace m2fedaqi::transport
