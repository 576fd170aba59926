#pragma once

#include <chrono>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "m2fedaqi/federation.hpp"
#include "m2fedaqi/transport/tls.hpp"

namespace m2fedaqi::transport {

using LogFn = std::function<void(const std::string&)>;

/// Server-side channel over one authenticated session.
class TlsClientChannel : public ClientChannel {
 public:
  TlsClientChannel(std::uint32_t id, std::unique_ptr<TlsSession> session, std::uint32_t max_frame);

  std::uint32_t client_id() const override { return id_; }
  const std::string& name() const { return session_->peer_name(); }
  void start_round(std::uint32_t round, std::span<const float> weights) override;
  ClientUpdate collect(std::uint32_t round, Clock::time_point deadline) override;
  void finish_round(std::uint32_t round, const MetricsReport& aggregated) override;
  void shutdown(std::uint64_t final_weights_hash) override;
  TrafficCounters traffic() const override;

 private:
  std::uint32_t id_;
  std::unique_ptr<TlsSession> session_;
  std::uint32_t max_frame_;
};

struct ServerTransportOptions {
  Endpoint listen;
  TrustConfig trust;
  std::uint32_t max_frame = kDefaultMaxFrame;
  std::chrono::seconds handshake_timeout{10};
  LogFn log;
};

/// Listens for clients and runs the join phase.
class FederationServer {
 public:
  explicit FederationServer(ServerTransportOptions options);

  std::uint16_t port() const { return listener_.port(); }

  /// Accepts connections until K distinct authenticated clients have sent
  /// a valid JoinRequest, then assigns ids in ascending order of
  /// certificate common name and answers each with JoinAccept. Failed
  /// handshakes and invalid requests are logged and do not stop the
  /// server. Throws TimeoutError if K clients do not join by the deadline.
  void admit_clients(const ModelConfig& model, const FederationConfig& federation, Clock::time_point deadline);

  std::vector<ClientChannel*> channels() const;
  std::vector<std::string> client_names() const;
  std::size_t rejected_connections() const { return rejected_; }

 private:
  ServerTransportOptions options_;
  TlsContext context_;
  Listener listener_;
  std::vector<std::unique_ptr<TlsClientChannel>> channels_;
  std::size_t rejected_ = 0;
};

struct ClientRunOptions {
  Endpoint server;
  TrustConfig trust;
  std::string name;  // must equal the certificate common name
  std::chrono::seconds connect_timeout{60};
  std::chrono::seconds join_timeout{600};
  std::uint32_t max_frame = kDefaultMaxFrame;
  bool profile = true;
  std::chrono::milliseconds sample_interval{100};
  LogFn log;
};

struct ClientRunResult {
  std::uint32_t client_id = 0;
  ModelConfig model;
  FederationConfig federation;
  std::uint64_t final_weights_hash = 0;
  std::vector<RoundProfile> profiles;
};

/// Joins the federation with `local` (already normalized) and serves
/// rounds until Shutdown. An empty dataset is refused before connecting.
ClientRunResult run_client(const ClientRunOptions& options, const Dataset& local);

}  // namespace m2fedaqi::transport
