#pragma once

#include <chrono>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "m2fedaqi/data.hpp"
#include "m2fedaqi/history.hpp"
#include "m2fedaqi/metrics.hpp"
#include "m2fedaqi/model.hpp"
#include "m2fedaqi/profiling.hpp"

namespace m2fedaqi {

struct FederationConfig {
  int rounds = 50;
  int local_epochs = 5;
  float lr = 5e-4f;
  int batch_size = 32;
  int expected_clients = 1;
  double round_timeout_s = 600.0;
  std::uint64_t seed = 0;
  double validation_fraction = 0.1;  // local split carved by each client

  void validate() const;  // throws ConfigError
  void encode(ByteWriter& out) const;
  static FederationConfig decode(ByteReader& in);
  bool operator==(const FederationConfig&) const = default;
};

// ---------------------------------------------------------------------------
// Local training.

/// Stream for one pass over local data: keyed by (seed, client, round, epoch).
/// Centralized training uses client 0 and round = epoch, so a single client
/// with one local epoch per round replays the centralized schedule exactly.
RandomStream epoch_stream(std::uint64_t seed, std::uint32_t client_id, std::uint32_t round, std::uint32_t local_epoch);

/// One shuffled mini-batch SGD pass; returns the sample-weighted mean batch loss.
double train_epoch(ParameterSet<float>& params, const ModelConfig& cfg, const Dataset& data, float lr,
                   int batch_size, const RandomStream& stream);

/// Eval-mode metrics of `params` on `data`.
MetricsReport evaluate_model(const ParameterSet<float>& params, const ModelConfig& cfg, const Dataset& data);

struct ClientData {
  Dataset train;
  Dataset validation;
};

/// Splits a client's (normalized) local dataset into train and validation parts.
ClientData make_client_data(const Dataset& local, double validation_fraction, std::uint64_t seed,
                            std::uint32_t client_id);

struct ClientUpdate {
  std::uint32_t client_id = 0;
  std::vector<float> weights;
  std::uint64_t layout_hash = 0;
  std::uint64_t n_samples = 0;
  double train_loss = 0.0;
  MetricsReport validation;
};

/// E epochs of mini-batch SGD from the received global weights. Validation
/// metrics are computed on the received weights, before any local step.
ClientUpdate client_local_train(std::span<const float> global_weights, const ClientData& data,
                                const ModelConfig& model_cfg, const FederationConfig& fed_cfg,
                                std::uint32_t client_id, std::uint32_t round);

// ---------------------------------------------------------------------------
// Aggregation.

/// N_k / sum_j N_j for each client, in double.
std::vector<double> aggregation_coefficients(std::span<const std::uint64_t> sample_counts);

/// Sample-count weighted mean of client weights, accumulated in double in
/// ascending client-id order and emitted as float. Throws AggregationError
/// on an empty set or on a length/layout mismatch, naming the client.
std::vector<float> aggregate(std::span<const ClientUpdate> updates);

/// N_k-weighted mean of the clients' validation metrics and training losses.
MetricsReport aggregate_validation(std::span<const ClientUpdate> updates);
double aggregate_loss(std::span<const ClientUpdate> updates);

// ---------------------------------------------------------------------------
// Synchronous round state.

enum class RoundPhase { kBroadcasting = 0, kCollecting = 1, kAggregating = 2, kEvaluating = 3, kDone = 4 };

class RoundState {
 public:
  RoundState(std::uint32_t round, std::vector<float> global_weights, int expected_clients);

  std::uint32_t round() const { return round_; }
  RoundPhase phase() const { return phase_; }
  const std::vector<float>& global_weights() const { return global_; }
  const std::vector<ClientUpdate>& received() const { return received_; }

  /// Phases only move forward.
  void advance(RoundPhase next);
  /// Accepts one update while collecting; rejects duplicates and stale rounds.
  void receive(ClientUpdate update);
  bool complete() const { return static_cast<int>(received_.size()) == expected_; }
  /// Enters the aggregating phase; refuses to run with fewer than K updates.
  std::vector<float> aggregate();

 private:
  std::uint32_t round_;
  std::vector<float> global_;
  int expected_;
  RoundPhase phase_ = RoundPhase::kBroadcasting;
  std::vector<ClientUpdate> received_;
};

// ---------------------------------------------------------------------------
// Server orchestration over abstract client channels.

struct TrafficCounters {
  std::uint64_t bytes_sent = 0;
  std::uint64_t bytes_received = 0;
};

/// Server-side handle for one joined client. The TLS transport and the
/// in-process simulator both implement it.
class ClientChannel {
 public:
  virtual ~ClientChannel() = default;

  virtual std::uint32_t client_id() const = 0;
  virtual void start_round(std::uint32_t round, std::span<const float> weights) = 0;
  /// Blocks until this client's update for `round` arrives or the deadline passes (TimeoutError).
  virtual ClientUpdate collect(std::uint32_t round, std::chrono::steady_clock::time_point deadline) = 0;
  virtual void finish_round(std::uint32_t /*round*/, const MetricsReport& /*aggregated*/) {}
  virtual void shutdown(std::uint64_t /*final_weights_hash*/) {}
  virtual TrafficCounters traffic() const { return {}; }
};

struct ServerOptions {
  bool profile = true;
  std::chrono::milliseconds sample_interval{100};
  std::function<void(const HistoryRow&)> on_round;
};

struct RunResult {
  std::vector<HistoryRow> history;
  ParameterSet<float> final_weights;
};

/// Raised when a round cannot complete; carries the rounds that did.
class RunAbortedError : public Error {
 public:
  RunAbortedError(ErrorKind kind, const std::string& message, std::vector<HistoryRow> partial)
      : Error(kind, message), history(std::move(partial)) {}
  std::vector<HistoryRow> history;
};

/// Runs T synchronous FedAvg rounds over the given channels.
RunResult server_run(const FederationConfig& cfg, const ModelConfig& model_cfg, ParameterSet<float> initial,
                     std::span<ClientChannel* const> channels, const ServerOptions& options = {});

/// Channel that trains a local client in-process; used by tests and simulations.
class LocalClientChannel : public ClientChannel {
 public:
  LocalClientChannel(std::uint32_t id, ClientData data, ModelConfig model_cfg, FederationConfig fed_cfg);

  std::uint32_t client_id() const override { return id_; }
  void start_round(std::uint32_t round, std::span<const float> weights) override;
  ClientUpdate collect(std::uint32_t round, std::chrono::steady_clock::time_point deadline) override;

  const ClientData& data() const { return data_; }

 private:
  std::uint32_t id_;
  ClientData data_;
  ModelConfig model_cfg_;
  FederationConfig fed_cfg_;
  std::uint32_t round_ = 0;
  std::vector<float> weights_;
};

// ---------------------------------------------------------------------------
// Centralized baseline.

struct CentralizedResult {
  ParameterSet<float> weights;
  std::vector<HistoryRow> history;  // one row per epoch, metrics on `eval_data`
};

CentralizedResult centralized_train(const Dataset& train, const Dataset& eval_data, const ModelConfig& cfg,
                                    ParameterSet<float> initial, int epochs, float lr, int batch_size,
                                    std::uint64_t seed);

}  // namespace m2fedaqi
