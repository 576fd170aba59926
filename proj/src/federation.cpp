#include "m2fedaqi/federation.hpp"

#include <algorithm>
#include <cmath>
#include <future>
#include <numeric>
#include <set>

#include "m2fedaqi/partition.hpp"

namespace m2fedaqi {

void FederationConfig::validate() const {
  if (rounds < 0) throw ConfigError("federation.rounds must be non-negative");
  if (local_epochs < 1) throw ConfigError("federation.local_epochs must be at least 1");
  if (!(lr >= 0.0f) || !std::isfinite(lr)) throw ConfigError("federation.lr must be a non-negative number");
  if (batch_size < 1) throw ConfigError("federation.batch_size must be at least 1");
  if (expected_clients < 1) throw ConfigError("federation.expected_clients must be at least 1");
  if (!(round_timeout_s > 0.0)) throw ConfigError("federation.timeout_s must be positive");
  if (!(validation_fraction >= 0.0 && validation_fraction < 1.0)) {
    throw ConfigError("federation.validation_fraction must lie in [0, 1)");
  }
}

void FederationConfig::encode(ByteWriter& out) const {
  out.u32(static_cast<std::uint32_t>(rounds));
  out.u32(static_cast<std::uint32_t>(local_epochs));
  out.f32(lr);
  out.u32(static_cast<std::uint32_t>(batch_size));
  out.u32(static_cast<std::uint32_t>(expected_clients));
  out.f64(round_timeout_s);
  out.u64(seed);
  out.f64(validation_fraction);
}

FederationConfig FederationConfig::decode(ByteReader& in) {
  FederationConfig c;
  c.rounds = static_cast<int>(in.u32());
  c.local_epochs = static_cast<int>(in.u32());
  c.lr = in.f32();
  c.batch_size = static_cast<int>(in.u32());
  c.expected_clients = static_cast<int>(in.u32());
  c.round_timeout_s = in.f64();
  c.seed = in.u64();
  c.validation_fraction = in.f64();
  try {
    c.validate();
  } catch (const ConfigError& e) {
    throw CodecError(std::string("federation config: ") + e.what());
  }
  return c;
}

// ---------------------------------------------------------------------------

RandomStream epoch_stream(std::uint64_t seed, std::uint32_t client_id, std::uint32_t round, std::uint32_t local_epoch) {
  return RandomStream(seed).derive("train").derive(client_id).derive(round).derive(local_epoch);
}

double train_epoch(ParameterSet<float>& params, const ModelConfig& cfg, const Dataset& data, float lr,
                   int batch_size, const RandomStream& stream) {
  if (data.size() == 0) throw DataError("train_epoch: empty dataset");
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  RandomStream shuffle = stream.derive("shuffle");
  std::shuffle(order.begin(), order.end(), shuffle);
  const RandomStream dropout = stream.derive("dropout");

  double total = 0.0;
  std::uint64_t batch_index = 0;
  for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(batch_size), ++batch_index) {
    const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(batch_size));
    const auto batch = data.batch(std::span(order).subspan(start, end - start));
    auto [loss, grads] = loss_and_grad(params, cfg, batch, dropout.derive(batch_index));
    if (!std::isfinite(loss) || !grads.values().allFinite()) {
      throw DataError("training diverged: non-finite loss or gradient at batch " + std::to_string(batch_index));
    }
    nn::sgd_step(params, grads, lr);
    total += static_cast<double>(loss) * static_cast<double>(end - start);
  }
  return total / static_cast<double>(data.size());
}

MetricsReport evaluate_model(const ParameterSet<float>& params, const ModelConfig& cfg, const Dataset& data) {
  if (data.size() == 0) throw DataError("evaluate_model: empty dataset");
  constexpr std::size_t kChunk = 512;
  const RandomStream unused(0);
  std::vector<int> labels;
  std::vector<double> targets, predictions;
  Eigen::MatrixXd probs(static_cast<Eigen::Index>(data.size()), cfg.output_dim());
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < data.size(); start += kChunk) {
    const std::size_t end = std::min(data.size(), start + kChunk);
    idx.resize(end - start);
    std::iota(idx.begin(), idx.end(), start);
    const auto batch = data.batch(idx);
    const auto out = forward(params, cfg, batch.image, batch.tabular, Mode::kEval, unused).output;
    if (cfg.task == Task::kClassification) {
      probs.middleRows(static_cast<Eigen::Index>(start), out.rows()) = softmax(out);
    } else {
      const auto raw = raw_regression_values(out, cfg);
      predictions.insert(predictions.end(), raw.begin(), raw.end());
    }
  }
  if (cfg.task == Task::kClassification) {
    labels = data.label_vector();
    return classification_metrics(labels, probs);
  }
  targets.assign(data.pm25.begin(), data.pm25.end());
  return regression_metrics(targets, predictions);
}

ClientData make_client_data(const Dataset& local, double validation_fraction, std::uint64_t seed,
                            std::uint32_t client_id) {
  const auto split = split_holdout(local.size(), validation_fraction,
                                   RandomStream(seed).derive("validation").derive(client_id));
  ClientData out{local.subset(split.kept), local.subset(split.held_out)};
  if (out.train.size() == 0) throw DataError("client " + std::to_string(client_id) + " has no training samples");
  return out;
}

ClientUpdate client_local_train(std::span<const float> global_weights, const ClientData& data,
                                const ModelConfig& model_cfg, const FederationConfig& fed_cfg,
                                std::uint32_t client_id, std::uint32_t round) {
  if (data.train.size() == 0) throw DataError("client " + std::to_string(client_id) + " has an empty dataset");
  const auto layout = model_layout(model_cfg);
  if (global_weights.size() != layout.total_size()) {
    throw LayoutError("client " + std::to_string(client_id) + ": received " + std::to_string(global_weights.size()) +
                      " weights, model layout has " + std::to_string(layout.total_size()));
  }
  auto params = ParameterSet<float>::restore(layout, global_weights);

  ClientUpdate update;
  update.client_id = client_id;
  update.layout_hash = layout.hash();
  update.n_samples = data.train.size();
  if (data.validation.size() > 0) {
    update.validation = evaluate_model(params, model_cfg, data.validation);
  } else {
    update.validation.task = model_cfg.task;
  }

  double loss_sum = 0.0;
  for (int e = 0; e < fed_cfg.local_epochs; ++e) {
    loss_sum += train_epoch(params, model_cfg, data.train, fed_cfg.lr, fed_cfg.batch_size,
                            epoch_stream(fed_cfg.seed, client_id, round, static_cast<std::uint32_t>(e)));
  }
  update.train_loss = loss_sum / fed_cfg.local_epochs;
  update.weights = params.flatten();
  return update;
}

// ---------------------------------------------------------------------------

std::vector<double> aggregation_coefficients(std::span<const std::uint64_t> sample_counts) {
  long double total = 0;
  for (auto n : sample_counts) total += static_cast<long double>(n);
  std::vector<double> out;
  out.reserve(sample_counts.size());
  for (auto n : sample_counts) out.push_back(static_cast<double>(static_cast<long double>(n) / total));
  return out;
}

namespace {

std::vector<const ClientUpdate*> sorted_by_id(std::span<const ClientUpdate> updates) {
  std::vector<const ClientUpdate*> order;
  for (const auto& u : updates) order.push_back(&u);
  std::sort(order.begin(), order.end(), [](auto* a, auto* b) { return a->client_id < b->client_id; });
  return order;
}

}  // namespace

std::vector<float> aggregate(std::span<const ClientUpdate> updates) {
  if (updates.empty()) throw AggregationError("aggregate: no client updates");
  const auto order = sorted_by_id(updates);
  const ClientUpdate& ref = *order.front();
  std::vector<std::uint64_t> counts;
  for (std::size_t i = 0; i < order.size(); ++i) {
    const ClientUpdate& u = *order[i];
    if (i > 0 && u.client_id == order[i - 1]->client_id) {
      throw AggregationError("aggregate: duplicate update from client " + std::to_string(u.client_id));
    }
    if (u.weights.size() != ref.weights.size()) {
      throw AggregationError("aggregate: client " + std::to_string(u.client_id) + " sent " +
                             std::to_string(u.weights.size()) + " weights, expected " +
                             std::to_string(ref.weights.size()));
    }
    if (u.layout_hash != ref.layout_hash) {
      throw AggregationError("aggregate: client " + std::to_string(u.client_id) + " has a different layout hash");
    }
    if (u.n_samples == 0) {
      throw AggregationError("aggregate: client " + std::to_string(u.client_id) + " reported zero samples");
    }
    counts.push_back(u.n_samples);
  }
  const auto coeff = aggregation_coefficients(counts);
  Eigen::VectorXd acc = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(ref.weights.size()));
  for (std::size_t k = 0; k < order.size(); ++k) {
    const auto w = Eigen::Map<const Eigen::VectorXf>(order[k]->weights.data(), acc.size());
    acc += coeff[k] * w.cast<double>();
  }
  std::vector<float> out(ref.weights.size());
  Eigen::Map<Eigen::VectorXf>(out.data(), acc.size()) = acc.cast<float>();
  return out;
}

MetricsReport aggregate_validation(std::span<const ClientUpdate> updates) {
  const auto order = sorted_by_id(updates);
  std::vector<MetricsReport> reports;
  std::vector<double> weights;
  for (const auto* u : order) {
    if (u->validation.n == 0) continue;
    reports.push_back(u->validation);
    weights.push_back(static_cast<double>(u->validation.n));
  }
  if (reports.empty()) {
    MetricsReport empty;
    if (!updates.empty()) empty.task = updates.front().validation.task;
    return empty;
  }
  return weighted_mean(reports, weights);
}

double aggregate_loss(std::span<const ClientUpdate> updates) {
  double num = 0.0, den = 0.0;
  for (const auto* u : sorted_by_id(updates)) {
    num += static_cast<double>(u->n_samples) * u->train_loss;
    den += static_cast<double>(u->n_samples);
  }
  return den > 0.0 ? num / den : 0.0;
}

// ---------------------------------------------------------------------------

RoundState::RoundState(std::uint32_t round, std::vector<float> global_weights, int expected_clients)
    : round_(round), global_(std::move(global_weights)), expected_(expected_clients) {
  if (expected_ < 1) throw ConfigError("round state needs at least one expected client");
}

void RoundState::advance(RoundPhase next) {
  if (static_cast<int>(next) < static_cast<int>(phase_)) {
    throw ProtocolError("round " + std::to_string(round_) + ": phase cannot move backwards");
  }
  phase_ = next;
}

void RoundState::receive(ClientUpdate update) {
  if (phase_ != RoundPhase::kCollecting) {
    throw ProtocolError("round " + std::to_string(round_) + ": update received outside the collecting phase");
  }
  for (const auto& u : received_) {
    if (u.client_id == update.client_id) {
      throw ProtocolError("round " + std::to_string(round_) + ": duplicate update from client " +
                          std::to_string(update.client_id));
    }
  }
  if (static_cast<int>(received_.size()) >= expected_) {
    throw ProtocolError("round " + std::to_string(round_) + ": more updates than expected clients");
  }
  received_.push_back(std::move(update));
}

std::vector<float> RoundState::aggregate() {
  if (!complete()) {
    throw AggregationError("round " + std::to_string(round_) + ": only " + std::to_string(received_.size()) +
                           " of " + std::to_string(expected_) + " updates received");
  }
  advance(RoundPhase::kAggregating);
  return m2fedaqi::aggregate(received_);
}

// ---------------------------------------------------------------------------

namespace {

TrafficCounters total_traffic(std::span<ClientChannel* const> channels) {
  TrafficCounters t;
  for (auto* ch : channels) {
    const auto c = ch->traffic();
    t.bytes_sent += c.bytes_sent;
    t.bytes_received += c.bytes_received;
  }
  return t;
}

}  // namespace

RunResult server_run(const FederationConfig& cfg, const ModelConfig& model_cfg, ParameterSet<float> initial,
                     std::span<ClientChannel* const> channels, const ServerOptions& options) {
  cfg.validate();
  if (static_cast<int>(channels.size()) != cfg.expected_clients) {
    throw ConfigError("server_run: " + std::to_string(channels.size()) + " channels for " +
                      std::to_string(cfg.expected_clients) + " expected clients");
  }
  if (!(initial.layout() == model_layout(model_cfg))) {
    throw LayoutError("server_run: initial weights do not match the model layout");
  }

  RunResult result;
  ParameterSet<float> params = std::move(initial);
  const auto layout = params.layout();

  for (int t = 0; t < cfg.rounds; ++t) {
    const auto round = static_cast<std::uint32_t>(t);
    std::optional<ResourceSampler> sampler;
    if (options.profile) sampler.emplace(options.sample_interval);
    const auto traffic_before = total_traffic(channels);
    const auto started = std::chrono::steady_clock::now();

    RoundState state(round, params.flatten(), cfg.expected_clients);
    try {
      for (auto* ch : channels) ch->start_round(round, state.global_weights());
      state.advance(RoundPhase::kCollecting);

      const auto deadline = started + std::chrono::duration_cast<std::chrono::steady_clock::duration>(
                                          std::chrono::duration<double>(cfg.round_timeout_s));
      std::vector<std::future<ClientUpdate>> pending;
      for (auto* ch : channels) {
        pending.push_back(std::async(std::launch::async, [ch, round, deadline] { return ch->collect(round, deadline); }));
      }
      std::optional<Error> failure;
      for (auto& f : pending) {
        try {
          state.receive(f.get());
        } catch (const Error& e) {
          if (!failure) failure.emplace(e);
        }
      }
      if (failure) throw *failure;
    } catch (const Error& e) {
      const ErrorKind kind = e.kind() == ErrorKind::kTimeout ? ErrorKind::kTimeout : ErrorKind::kProtocol;
      throw RunAbortedError(kind,
                            "round " + std::to_string(round) + " aborted after " + std::to_string(result.history.size()) +
                                " completed rounds: " + e.what(),
                            result.history);
    }

    const auto weights = state.aggregate();
    state.advance(RoundPhase::kEvaluating);
    HistoryRow row;
    row.round = round;
    row.metrics = aggregate_validation(state.received());
    row.loss = aggregate_loss(state.received());
    for (auto* ch : channels) ch->finish_round(round, row.metrics);
    state.advance(RoundPhase::kDone);

    params = ParameterSet<float>::restore(layout, weights);
    row.weights_hash = fingerprint(weights);
    row.round_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    const auto traffic_after = total_traffic(channels);
    row.profile.round = round;
    row.profile.train_seconds = row.round_seconds;
    row.profile.bytes_down = traffic_after.bytes_sent - traffic_before.bytes_sent;
    row.profile.bytes_up = traffic_after.bytes_received - traffic_before.bytes_received;
    if (sampler) {
      const auto summary = sampler->finalize();
      row.profile.mean_cpu_percent = summary.mean_cpu_percent;
      row.profile.peak_rss_bytes = summary.peak_rss_bytes;
    }
    if (options.on_round) options.on_round(row);
    result.history.push_back(std::move(row));
  }

  const auto final_hash = fingerprint(params.span());
  for (auto* ch : channels) ch->shutdown(final_hash);
  result.final_weights = std::move(params);
  return result;
}

LocalClientChannel::LocalClientChannel(std::uint32_t id, ClientData data, ModelConfig model_cfg,
                                       FederationConfig fed_cfg)
    : id_(id), data_(std::move(data)), model_cfg_(model_cfg), fed_cfg_(fed_cfg) {}

void LocalClientChannel::start_round(std::uint32_t round, std::span<const float> weights) {
  round_ = round;
  weights_.assign(weights.begin(), weights.end());
}

ClientUpdate LocalClientChannel::collect(std::uint32_t round, std::chrono::steady_clock::time_point) {
  if (round != round_) throw ProtocolError("local client asked for a round it never started");
  return client_local_train(weights_, data_, model_cfg_, fed_cfg_, id_, round);
}

// ---------------------------------------------------------------------------

CentralizedResult centralized_train(const Dataset& train, const Dataset& eval_data, const ModelConfig& cfg,
                                    ParameterSet<float> initial, int epochs, float lr, int batch_size,
                                    std::uint64_t seed) {
  if (epochs < 0 || batch_size < 1) throw ConfigError("centralized_train: invalid epochs or batch size");
  CentralizedResult result;
  result.weights = std::move(initial);
  for (int e = 0; e < epochs; ++e) {
    const auto started = std::chrono::steady_clock::now();
    HistoryRow row;
    row.round = static_cast<std::uint32_t>(e);
    row.loss = train_epoch(result.weights, cfg, train, lr, batch_size, epoch_stream(seed, 0, row.round, 0));
    row.metrics = evaluate_model(result.weights, cfg, eval_data);
    row.weights_hash = fingerprint(result.weights.span());
    row.round_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    row.profile.round = row.round;
    row.profile.train_seconds = row.round_seconds;
    result.history.push_back(std::move(row));
  }
  return result;
}

}  // namespace m2fedaqi
