#include "m2fedaqi/transport/remote.hpp"

#include <algorithm>
#include <mutex>
#include <optional>
#include <thread>

#include "m2fedaqi/transport/messages.hpp"

namespace m2fedaqi::transport {

namespace {

constexpr std::chrono::seconds kSendTimeout{60};

void log_line(const LogFn& log, const std::string& line) {
  if (log) log(line);
}

}  // namespace

TlsClientChannel::TlsClientChannel(std::uint32_t id, std::unique_ptr<TlsSession> session, std::uint32_t max_frame)
    : id_(id), session_(std::move(session)), max_frame_(max_frame) {}

void TlsClientChannel::start_round(std::uint32_t round, std::span<const float> weights) {
  session_->set_deadline(Clock::now() + kSendTimeout);
  send_frame(*session_, to_frame(RoundStart{round, {weights.begin(), weights.end()}}));
}

ClientUpdate TlsClientChannel::collect(std::uint32_t round, Clock::time_point deadline) {
  session_->set_deadline(deadline);
  Frame frame;
  try {
    frame = recv_frame(*session_, max_frame_);
  } catch (const TimeoutError&) {
    throw TimeoutError("client " + name() + " sent no update for round " + std::to_string(round) +
                       " before the deadline");
  }
  const auto msg = parse_round_update(frame);
  if (msg.round != round) {
    throw ProtocolError("client " + name() + " sent an update for round " + std::to_string(msg.round) +
                        " during round " + std::to_string(round));
  }
  return to_client_update(msg, id_);
}

void TlsClientChannel::finish_round(std::uint32_t round, const MetricsReport& aggregated) {
  session_->set_deadline(Clock::now() + kSendTimeout);
  send_frame(*session_, to_frame(RoundResult{round, aggregated}));
}

void TlsClientChannel::shutdown(std::uint64_t final_weights_hash) {
  session_->set_deadline(Clock::now() + kSendTimeout);
  try {
    send_frame(*session_, to_frame(Shutdown{final_weights_hash}));
  } catch (const Error&) {
    // The run is complete; a client that already hung up changes nothing.
  }
  session_->close();
}

TrafficCounters TlsClientChannel::traffic() const {
  return {session_->bytes_sent(), session_->bytes_received()};
}

// ---------------------------------------------------------------------------

FederationServer::FederationServer(ServerTransportOptions options)
    : options_(std::move(options)), context_(Role::kServer, options_.trust), listener_(options_.listen) {}

void FederationServer::admit_clients(const ModelConfig& model, const FederationConfig& federation,
                                     Clock::time_point deadline) {
  struct Joined {
    std::unique_ptr<TlsSession> session;
    JoinRequest request;
  };
  const auto expected = static_cast<std::size_t>(federation.expected_clients);
  std::mutex mutex;
  std::vector<Joined> joined;
  std::vector<std::thread> workers;

  auto reject = [this](TlsSession& s, const std::string& reason) {
    log_line(options_.log, "rejected " + s.peer_name() + ": " + reason);
    try {
      send_frame(s, to_frame(JoinReject{reason}));
    } catch (const Error&) {
    }
  };

  auto handle = [&](int fd) {
    const auto hs_deadline = std::min(deadline, Clock::now() + options_.handshake_timeout);
    std::unique_ptr<TlsSession> session;
    try {
      session = context_.accept(fd, hs_deadline);
    } catch (const Error& e) {
      std::lock_guard lock(mutex);
      ++rejected_;
      log_line(options_.log, std::string("handshake refused (") + to_string(e.kind()) + "): " + e.what());
      return;
    }
    try {
      session->set_deadline(hs_deadline);
      const auto request = parse_join_request(recv_frame(*session, options_.max_frame));
      std::string problem;
      if (request.client_name != session->peer_name()) {
        problem = "name '" + request.client_name + "' does not match certificate '" + session->peer_name() + "'";
      } else if (static_cast<int>(request.d_tab) != model.d_tab_in) {
        problem = "d_tab " + std::to_string(request.d_tab) + " does not match model d_tab " +
                  std::to_string(model.d_tab_in);
      } else if (request.dataset_size == 0) {
        problem = "empty local dataset";
      }
      std::lock_guard lock(mutex);
      if (problem.empty()) {
        const bool duplicate = std::any_of(joined.begin(), joined.end(), [&](const Joined& j) {
          return j.request.client_name == request.client_name;
        });
        if (duplicate) problem = "client " + request.client_name + " already joined";
        else if (joined.size() >= expected) problem = "federation is full";
      }
      if (!problem.empty()) {
        ++rejected_;
        reject(*session, problem);
        return;
      }
      log_line(options_.log, "client " + request.client_name + " joined with " +
                                 std::to_string(request.dataset_size) + " samples");
      joined.push_back({std::move(session), request});
    } catch (const Error& e) {
      std::lock_guard lock(mutex);
      ++rejected_;
      log_line(options_.log, "join from " + session->peer_name() + " failed: " + e.what());
    }
  };

  while (Clock::now() < deadline) {
    {
      std::lock_guard lock(mutex);
      if (joined.size() == expected) break;
    }
    const int fd = listener_.accept(std::min(deadline, Clock::now() + std::chrono::milliseconds(100)));
    if (fd >= 0) workers.emplace_back(handle, fd);
  }
  for (auto& w : workers) w.join();

  if (joined.size() < expected) {
    throw TimeoutError("only " + std::to_string(joined.size()) + " of " + std::to_string(expected) +
                       " clients joined before the deadline");
  }
  std::sort(joined.begin(), joined.end(),
            [](const Joined& a, const Joined& b) { return a.request.client_name < b.request.client_name; });
  for (std::size_t i = 0; i < joined.size(); ++i) {
    auto& j = joined[i];
    j.session->set_deadline(Clock::now() + kSendTimeout);
    send_frame(*j.session, to_frame(JoinAccept{static_cast<std::uint32_t>(i), model, federation}));
    channels_.push_back(
        std::make_unique<TlsClientChannel>(static_cast<std::uint32_t>(i), std::move(j.session), options_.max_frame));
  }
}

std::vector<ClientChannel*> FederationServer::channels() const {
  std::vector<ClientChannel*> out;
  for (const auto& c : channels_) out.push_back(c.get());
  return out;
}

std::vector<std::string> FederationServer::client_names() const {
  std::vector<std::string> out;
  for (const auto& c : channels_) out.push_back(c->name());
  return out;
}

// ---------------------------------------------------------------------------

ClientRunResult run_client(const ClientRunOptions& options, const Dataset& local) {
  if (local.size() == 0) throw DataError("client " + options.name + " has an empty dataset; refusing to join");
  TlsContext context(Role::kClient, options.trust);
  auto session = context.connect(options.server, Clock::now() + options.connect_timeout);
  log_line(options.log, "connected to " + options.server.str() + " (" + session->peer_name() + ")");

  session->set_deadline(Clock::now() + options.join_timeout);
  send_frame(*session, to_frame(JoinRequest{options.name, static_cast<std::uint32_t>(local.d_tab()), local.size()}));
  const Frame reply = recv_frame(*session, options.max_frame);
  if (reply.kind == MessageKind::kJoinReject) {
    throw ProtocolError("server rejected join: " + parse_join_reject(reply).reason);
  }
  const auto accept = parse_join_accept(reply);
  if (accept.model.d_tab_in != local.d_tab() || accept.model.d_img_in != local.d_img()) {
    throw DataError("local data has d_tab=" + std::to_string(local.d_tab()) + ", d_img=" +
                    std::to_string(local.d_img()) + " but the model expects d_tab=" +
                    std::to_string(accept.model.d_tab_in) + ", d_img=" + std::to_string(accept.model.d_img_in));
  }

  ClientRunResult result;
  result.client_id = accept.client_id;
  result.model = accept.model;
  result.federation = accept.federation;
  log_line(options.log, "joined as client " + std::to_string(accept.client_id));
  const auto data = make_client_data(local, accept.federation.validation_fraction, accept.federation.seed,
                                     accept.client_id);
  const auto idle = std::chrono::duration_cast<Clock::duration>(
      std::chrono::duration<double>(accept.federation.round_timeout_s + 60.0));

  std::uint64_t sent_mark = session->bytes_sent();
  std::uint64_t received_mark = session->bytes_received();
  while (true) {
    session->set_deadline(Clock::now() + idle);
    const Frame frame = recv_frame(*session, options.max_frame);
    if (frame.kind == MessageKind::kShutdown) {
      result.final_weights_hash = parse_shutdown(frame).final_weights_hash;
      session->close();
      return result;
    }
    const auto start = parse_round_start(frame);
    std::optional<ResourceSampler> sampler;
    if (options.profile) sampler.emplace(options.sample_interval);
    const auto t0 = Clock::now();
    const auto update = client_local_train(start.weights, data, accept.model, accept.federation, accept.client_id,
                                           start.round);
    RoundProfile profile;
    profile.round = start.round;
    profile.train_seconds = std::chrono::duration<double>(Clock::now() - t0).count();
    if (sampler) {
      const auto summary = sampler->finalize();
      profile.peak_rss_bytes = summary.peak_rss_bytes;
      profile.mean_cpu_percent = summary.mean_cpu_percent;
    }
    session->set_deadline(Clock::now() + kSendTimeout);
    send_frame(*session, to_frame(to_round_update(update, start.round)));

    session->set_deadline(Clock::now() + idle);
    const auto outcome = parse_round_result(recv_frame(*session, options.max_frame));
    if (outcome.round != start.round) throw ProtocolError("round result for the wrong round");
    profile.bytes_up = session->bytes_sent() - sent_mark;
    profile.bytes_down = session->bytes_received() - received_mark;
    sent_mark = session->bytes_sent();
    received_mark = session->bytes_received();
    result.profiles.push_back(profile);
    if (options.log) {
      const auto headline = outcome.metrics.headline();
      log_line(options.log, "round " + std::to_string(start.round) + " done, loss " +
                                std::to_string(update.train_loss) +
                                (headline ? ", global validation " + std::to_string(*headline) : std::string()));
    }
  }
}

}  // namespace m2fedaqi::transport
