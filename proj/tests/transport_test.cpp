#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <sys/socket.h>
#include <exception>
#include <future>
#include <limits>
#include <thread>

#include "m2fedaqi/prepare.hpp"
#include "m2fedaqi/synthetic.hpp"
#include "m2fedaqi/transport/certgen.hpp"
#include "m2fedaqi/transport/frame.hpp"
#include "m2fedaqi/transport/messages.hpp"
#include "m2fedaqi/transport/remote.hpp"
#include "m2fedaqi/transport/tls.hpp"
#include "support.hpp"

namespace m2fedaqi::transport {
namespace {

using m2fedaqi::testing::TempDir;

Frame sample_frame(std::size_t payload_bytes) {
  Frame f;
  f.kind = MessageKind::kRoundStart;
  f.round = 3;
  for (std::size_t i = 0; i < payload_bytes; ++i) f.payload.push_back(static_cast<std::uint8_t>(i * 7 + 1));
  return f;
}

TEST(Frame, WireSizeAndRoundTrip) {
  const auto f = sample_frame(10);
  const auto bytes = encode_frame(f);
  EXPECT_EQ(bytes.size(), 24u);
  EXPECT_EQ(f.wire_size(), 24u);
  EXPECT_EQ(decode_frame(bytes), f);
  MemoryStream s;
  send_frame(s, f);
  send_frame(s, sample_frame(0));
  EXPECT_EQ(recv_frame(s), f);
  EXPECT_EQ(recv_frame(s), sample_frame(0));
}

TEST(Frame, KnownCrcValue) {
  const std::string text = "123456789";
  EXPECT_EQ(crc32(std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size())), 0xCBF43926u);
}

TEST(Frame, EverySingleBitFlipInPayloadOrCrcIsCaught) {
  const auto bytes = encode_frame(sample_frame(64));
  for (std::size_t byte = kFrameHeaderSize; byte < bytes.size(); ++byte) {
    for (int bit = 0; bit < 8; ++bit) {
      auto tampered = bytes;
      tampered[byte] ^= static_cast<std::uint8_t>(1u << bit);
      EXPECT_THROW(decode_frame(tampered), ProtocolError) << "byte " << byte << " bit " << bit;
      MemoryStream s(tampered);
      EXPECT_THROW(recv_frame(s), ProtocolError);
    }
  }
}

TEST(Frame, HeaderValidation) {
  auto bytes = encode_frame(sample_frame(4));
  auto bad_version = bytes;
  bad_version[4] = 2;
  try {
    decode_frame(bad_version);
    FAIL();
  } catch (const ProtocolError& e) {
    EXPECT_NE(std::string(e.what()).find("unsupported version"), std::string::npos);
  }
  auto bad_kind = bytes;
  bad_kind[5] = 9;
  EXPECT_THROW(decode_frame(bad_kind), ProtocolError);
  bad_kind[5] = 0;
  EXPECT_THROW(decode_frame(bad_kind), ProtocolError);
  EXPECT_THROW(decode_frame(std::span(bytes).first(bytes.size() - 1)), ProtocolError);
  EXPECT_THROW(decode_frame(std::span(bytes).first(5)), ProtocolError);
}

TEST(Frame, OversizedLengthRejectedBeforeReadingPayload) {
  ByteWriter w;
  w.u32(0xfffffff0u);
  w.u8(kProtocolVersion);
  w.u8(static_cast<std::uint8_t>(MessageKind::kRoundUpdate));
  w.u32(0);
  MemoryStream s(w.take());  // header only: any attempt to read the payload would fail differently
  try {
    recv_frame(s);
    FAIL();
  } catch (const ProtocolError& e) {
    EXPECT_NE(std::string(e.what()).find("exceeds maximum"), std::string::npos) << e.what();
  }
  EXPECT_EQ(s.read_position(), kFrameHeaderSize);

  MemoryStream small;
  send_frame(small, sample_frame(100));
  EXPECT_THROW(recv_frame(small, 99), ProtocolError);
}

TEST(Frame, TruncatedStream) {
  auto bytes = encode_frame(sample_frame(10));
  bytes.pop_back();
  MemoryStream s(bytes);
  EXPECT_THROW(recv_frame(s), ProtocolError);
}

TEST(WeightCodec, EmptyAndFixture) {
  EXPECT_EQ(encode_weights({}).size(), 8u);
  EXPECT_TRUE(decode_weights(encode_weights({})).empty());
  const std::vector<float> w = {1.0f, -2.5f};
  const auto bytes = encode_weights(w);
  ASSERT_EQ(bytes.size(), 16u);
  const std::vector<std::uint8_t> expected = {2, 0, 0, 0, 0, 0, 0, 0, 0x00, 0x00, 0x80, 0x3f, 0x00, 0x00, 0x20, 0xc0};
  EXPECT_EQ(bytes, expected);
  EXPECT_EQ(decode_weights(bytes), w);
}

TEST(WeightCodec, LengthMismatchIsCodecError) {
  const auto bytes = encode_weights(std::vector<float>{1, 2, 3});
  EXPECT_THROW(decode_weights(std::span(bytes).first(bytes.size() - 1)), CodecError);
  auto longer = bytes;
  longer.push_back(0);
  EXPECT_THROW(decode_weights(longer), CodecError);
  EXPECT_THROW(decode_weights(std::span(bytes).first(4)), CodecError);
}

TEST(WeightCodec, NonFiniteRefused) {
  for (float bad : {std::numeric_limits<float>::quiet_NaN(), std::numeric_limits<float>::infinity(),
                    -std::numeric_limits<float>::infinity()}) {
    EXPECT_THROW(encode_weights(std::vector<float>{0.0f, bad}), ProtocolError);
    auto bytes = encode_weights(std::vector<float>{0.0f, 0.0f});
    std::memcpy(bytes.data() + 12, &bad, 4);
    EXPECT_THROW(decode_weights(bytes), ProtocolError);
  }
}

TEST(WeightCodec, RandomizedRoundTripIsBitExact) {
  RandomStream rng(77);
  for (int t = 0; t < 10000; ++t) {
    std::vector<float> w(rng() % 64);
    for (auto& v : w) {
      // Mix ordinary values, subnormals, signed zeros and extremes.
      switch (rng() % 4) {
        case 0: v = static_cast<float>(rng.normal() * std::pow(10.0, static_cast<int>(rng() % 60) - 30)); break;
        case 1: v = std::numeric_limits<float>::denorm_min() * static_cast<float>(rng() % 1000); break;
        case 2: v = (rng() % 2) ? -0.0f : std::numeric_limits<float>::max(); break;
        default: v = static_cast<float>(rng.uniform() - 0.5);
      }
    }
    const auto back = decode_weights(encode_weights(w));
    ASSERT_EQ(back.size(), w.size());
    ASSERT_EQ(std::memcmp(back.data(), w.data(), w.size() * sizeof(float)), 0) << "trial " << t;
  }
}

TEST(Messages, RoundTrips) {
  const auto j = parse_join_request(to_frame(JoinRequest{"client-3", 10, 400}));
  EXPECT_EQ(j.client_name, "client-3");
  EXPECT_EQ(j.d_tab, 10u);
  EXPECT_EQ(j.dataset_size, 400u);

  JoinAccept acc;
  acc.client_id = 2;
  acc.model.task = Task::kRegression;
  acc.federation.rounds = 9;
  const auto acc2 = parse_join_accept(to_frame(acc));
  EXPECT_EQ(acc2.client_id, 2u);
  EXPECT_EQ(acc2.model, acc.model);
  EXPECT_EQ(acc2.federation, acc.federation);

  EXPECT_EQ(parse_join_reject(to_frame(JoinReject{"nope"})).reason, "nope");

  const auto rs = parse_round_start(to_frame(RoundStart{4, {1.5f, -2.0f}}));
  EXPECT_EQ(rs.round, 4u);
  EXPECT_EQ(rs.weights, (std::vector<float>{1.5f, -2.0f}));

  RoundUpdate ru;
  ru.round = 6;
  ru.weights = {0.25f};
  ru.layout_hash = 0xabcdef;
  ru.n_samples = 321;
  ru.loss = 0.75;
  ru.metrics.n = 12;
  ru.metrics.accuracy = 0.5;
  const auto frame = to_frame(ru);
  EXPECT_EQ(frame.round, 6u);
  const auto ru2 = parse_round_update(frame);
  EXPECT_EQ(ru2.weights, ru.weights);
  EXPECT_EQ(ru2.layout_hash, ru.layout_hash);
  EXPECT_EQ(ru2.n_samples, ru.n_samples);
  EXPECT_EQ(ru2.loss, ru.loss);
  EXPECT_EQ(ru2.metrics, ru.metrics);

  RoundResult rr;
  rr.round = 8;
  rr.metrics.n = 3;
  EXPECT_EQ(parse_round_result(to_frame(rr)).metrics, rr.metrics);
  EXPECT_EQ(parse_shutdown(to_frame(Shutdown{42})).final_weights_hash, 42u);

  const auto cu = to_client_update(ru, 5);
  EXPECT_EQ(cu.client_id, 5u);
  EXPECT_EQ(to_round_update(cu, 6).weights, ru.weights);
}

TEST(Messages, WrongKindAndTrailingBytes) {
  EXPECT_THROW(parse_round_start(to_frame(Shutdown{1})), ProtocolError);
  auto f = to_frame(Shutdown{1});
  f.payload.push_back(0);
  EXPECT_THROW(parse_shutdown(f), ProtocolError);
  f.payload.resize(3);
  EXPECT_THROW(parse_shutdown(f), ProtocolError);
}

// ---------------------------------------------------------------------------
// TLS over loopback.

class TlsTest : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = new TempDir("m2fedaqi-tls");
    CertgenOptions opts;
    opts.out_dir = dir_->path().string();
    opts.num_clients = 2;
    certs_ = new FederationCerts(generate_federation(opts));
  }
  static void TearDownTestSuite() {
    delete certs_;
    delete dir_;
  }

  static TrustConfig server_trust() { return {certs_->root.cert, certs_->server.cert, certs_->server.key}; }
  static TrustConfig client_trust(const IdentityFiles& id) { return {certs_->root.cert, id.cert, id.key}; }
  static Clock::time_point soon() { return Clock::now() + std::chrono::seconds(10); }

  /// Accepts one connection and runs `body` on the session; returns the handshake outcome.
  static std::future<void> serve_once(const TlsContext& ctx, Listener& listener,
                                      std::function<void(TlsSession&)> body = {}) {
    return std::async(std::launch::async, [&ctx, &listener, body] {
      const int fd = listener.accept(soon());
      if (fd < 0) throw TimeoutError("no connection");
      auto session = ctx.accept(fd, soon());
      session->set_deadline(soon());
      if (body) body(*session);
    });
  }

  static TempDir* dir_;
  static FederationCerts* certs_;
};

TempDir* TlsTest::dir_ = nullptr;
FederationCerts* TlsTest::certs_ = nullptr;

TEST_F(TlsTest, CertificateFilesAndNames) {
  ASSERT_EQ(certs_->clients.size(), 2u);
  EXPECT_EQ(certificate_common_name(certs_->clients[1].cert), "client-1");
  EXPECT_EQ(client_common_name(4), "client-4");
  TrustConfig missing{certs_->root.cert, dir_->path().string() + "/none.pem", certs_->server.key};
  EXPECT_THROW(missing.validate(), ConfigError);
}

TEST_F(TlsTest, MutualAuthenticationHappyPath) {
  TlsContext server(Role::kServer, server_trust());
  TlsContext client(Role::kClient, client_trust(certs_->clients[0]));
  Listener listener(Endpoint{"127.0.0.1", 0});
  std::string seen_name;
  std::uint64_t server_received = 0;
  auto done = serve_once(server, listener, [&](TlsSession& s) {
    seen_name = s.peer_name();
    const auto f = recv_frame(s);
    server_received = s.bytes_received();
    send_frame(s, f);
  });
  auto session = client.connect(Endpoint{"127.0.0.1", listener.port()}, soon());
  session->set_deadline(soon());
  const auto f = sample_frame(100);
  send_frame(*session, f);
  EXPECT_EQ(recv_frame(*session), f);
  done.get();
  EXPECT_EQ(seen_name, "client-0");
  EXPECT_EQ(session->bytes_sent(), kFrameOverhead + 100);
  EXPECT_EQ(server_received, kFrameOverhead + 100);
  EXPECT_EQ(session->bytes_received(), kFrameOverhead + 100);
}

void expect_client_rejected(const TlsContext& server, Listener& listener, const IdentityFiles& identity,
                            const std::string& root) {
  bool frame_seen = false;
  auto done = std::async(std::launch::async, [&] {
    const int fd = listener.accept(Clock::now() + std::chrono::seconds(10));
    auto s = server.accept(fd, Clock::now() + std::chrono::seconds(10));
    recv_frame(*s);
    frame_seen = true;
  });
  TlsContext client(Role::kClient, TrustConfig{root, identity.cert, identity.key});
  // Under TLS 1.3 the client learns of the rejection on its first read.
  EXPECT_THROW(
      {
        auto s = client.connect(Endpoint{"127.0.0.1", listener.port()}, Clock::now() + std::chrono::seconds(10));
        s->set_deadline(Clock::now() + std::chrono::seconds(10));
        send_frame(*s, to_frame(JoinRequest{"intruder", 10, 1}));
        recv_frame(*s);
      },
      AuthError);
  EXPECT_THROW(done.get(), AuthError);
  EXPECT_FALSE(frame_seen);
}

TEST_F(TlsTest, SelfSignedClientIsRejected) {
  TlsContext server(Role::kServer, server_trust());
  Listener listener(Endpoint{"127.0.0.1", 0});
  const auto rogue = generate_self_signed(dir_->path().string(), "rogue", "client-0");
  expect_client_rejected(server, listener, rogue, certs_->root.cert);
}

TEST_F(TlsTest, ForeignRootClientIsRejected) {
  TempDir other;
  CertgenOptions opts;
  opts.out_dir = other.path().string();
  opts.num_clients = 1;
  const auto foreign = generate_federation(opts);
  TlsContext server(Role::kServer, server_trust());
  Listener listener(Endpoint{"127.0.0.1", 0});
  // The foreign client trusts our root so only the server side can object.
  expect_client_rejected(server, listener, foreign.clients[0], certs_->root.cert);
}

TEST_F(TlsTest, ExpiredClientIsRejected) {
  TlsContext server(Role::kServer, server_trust());
  Listener listener(Endpoint{"127.0.0.1", 0});
  const auto old = issue_identity(certs_->root, dir_->path().string(), "old", "client-0", {}, -1);
  expect_client_rejected(server, listener, old, certs_->root.cert);
}

TEST_F(TlsTest, ClientRefusesUntrustedServer) {
  TempDir other;
  CertgenOptions opts;
  opts.out_dir = other.path().string();
  opts.num_clients = 1;
  const auto foreign = generate_federation(opts);
  TlsContext server(Role::kServer, TrustConfig{foreign.root.cert, foreign.server.cert, foreign.server.key});
  Listener listener(Endpoint{"127.0.0.1", 0});
  auto done = serve_once(server, listener);
  TlsContext client(Role::kClient, client_trust(certs_->clients[0]));
  EXPECT_THROW(client.connect(Endpoint{"127.0.0.1", listener.port()}, soon()), AuthError);
  EXPECT_THROW(done.get(), Error);
}

TEST_F(TlsTest, PlaintextFramesAreRejectedAndServerKeepsServing) {
  TlsContext server(Role::kServer, server_trust());
  Listener listener(Endpoint{"127.0.0.1", 0});
  for (std::uint8_t k = 1; k <= 7; ++k) {
    auto done = serve_once(server, listener, [](TlsSession&) { FAIL() << "plaintext peer got a session"; });
    const int fd = connect_tcp(Endpoint{"127.0.0.1", listener.port()}, soon());
    Frame f = sample_frame(20);
    f.kind = static_cast<MessageKind>(k);
    const auto bytes = encode_frame(f);
    ASSERT_EQ(::send(fd, bytes.data(), bytes.size(), MSG_NOSIGNAL), static_cast<ssize_t>(bytes.size()));
    EXPECT_THROW(done.get(), ProtocolError) << "kind " << int(k);
    close_fd(fd);
  }
  TlsContext client(Role::kClient, client_trust(certs_->clients[1]));
  std::string name;
  auto done = serve_once(server, listener, [&](TlsSession& s) { name = s.peer_name(); });
  auto s = client.connect(Endpoint{"127.0.0.1", listener.port()}, soon());
  done.get();
  EXPECT_EQ(name, "client-1");
}

TEST(EndpointTest, Parse) {
  const auto e = Endpoint::parse("10.0.0.2:8443");
  EXPECT_EQ(e.host, "10.0.0.2");
  EXPECT_EQ(e.port, 8443);
  EXPECT_EQ(e.str(), "10.0.0.2:8443");
  EXPECT_THROW(Endpoint::parse("nohost"), ConfigError);
  EXPECT_THROW(Endpoint::parse("h:99999"), ConfigError);
}

// Full federation over loopback TLS reproduces the in-process simulation bit for bit.
TEST_F(TlsTest, RemoteRunMatchesInProcessRun) {
  SyntheticSpec spec;
  spec.n = 200;
  spec.d_img = 16;
  spec.d_tab = 4;
  spec.tab_nuisance = 1;
  spec.tuning_units = 4;
  PartitionConfig pc;
  pc.num_clients = 2;
  const auto split = split_federated(generate_synthetic(spec), pc, 0.2);
  ModelConfig model;
  model.d_img_in = 16;
  model.d_tab_in = 4;
  model.d_emb = 8;
  FederationConfig fed;
  fed.rounds = 2;
  fed.local_epochs = 1;
  fed.expected_clients = 2;
  fed.lr = 0.01f;
  fed.round_timeout_s = 60;
  const auto init = build_model<float>(model, 5);

  ServerTransportOptions so;
  so.listen = Endpoint{"127.0.0.1", 0};
  so.trust = server_trust();
  FederationServer server(so);
  std::vector<std::future<ClientRunResult>> clients;
  for (int k = 1; k >= 0; --k) {  // join out of order; ids still follow the names
    ClientRunOptions co;
    co.server = Endpoint{"127.0.0.1", server.port()};
    co.trust = client_trust(certs_->clients[static_cast<std::size_t>(k)]);
    co.name = client_common_name(k);
    co.profile = false;
    clients.push_back(std::async(std::launch::async, [co, &split, k] {
      return run_client(co, split.client(static_cast<std::size_t>(k)));
    }));
  }
  server.admit_clients(model, fed, soon());
  EXPECT_EQ(server.client_names(), (std::vector<std::string>{"client-0", "client-1"}));
  ServerOptions opts;
  opts.profile = false;
  const auto remote = server_run(fed, model, init, server.channels(), opts);

  std::vector<std::unique_ptr<LocalClientChannel>> local;
  std::vector<ClientChannel*> ptrs;
  for (std::uint32_t k = 0; k < 2; ++k) {
    local.push_back(std::make_unique<LocalClientChannel>(
        k, make_client_data(split.client(k), fed.validation_fraction, fed.seed, k), model, fed));
    ptrs.push_back(local.back().get());
  }
  const auto sim = server_run(fed, model, init, ptrs, opts);
  EXPECT_EQ(remote.final_weights.flatten(), sim.final_weights.flatten());
  const auto hash = fingerprint(sim.final_weights.span());
  for (auto& c : clients) {
    const auto r = c.get();
    EXPECT_EQ(r.final_weights_hash, hash);
  }
  ASSERT_EQ(remote.history.size(), 2u);
  EXPECT_GT(remote.history[0].profile.bytes_up, 0u);
  EXPECT_GT(remote.history[0].profile.bytes_down, 0u);
}

}  // namespace
}  // namespace m2fedaqi::transport
