#pragma once

#include <atomic>
#include <chrono>
#include <cstdint>
#include <memory>
#include <string>

#include "m2fedaqi/transport/frame.hpp"

struct ssl_st;
struct ssl_ctx_st;

namespace m2fedaqi::transport {

using Clock = std::chrono::steady_clock;

/// PEM paths for one federation member: the shared root plus its own identity.
struct TrustConfig {
  std::string ca_cert;
  std::string cert;
  std::string key;

  /// Fields replaced by M2FEDAQI_CA_CERT, M2FEDAQI_CERT and M2FEDAQI_KEY when set.
  TrustConfig with_env_overrides() const;
  /// All three files must exist; throws ConfigError.
  void validate() const;
};

/// host:port; the port may be 0 for a listener (ephemeral).
struct Endpoint {
  std::string host = "127.0.0.1";
  std::uint16_t port = 0;

  static Endpoint parse(const std::string& text);  // ConfigError
  std::string str() const;
};

/// Authenticated TLS connection. Reads and writes honor the current
/// deadline (TimeoutError once it passes). Byte counters cover exactly the
/// application bytes handed to / taken from TLS, i.e. frame wire bytes.
class TlsSession : public ByteStream {
 public:
  TlsSession(ssl_st* ssl, int fd, std::string peer_name);
  ~TlsSession() override;
  TlsSession(const TlsSession&) = delete;
  TlsSession& operator=(const TlsSession&) = delete;

  const std::string& peer_name() const { return peer_name_; }
  void set_deadline(Clock::time_point deadline) { deadline_ = deadline; }

  void write_all(std::span<const std::uint8_t> bytes) override;
  void read_exact(std::span<std::uint8_t> out) override;

  std::uint64_t bytes_sent() const { return sent_.load(); }
  std::uint64_t bytes_received() const { return received_.load(); }

  /// Sends close_notify (best effort) and closes the socket.
  void close();

 private:
  void arm_timeout();

  ssl_st* ssl_;
  int fd_;
  std::string peer_name_;
  Clock::time_point deadline_ = Clock::time_point::max();
  std::atomic<std::uint64_t> sent_{0};
  std::atomic<std::uint64_t> received_{0};
};

enum class Role { kServer, kClient };

/// TLS 1.3 context with mandatory mutual certificate verification against
/// the federation root.
class TlsContext {
 public:
  TlsContext(Role role, const TrustConfig& trust);
  ~TlsContext();
  TlsContext(const TlsContext&) = delete;
  TlsContext& operator=(const TlsContext&) = delete;

  /// Server side handshake on an accepted socket; takes ownership of `fd`.
  /// A peer whose certificate does not chain to the root raises AuthError;
  /// any other handshake failure (plaintext peer, garbage) ProtocolError.
  std::unique_ptr<TlsSession> accept(int fd, Clock::time_point deadline) const;

  /// Connects (retrying refused connections until the deadline) and
  /// verifies the server certificate against the root and the host name.
  std::unique_ptr<TlsSession> connect(const Endpoint& endpoint, Clock::time_point deadline) const;

 private:
  Role role_;
  ssl_ctx_st* ctx_ = nullptr;
};

/// Listening TCP socket.
class Listener {
 public:
  explicit Listener(const Endpoint& endpoint);
  ~Listener();
  Listener(const Listener&) = delete;
  Listener& operator=(const Listener&) = delete;

  std::uint16_t port() const { return port_; }
  /// Accepted socket, or -1 if nothing arrived before the deadline.
  int accept(Clock::time_point deadline);

 private:
  int fd_ = -1;
  std::uint16_t port_ = 0;
};

/// Connects a plain TCP socket; used by tests that speak non-TLS bytes.
int connect_tcp(const Endpoint& endpoint, Clock::time_point deadline);
void close_fd(int fd);

}  // namespace m2fedaqi::transport
