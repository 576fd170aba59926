#include "m2fedaqi/transport/tls.hpp"

#include <arpa/inet.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <openssl/err.h>
#include <openssl/ssl.h>
#include <openssl/x509v3.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cerrno>
#include <charconv>
#include <csignal>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <thread>

#include "m2fedaqi/error.hpp"

namespace m2fedaqi::transport {

namespace {

std::string openssl_errors() {
  std::string out;
  while (const unsigned long e = ERR_get_error()) {
    char buf[256];
    ERR_error_string_n(e, buf, sizeof buf);
    if (!out.empty()) out += "; ";
    out += buf;
  }
  return out.empty() ? "no OpenSSL error recorded" : out;
}

bool is_certificate_alert(int alert) {
  switch (alert) {
    case SSL_AD_BAD_CERTIFICATE:
    case SSL_AD_UNSUPPORTED_CERTIFICATE:
    case SSL_AD_CERTIFICATE_REVOKED:
    case SSL_AD_CERTIFICATE_EXPIRED:
    case SSL_AD_CERTIFICATE_UNKNOWN:
    case SSL_AD_UNKNOWN_CA:
    case SSL_AD_ACCESS_DENIED:
    case SSL_AD_CERTIFICATE_REQUIRED:
    case SSL_AD_DECRYPT_ERROR:  // issuer name matched but the signature did not verify
      return true;
    default:
      return false;
  }
}

int remaining_ms(Clock::time_point deadline) {
  if (deadline == Clock::time_point::max()) return -1;
  const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - Clock::now()).count();
  if (left <= 0) return 0;
  return static_cast<int>(std::min<long long>(left, 1 << 30));
}

void set_socket_timeout(int fd, Clock::time_point deadline) {
  timeval tv{};
  const int ms = remaining_ms(deadline);
  if (ms == 0) throw TimeoutError("deadline passed");
  if (ms > 0) {
    tv.tv_sec = ms / 1000;
    tv.tv_usec = (ms % 1000) * 1000;
    if (tv.tv_sec == 0 && tv.tv_usec == 0) tv.tv_usec = 1000;
  }
  setsockopt(fd, SOL_SOCKET, SO_RCVTIMEO, &tv, sizeof tv);
  setsockopt(fd, SOL_SOCKET, SO_SNDTIMEO, &tv, sizeof tv);
}

/// Maps a failed SSL call to the error taxonomy. Certificate problems on
/// either side become AuthError; timeouts TimeoutError; the rest ProtocolError.
[[noreturn]] void throw_tls_failure(ssl_st* ssl, int ret, const std::string& what) {
  const int saved_errno = errno;
  const int code = SSL_get_error(ssl, ret);
  const long verify = SSL_get_verify_result(ssl);

  if (code == SSL_ERROR_SSL) {
    const unsigned long e = ERR_peek_last_error();
    const int reason = ERR_GET_REASON(e);
    if (ERR_GET_LIB(e) == ERR_LIB_SSL) {
      if (reason == SSL_R_CERTIFICATE_VERIFY_FAILED || (verify != X509_V_OK && reason != SSL_R_WRONG_VERSION_NUMBER)) {
        const std::string detail = X509_verify_cert_error_string(verify);
        ERR_clear_error();
        throw AuthError(what + ": peer certificate rejected: " + detail);
      }
      if (reason == SSL_R_PEER_DID_NOT_RETURN_A_CERTIFICATE) {
        ERR_clear_error();
        throw AuthError(what + ": peer presented no certificate");
      }
      if (reason >= SSL_AD_REASON_OFFSET && is_certificate_alert(reason - SSL_AD_REASON_OFFSET)) {
        const std::string detail = openssl_errors();
        throw AuthError(what + ": peer refused our certificate (" + detail + ")");
      }
    }
    throw ProtocolError(what + ": TLS failure: " + openssl_errors());
  }
  if (code == SSL_ERROR_ZERO_RETURN) throw ProtocolError(what + ": peer closed the connection");
  if (code == SSL_ERROR_WANT_READ || code == SSL_ERROR_WANT_WRITE ||
      (code == SSL_ERROR_SYSCALL && (saved_errno == EAGAIN || saved_errno == EWOULDBLOCK))) {
    ERR_clear_error();
    throw TimeoutError(what + ": timed out");
  }
  if (code == SSL_ERROR_SYSCALL) {
    const std::string detail = saved_errno != 0 ? std::strerror(saved_errno) : "unexpected end of stream";
    ERR_clear_error();
    throw ProtocolError(what + ": connection lost: " + detail);
  }
  throw ProtocolError(what + ": TLS error code " + std::to_string(code) + ": " + openssl_errors());
}

std::string peer_common_name(ssl_st* ssl) {
  X509* cert = SSL_get1_peer_certificate(ssl);
  if (cert == nullptr) return {};
  char buf[256] = {};
  const int n = X509_NAME_get_text_by_NID(X509_get_subject_name(cert), NID_commonName, buf, sizeof buf);
  X509_free(cert);
  return n > 0 ? std::string(buf, static_cast<std::size_t>(n)) : std::string();
}

/// Lets the peer read our alert instead of a reset: stop writing and drain
/// whatever it already sent for a short while before closing.
void linger_close(int fd) {
  ::shutdown(fd, SHUT_WR);
  const auto until = Clock::now() + std::chrono::milliseconds(500);
  char sink[4096];
  while (true) {
    const int ms = remaining_ms(until);
    if (ms == 0) break;
    pollfd p{fd, POLLIN, 0};
    if (::poll(&p, 1, ms) <= 0) break;
    if (::recv(fd, sink, sizeof sink, 0) <= 0) break;
  }
  ::close(fd);
}

struct AddrInfo {
  addrinfo* list = nullptr;
  ~AddrInfo() {
    if (list != nullptr) freeaddrinfo(list);
  }
};

AddrInfo resolve(const Endpoint& ep, bool passive) {
  addrinfo hints{};
  hints.ai_family = AF_UNSPEC;
  hints.ai_socktype = SOCK_STREAM;
  if (passive) hints.ai_flags = AI_PASSIVE;
  AddrInfo out;
  const std::string port = std::to_string(ep.port);
  if (const int rc = getaddrinfo(ep.host.c_str(), port.c_str(), &hints, &out.list); rc != 0) {
    throw ConfigError("cannot resolve " + ep.str() + ": " + gai_strerror(rc));
  }
  return out;
}

}  // namespace

// ---------------------------------------------------------------------------

TrustConfig TrustConfig::with_env_overrides() const {
  TrustConfig out = *this;
  if (const char* v = std::getenv("M2FEDAQI_CA_CERT"); v != nullptr && *v != '\0') out.ca_cert = v;
  if (const char* v = std::getenv("M2FEDAQI_CERT"); v != nullptr && *v != '\0') out.cert = v;
  if (const char* v = std::getenv("M2FEDAQI_KEY"); v != nullptr && *v != '\0') out.key = v;
  return out;
}

void TrustConfig::validate() const {
  const std::pair<const char*, const std::string*> fields[] = {{"ca_cert", &ca_cert}, {"cert", &cert}, {"key", &key}};
  for (const auto& [name, path] : fields) {
    if (path->empty()) throw ConfigError(std::string("transport.") + name + " is not set");
    if (!std::filesystem::is_regular_file(*path)) {
      throw ConfigError(std::string("transport.") + name + ": no such file " + *path);
    }
  }
}

Endpoint Endpoint::parse(const std::string& text) {
  const auto colon = text.rfind(':');
  if (colon == std::string::npos || colon == 0) throw ConfigError("endpoint must be host:port, got '" + text + "'");
  Endpoint ep;
  ep.host = text.substr(0, colon);
  if (ep.host.size() > 2 && ep.host.front() == '[' && ep.host.back() == ']') ep.host = ep.host.substr(1, ep.host.size() - 2);
  const std::string port = text.substr(colon + 1);
  unsigned value = 0;
  const auto [ptr, ec] = std::from_chars(port.data(), port.data() + port.size(), value);
  if (ec != std::errc() || ptr != port.data() + port.size() || value > 65535) {
    throw ConfigError("invalid port in endpoint '" + text + "'");
  }
  ep.port = static_cast<std::uint16_t>(value);
  return ep;
}

std::string Endpoint::str() const { return host + ":" + std::to_string(port); }

// ---------------------------------------------------------------------------

TlsSession::TlsSession(ssl_st* ssl, int fd, std::string peer_name)
    : ssl_(ssl), fd_(fd), peer_name_(std::move(peer_name)) {}

TlsSession::~TlsSession() { close(); }

void TlsSession::arm_timeout() { set_socket_timeout(fd_, deadline_); }

void TlsSession::write_all(std::span<const std::uint8_t> bytes) {
  if (ssl_ == nullptr) throw ProtocolError("write on a closed session");
  std::size_t done = 0;
  while (done < bytes.size()) {
    arm_timeout();
    const int chunk = static_cast<int>(std::min<std::size_t>(bytes.size() - done, 1 << 20));
    ERR_clear_error();
    const int n = SSL_write(ssl_, bytes.data() + done, chunk);
    if (n <= 0) throw_tls_failure(ssl_, n, "send to " + peer_name_);
    done += static_cast<std::size_t>(n);
    sent_ += static_cast<std::uint64_t>(n);
  }
}

void TlsSession::read_exact(std::span<std::uint8_t> out) {
  if (ssl_ == nullptr) throw ProtocolError("read on a closed session");
  std::size_t done = 0;
  while (done < out.size()) {
    arm_timeout();
    const int chunk = static_cast<int>(std::min<std::size_t>(out.size() - done, 1 << 20));
    ERR_clear_error();
    const int n = SSL_read(ssl_, out.data() + done, chunk);
    if (n <= 0) throw_tls_failure(ssl_, n, "receive from " + peer_name_);
    done += static_cast<std::size_t>(n);
    received_ += static_cast<std::uint64_t>(n);
  }
}

void TlsSession::close() {
  if (ssl_ != nullptr) {
    timeval tv{1, 0};
    setsockopt(fd_, SOL_SOCKET, SO_SNDTIMEO, &tv, sizeof tv);
    SSL_shutdown(ssl_);
    SSL_free(ssl_);
    ssl_ = nullptr;
  }
  if (fd_ >= 0) {
    ::close(fd_);
    fd_ = -1;
  }
}

// ---------------------------------------------------------------------------

TlsContext::TlsContext(Role role, const TrustConfig& trust) : role_(role) {
  std::signal(SIGPIPE, SIG_IGN);
  trust.validate();
  ctx_ = SSL_CTX_new(role == Role::kServer ? TLS_server_method() : TLS_client_method());
  if (ctx_ == nullptr) throw ProtocolError("SSL_CTX_new failed: " + openssl_errors());
  auto fail = [this](const std::string& msg) {
    const std::string detail = openssl_errors();
    SSL_CTX_free(ctx_);
    ctx_ = nullptr;
    throw ConfigError(msg + ": " + detail);
  };
  SSL_CTX_set_min_proto_version(ctx_, TLS1_3_VERSION);
  if (SSL_CTX_load_verify_locations(ctx_, trust.ca_cert.c_str(), nullptr) != 1) {
    fail("cannot load root certificate " + trust.ca_cert);
  }
  if (SSL_CTX_use_certificate_chain_file(ctx_, trust.cert.c_str()) != 1) fail("cannot load certificate " + trust.cert);
  if (SSL_CTX_use_PrivateKey_file(ctx_, trust.key.c_str(), SSL_FILETYPE_PEM) != 1) fail("cannot load key " + trust.key);
  if (SSL_CTX_check_private_key(ctx_) != 1) fail("key " + trust.key + " does not match " + trust.cert);
  SSL_CTX_set_verify(ctx_, SSL_VERIFY_PEER | SSL_VERIFY_FAIL_IF_NO_PEER_CERT, nullptr);
  if (role == Role::kServer) SSL_CTX_set_num_tickets(ctx_, 0);
}

TlsContext::~TlsContext() {
  if (ctx_ != nullptr) SSL_CTX_free(ctx_);
}

std::unique_ptr<TlsSession> TlsContext::accept(int fd, Clock::time_point deadline) const {
  if (role_ != Role::kServer) throw ConfigError("accept needs a server context");
  ssl_st* ssl = SSL_new(ctx_);
  if (ssl == nullptr) {
    ::close(fd);
    throw ProtocolError("SSL_new failed: " + openssl_errors());
  }
  SSL_set_fd(ssl, fd);
  try {
    set_socket_timeout(fd, deadline);
    ERR_clear_error();
    const int rc = SSL_accept(ssl);
    if (rc != 1) throw_tls_failure(ssl, rc, "handshake");
    if (SSL_get_verify_result(ssl) != X509_V_OK) {
      throw AuthError("handshake: " + std::string(X509_verify_cert_error_string(SSL_get_verify_result(ssl))));
    }
    const auto name = peer_common_name(ssl);
    if (name.empty()) throw AuthError("handshake: client certificate has no common name");
    return std::make_unique<TlsSession>(ssl, fd, name);
  } catch (...) {
    SSL_free(ssl);
    linger_close(fd);
    throw;
  }
}

std::unique_ptr<TlsSession> TlsContext::connect(const Endpoint& endpoint, Clock::time_point deadline) const {
  if (role_ != Role::kClient) throw ConfigError("connect needs a client context");
  const int fd = connect_tcp(endpoint, deadline);
  ssl_st* ssl = SSL_new(ctx_);
  if (ssl == nullptr) {
    ::close(fd);
    throw ProtocolError("SSL_new failed: " + openssl_errors());
  }
  SSL_set_fd(ssl, fd);
  SSL_set_tlsext_host_name(ssl, endpoint.host.c_str());
  X509_VERIFY_PARAM* param = SSL_get0_param(ssl);
  in6_addr probe{};
  if (inet_pton(AF_INET, endpoint.host.c_str(), &probe) == 1 || inet_pton(AF_INET6, endpoint.host.c_str(), &probe) == 1) {
    X509_VERIFY_PARAM_set1_ip_asc(param, endpoint.host.c_str());
  } else {
    X509_VERIFY_PARAM_set1_host(param, endpoint.host.c_str(), 0);
  }
  try {
    set_socket_timeout(fd, deadline);
    ERR_clear_error();
    const int rc = SSL_connect(ssl);
    if (rc != 1) throw_tls_failure(ssl, rc, "handshake with " + endpoint.str());
    return std::make_unique<TlsSession>(ssl, fd, peer_common_name(ssl));
  } catch (...) {
    SSL_free(ssl);
    ::close(fd);
    throw;
  }
}

// ---------------------------------------------------------------------------

Listener::Listener(const Endpoint& endpoint) {
  const auto ai = resolve(endpoint, true);
  std::string last_error = "no addresses";
  for (addrinfo* a = ai.list; a != nullptr; a = a->ai_next) {
    const int fd = ::socket(a->ai_family, a->ai_socktype | SOCK_CLOEXEC, a->ai_protocol);
    if (fd < 0) continue;
    const int one = 1;
    setsockopt(fd, SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
    if (::bind(fd, a->ai_addr, a->ai_addrlen) == 0 && ::listen(fd, 64) == 0) {
      sockaddr_storage bound{};
      socklen_t len = sizeof bound;
      getsockname(fd, reinterpret_cast<sockaddr*>(&bound), &len);
      port_ = ntohs(bound.ss_family == AF_INET6 ? reinterpret_cast<sockaddr_in6*>(&bound)->sin6_port
                                                : reinterpret_cast<sockaddr_in*>(&bound)->sin_port);
      fd_ = fd;
      return;
    }
    last_error = std::strerror(errno);
    ::close(fd);
  }
  throw IoError("cannot listen on " + endpoint.str() + ": " + last_error);
}

Listener::~Listener() {
  if (fd_ >= 0) ::close(fd_);
}

int Listener::accept(Clock::time_point deadline) {
  while (true) {
    const int ms = remaining_ms(deadline);
    if (ms == 0) return -1;
    pollfd p{fd_, POLLIN, 0};
    const int rc = ::poll(&p, 1, ms);
    if (rc < 0 && errno == EINTR) continue;
    if (rc <= 0) return -1;
    const int fd = ::accept4(fd_, nullptr, nullptr, SOCK_CLOEXEC);
    if (fd >= 0) {
      const int one = 1;
      setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
      return fd;
    }
    if (errno != EINTR && errno != ECONNABORTED && errno != EAGAIN) {
      throw IoError(std::string("accept failed: ") + std::strerror(errno));
    }
  }
}

int connect_tcp(const Endpoint& endpoint, Clock::time_point deadline) {
  std::string last_error = "no addresses";
  while (true) {
    const auto ai = resolve(endpoint, false);
    for (addrinfo* a = ai.list; a != nullptr; a = a->ai_next) {
      const int fd = ::socket(a->ai_family, a->ai_socktype | SOCK_CLOEXEC, a->ai_protocol);
      if (fd < 0) continue;
      if (::connect(fd, a->ai_addr, a->ai_addrlen) == 0) {
        const int one = 1;
        setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
        return fd;
      }
      last_error = std::strerror(errno);
      ::close(fd);
    }
    if (remaining_ms(deadline) == 0) break;
    std::this_thread::sleep_for(std::chrono::milliseconds(100));
  }
  throw TimeoutError("cannot connect to " + endpoint.str() + ": " + last_error);
}

void close_fd(int fd) {
  if (fd >= 0) ::close(fd);
}

}  // namespace m2fedaqi::transport
