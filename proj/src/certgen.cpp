#include "m2fedaqi/transport/certgen.hpp"

#include <arpa/inet.h>
#include <openssl/err.h>
#include <openssl/evp.h>
#include <openssl/pem.h>
#include <openssl/rand.h>
#include <openssl/x509v3.h>

#include <cstdio>
#include <filesystem>
#include <memory>

#include "m2fedaqi/error.hpp"

namespace m2fedaqi::transport {

namespace {

struct FreeKey {
  void operator()(EVP_PKEY* k) const { EVP_PKEY_free(k); }
};
struct FreeCert {
  void operator()(X509* c) const { X509_free(c); }
};
using KeyPtr = std::unique_ptr<EVP_PKEY, FreeKey>;
using CertPtr = std::unique_ptr<X509, FreeCert>;

[[noreturn]] void fail(const std::string& what) {
  char buf[256] = "unknown error";
  if (const unsigned long e = ERR_get_error()) ERR_error_string_n(e, buf, sizeof buf);
  ERR_clear_error();
  throw IoError("certgen: " + what + ": " + buf);
}

KeyPtr new_key() {
  KeyPtr key(EVP_EC_gen("P-256"));
  if (!key) fail("key generation");
  return key;
}

void add_ext(X509* cert, X509* issuer, int nid, const std::string& value) {
  X509V3_CTX ctx;
  X509V3_set_ctx_nodb(&ctx);
  X509V3_set_ctx(&ctx, issuer, cert, nullptr, nullptr, 0);
  X509_EXTENSION* ext = X509V3_EXT_conf_nid(nullptr, &ctx, nid, value.c_str());
  if (ext == nullptr) fail("extension " + value);
  X509_add_ext(cert, ext, -1);
  X509_EXTENSION_free(ext);
}

std::string san_value(const std::vector<std::string>& hosts) {
  std::string out;
  for (const auto& h : hosts) {
    unsigned char probe[16];
    const bool ip = inet_pton(AF_INET, h.c_str(), probe) == 1 || inet_pton(AF_INET6, h.c_str(), probe) == 1;
    if (!out.empty()) out += ",";
    out += (ip ? "IP:" : "DNS:") + h;
  }
  return out;
}

/// Signs a certificate for `key` with `issuer_key`; a null issuer means self-signed.
CertPtr make_cert(EVP_PKEY* key, const std::string& cn, X509* issuer, EVP_PKEY* issuer_key, bool is_ca,
                  const std::vector<std::string>& hosts, int valid_days) {
  CertPtr cert(X509_new());
  if (!cert) fail("X509_new");
  X509_set_version(cert.get(), 2);
  unsigned char serial_bytes[16];
  RAND_bytes(serial_bytes, sizeof serial_bytes);
  serial_bytes[0] &= 0x7f;
  BIGNUM* serial = BN_bin2bn(serial_bytes, sizeof serial_bytes, nullptr);
  BN_to_ASN1_INTEGER(serial, X509_get_serialNumber(cert.get()));
  BN_free(serial);

  constexpr long kDay = 24L * 3600L;
  if (valid_days >= 0) {
    X509_gmtime_adj(X509_getm_notBefore(cert.get()), -3600);
    X509_gmtime_adj(X509_getm_notAfter(cert.get()), valid_days * kDay);
  } else {
    X509_gmtime_adj(X509_getm_notBefore(cert.get()), (valid_days - 1) * kDay);
    X509_gmtime_adj(X509_getm_notAfter(cert.get()), valid_days * kDay);
  }
  X509_set_pubkey(cert.get(), key);
  X509_NAME* name = X509_get_subject_name(cert.get());
  X509_NAME_add_entry_by_txt(name, "O", MBSTRING_ASC, reinterpret_cast<const unsigned char*>("m2fedaqi"), -1, -1, 0);
  X509_NAME_add_entry_by_txt(name, "CN", MBSTRING_ASC, reinterpret_cast<const unsigned char*>(cn.c_str()), -1, -1, 0);
  X509* signer = issuer != nullptr ? issuer : cert.get();
  X509_set_issuer_name(cert.get(), X509_get_subject_name(signer));

  add_ext(cert.get(), signer, NID_basic_constraints, is_ca ? "critical,CA:TRUE" : "critical,CA:FALSE");
  add_ext(cert.get(), signer, NID_key_usage, is_ca ? "critical,keyCertSign,cRLSign" : "critical,digitalSignature");
  add_ext(cert.get(), signer, NID_subject_key_identifier, "hash");
  if (!is_ca) add_ext(cert.get(), signer, NID_ext_key_usage, "serverAuth,clientAuth");
  if (!hosts.empty()) add_ext(cert.get(), signer, NID_subject_alt_name, san_value(hosts));

  if (X509_sign(cert.get(), issuer_key != nullptr ? issuer_key : key, EVP_sha256()) <= 0) fail("signing " + cn);
  return cert;
}

void write_pem(const std::string& path, X509* cert) {
  FILE* f = std::fopen(path.c_str(), "wb");
  if (f == nullptr) throw IoError("cannot write " + path);
  const int ok = PEM_write_X509(f, cert);
  std::fclose(f);
  if (ok != 1) fail("writing " + path);
}

void write_key(const std::string& path, EVP_PKEY* key) {
  FILE* f = std::fopen(path.c_str(), "wb");
  if (f == nullptr) throw IoError("cannot write " + path);
  std::filesystem::permissions(path, std::filesystem::perms::owner_read | std::filesystem::perms::owner_write);
  const int ok = PEM_write_PrivateKey(f, key, nullptr, nullptr, 0, nullptr, nullptr);
  std::fclose(f);
  if (ok != 1) fail("writing " + path);
}

IdentityFiles write_identity(const std::string& dir, const std::string& stem, X509* cert, EVP_PKEY* key) {
  IdentityFiles out{(std::filesystem::path(dir) / (stem + ".pem")).string(),
                    (std::filesystem::path(dir) / (stem + ".key")).string()};
  write_pem(out.cert, cert);
  write_key(out.key, key);
  return out;
}

struct LoadedRoot {
  CertPtr cert;
  KeyPtr key;
};

LoadedRoot load_root(const IdentityFiles& root) {
  LoadedRoot out;
  FILE* f = std::fopen(root.cert.c_str(), "rb");
  if (f == nullptr) throw IoError("cannot open " + root.cert);
  out.cert.reset(PEM_read_X509(f, nullptr, nullptr, nullptr));
  std::fclose(f);
  f = std::fopen(root.key.c_str(), "rb");
  if (f == nullptr) throw IoError("cannot open " + root.key);
  out.key.reset(PEM_read_PrivateKey(f, nullptr, nullptr, nullptr));
  std::fclose(f);
  if (!out.cert || !out.key) fail("reading root identity");
  return out;
}

}  // namespace

std::string certificate_common_name(const std::string& cert_path) {
  FILE* f = std::fopen(cert_path.c_str(), "rb");
  if (f == nullptr) throw ConfigError("cannot open certificate " + cert_path);
  CertPtr cert(PEM_read_X509(f, nullptr, nullptr, nullptr));
  std::fclose(f);
  if (!cert) throw ConfigError("not a PEM certificate: " + cert_path);
  char buf[256] = {};
  const int n = X509_NAME_get_text_by_NID(X509_get_subject_name(cert.get()), NID_commonName, buf, sizeof buf);
  if (n <= 0) throw ConfigError("certificate has no common name: " + cert_path);
  return std::string(buf, static_cast<std::size_t>(n));
}

std::string client_common_name(int index) { return "client-" + std::to_string(index); }

FederationCerts generate_federation(const CertgenOptions& options) {
  if (options.num_clients < 1) throw ConfigError("certgen needs at least one client");
  if (options.valid_days < 1) throw ConfigError("certgen validity must be at least one day");
  std::filesystem::create_directories(options.out_dir);
  FederationCerts out;
  auto root_key = new_key();
  auto root_cert = make_cert(root_key.get(), "m2fedaqi federation root", nullptr, nullptr, true, {},
                             options.valid_days);
  out.root = write_identity(options.out_dir, "root", root_cert.get(), root_key.get());

  auto server_key = new_key();
  auto server_cert = make_cert(server_key.get(), "server", root_cert.get(), root_key.get(), false,
                               options.server_hosts, options.valid_days);
  out.server = write_identity(options.out_dir, "server", server_cert.get(), server_key.get());

  for (int i = 0; i < options.num_clients; ++i) {
    auto key = new_key();
    auto cert = make_cert(key.get(), client_common_name(i), root_cert.get(), root_key.get(), false, {},
                          options.valid_days);
    out.clients.push_back(write_identity(options.out_dir, client_common_name(i), cert.get(), key.get()));
  }
  return out;
}

IdentityFiles issue_identity(const IdentityFiles& root, const std::string& out_dir, const std::string& stem,
                             const std::string& common_name, const std::vector<std::string>& hosts, int valid_days) {
  std::filesystem::create_directories(out_dir);
  const auto loaded = load_root(root);
  auto key = new_key();
  auto cert = make_cert(key.get(), common_name, loaded.cert.get(), loaded.key.get(), false, hosts, valid_days);
  return write_identity(out_dir, stem, cert.get(), key.get());
}

IdentityFiles generate_self_signed(const std::string& out_dir, const std::string& stem,
                                   const std::string& common_name) {
  std::filesystem::create_directories(out_dir);
  auto key = new_key();
  auto cert = make_cert(key.get(), common_name, nullptr, nullptr, false, {}, 365);
  return write_identity(out_dir, stem, cert.get(), key.get());
}

}  // namespace m2fedaqi::transport
