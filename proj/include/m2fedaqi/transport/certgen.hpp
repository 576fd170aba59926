#pragma once

#include <string>
#include <vector>

namespace m2fedaqi::transport {

struct IdentityFiles {
  std::string cert;
  std::string key;
};

struct CertgenOptions {
  std::string out_dir;
  int num_clients = 6;
  /// DNS names and IP literals placed in the server certificate.
  std::vector<std::string> server_hosts = {"localhost", "127.0.0.1"};
  int valid_days = 365;
};

struct FederationCerts {
  IdentityFiles root;  // root.pem / root.key
  IdentityFiles server;
  std::vector<IdentityFiles> clients;  // CN client-0 .. client-(K-1)
};

/// Writes a fresh federation root (P-256), a server identity and K client
/// identities as PEM files into `out_dir`. Keys are written mode 0600.
FederationCerts generate_federation(const CertgenOptions& options);

std::string client_common_name(int index);

/// Issues one more identity signed by an existing root. A negative
/// `valid_days` produces a certificate that is already expired.
IdentityFiles issue_identity(const IdentityFiles& root, const std::string& out_dir, const std::string& stem,
                             const std::string& common_name, const std::vector<std::string>& hosts = {},
                             int valid_days = 365);

/// Identity that chains to nothing but itself.
IdentityFiles generate_self_signed(const std::string& out_dir, const std::string& stem, const std::string& common_name);

/// Subject common name of a PEM certificate file.
std::string certificate_common_name(const std::string& cert_path);

}  // namespace m2fedaqi::transport
