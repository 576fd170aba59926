// Command-line front end: partition, certgen, server, client, centralized,
// evaluate, report.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "m2fedaqi/checkpoint.hpp"
#include "m2fedaqi/error.hpp"
#include "m2fedaqi/federation.hpp"
#include "m2fedaqi/history.hpp"
#include "m2fedaqi/prepare.hpp"
#include "m2fedaqi/run_config.hpp"
#include "m2fedaqi/synthetic.hpp"
#include "m2fedaqi/transport/certgen.hpp"
#include "m2fedaqi/transport/remote.hpp"

namespace fs = std::filesystem;
using namespace m2fedaqi;

namespace {

bool g_quiet = false;

transport::LogFn logger(const std::string& tag) {
  return [tag](const std::string& line) {
    if (!g_quiet) std::fprintf(stderr, "[%s] %s\n", tag.c_str(), line.c_str());
  };
}

struct ConfigArgs {
  std::string path;
  std::vector<std::string> overrides;

  void attach(CLI::App* cmd) {
    cmd->add_option("-c,--config", path, "key=value run configuration file");
    cmd->add_option("--set", overrides, "override a configuration key (key=value), repeatable");
  }

  RunConfig load() const {
    RunConfig cfg = path.empty() ? RunConfig{} : RunConfig::load(path);
    cfg.apply_overrides(overrides);
    cfg.resolve_paths(fs::current_path());
    return cfg;
  }
};

std::string out_path(const RunConfig& cfg, const std::string& file) {
  fs::create_directories(cfg.output_dir);
  return (fs::path(cfg.output_dir) / file).string();
}

/// Takes dimensions and target scaling from the training manifest.
ModelConfig model_for(const RunConfig& cfg, const DatasetManifest& manifest) {
  ModelConfig model = cfg.model;
  model.d_tab_in = manifest.d_tab;
  model.d_img_in = manifest.d_img;
  apply_target_scaling(model, manifest);
  model.validate();
  return model;
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path);
  out << text << "\n";
}

// ---------------------------------------------------------------------------

struct PartitionArgs {
  std::string input;
  bool synthetic = false;
  SyntheticSpec spec;
  PartitionConfig partition;
  double test_fraction = 0.2;
  std::string out_dir = "data";
};

int cmd_partition(const PartitionArgs& a) {
  Dataset raw;
  if (a.synthetic) {
    raw = generate_synthetic(a.spec);
    raw.name = "synthetic";
  } else {
    if (a.input.empty()) throw ConfigError("partition needs --input or --synthetic");
    raw = read_dataset_file(a.input);
    raw.name = fs::path(a.input).stem().string();
  }
  const auto split = split_federated(raw, a.partition, a.test_fraction);
  const auto files = write_federated_split(split, a.out_dir);

  const auto hist = split.class_histogram();
  std::printf("client      n");
  for (int c = 0; c < kNumAqiClasses; ++c) std::printf("  class%d", c);
  std::printf("\n");
  std::size_t total = 0;
  for (std::size_t k = 0; k < hist.size(); ++k) {
    std::printf("%6zu %6zu", k, split.clients[k].size());
    for (auto v : hist[k]) std::printf(" %7zu", v);
    std::printf("\n");
    total += split.clients[k].size();
  }
  std::printf("train %zu, test %zu, manifests in %s\n", total, split.test.size(), a.out_dir.c_str());
  return 0;
}

struct CertgenArgs {
  transport::CertgenOptions options;
};

int cmd_certgen(CertgenArgs a) {
  if (a.options.out_dir.empty()) a.options.out_dir = "certs";
  const auto certs = transport::generate_federation(a.options);
  std::printf("root    %s\nserver  %s\n", certs.root.cert.c_str(), certs.server.cert.c_str());
  for (std::size_t i = 0; i < certs.clients.size(); ++i) std::printf("client  %s\n", certs.clients[i].cert.c_str());
  return 0;
}

struct ServerArgs {
  ConfigArgs config;
  std::string port_file;
};

int cmd_server(const ServerArgs& a) {
  const RunConfig cfg = a.config.load();
  cfg.federation.validate();
  if (cfg.manifest.empty()) throw ConfigError("data.manifest (the training manifest) is required");
  const auto manifest = DatasetManifest::read(cfg.manifest);
  const ModelConfig model = model_for(cfg, manifest);
  const auto log = logger("server");

  transport::ServerTransportOptions opts;
  opts.listen = transport::Endpoint::parse(cfg.endpoint);
  opts.trust = cfg.trust;
  opts.max_frame = cfg.max_frame;
  opts.log = log;
  transport::FederationServer server(opts);
  log("listening on " + opts.listen.host + ":" + std::to_string(server.port()));
  if (!a.port_file.empty()) {
    const auto tmp = a.port_file + ".tmp";
    write_text(tmp, std::to_string(server.port()));
    fs::rename(tmp, a.port_file);
  }

  const auto join_deadline = transport::Clock::now() + std::chrono::duration_cast<transport::Clock::duration>(
                                                           std::chrono::duration<double>(cfg.federation.round_timeout_s));
  server.admit_clients(model, cfg.federation, join_deadline);

  ServerOptions run_opts;
  run_opts.on_round = [&log](const HistoryRow& row) {
    const auto h = row.metrics.headline();
    char buf[160];
    std::snprintf(buf, sizeof buf, "round %u: loss %.5f, validation %s, %.2f s", row.round, row.loss,
                  h ? std::to_string(*h).c_str() : "n/a", row.round_seconds);
    log(buf);
  };
  auto write_history = [&cfg](const std::vector<HistoryRow>& history) {
    write_history_csv(history, out_path(cfg, "history.csv"));
    write_history_json(history, out_path(cfg, "history.json"));
    if (!history.empty()) {
      std::vector<RoundProfile> profiles;
      for (const auto& r : history) profiles.push_back(r.profile);
      export_profiles(profiles, out_path(cfg, "server_profile.csv"), ExportFormat::kCsv);
    }
  };

  RunResult result;
  const auto channels = server.channels();
  try {
    result = server_run(cfg.federation, model, build_model<float>(model, cfg.federation.seed), channels, run_opts);
  } catch (const RunAbortedError& e) {
    write_history(e.history);
    throw;
  }
  write_history(result.history);
  save_checkpoint(out_path(cfg, "checkpoint.m2ck"), {model, result.final_weights});
  if (!cfg.test_manifest.empty()) {
    const auto test = load_dataset(DatasetManifest::read(cfg.test_manifest));
    const auto report = evaluate_model(result.final_weights, model, test);
    write_text(out_path(cfg, "test_metrics.json"), report.to_json());
    log("test metrics " + report.to_json());
  }
  std::printf("final_weights_hash %016llx\n", static_cast<unsigned long long>(fingerprint(result.final_weights.span())));
  return 0;
}

struct ClientArgs {
  ConfigArgs config;
  std::string manifest;
  std::string cert;
  std::string key;
  std::string name;
  std::string profile_out;
};

int cmd_client(const ClientArgs& a) {
  RunConfig cfg = a.config.load();
  if (!a.cert.empty()) cfg.trust.cert = fs::absolute(a.cert).string();
  if (!a.key.empty()) cfg.trust.key = fs::absolute(a.key).string();
  const std::string manifest_path = a.manifest.empty() ? cfg.manifest : a.manifest;
  if (manifest_path.empty()) throw ConfigError("client needs --manifest or data.manifest");
  cfg.trust.validate();

  transport::ClientRunOptions opts;
  opts.server = transport::Endpoint::parse(cfg.endpoint);
  opts.trust = cfg.trust;
  opts.max_frame = cfg.max_frame;
  opts.name = a.name.empty() ? transport::certificate_common_name(cfg.trust.cert) : a.name;
  opts.join_timeout = std::chrono::seconds(static_cast<long>(cfg.federation.round_timeout_s) + 60);
  opts.log = logger(opts.name);

  const auto local = load_dataset(DatasetManifest::read(manifest_path));
  const auto result = transport::run_client(opts, local);
  if (!result.profiles.empty()) {
    const auto path = a.profile_out.empty() ? out_path(cfg, opts.name + "_profile.csv") : a.profile_out;
    export_profiles(result.profiles, path, ExportFormat::kCsv);
  }
  std::printf("final_weights_hash %016llx\n", static_cast<unsigned long long>(result.final_weights_hash));
  return 0;
}

struct CentralizedArgs {
  ConfigArgs config;
  int epochs = -1;
};

int cmd_centralized(const CentralizedArgs& a) {
  const RunConfig cfg = a.config.load();
  cfg.federation.validate();
  if (cfg.manifest.empty()) throw ConfigError("data.manifest (the training manifest) is required");
  const auto manifest = DatasetManifest::read(cfg.manifest);
  const ModelConfig model = model_for(cfg, manifest);
  const auto train = load_dataset(manifest);
  const auto eval = cfg.test_manifest.empty() ? train : load_dataset(DatasetManifest::read(cfg.test_manifest));
  const int epochs = a.epochs >= 0 ? a.epochs : cfg.federation.rounds;
  const auto log = logger("centralized");

  auto result = centralized_train(train, eval, model, build_model<float>(model, cfg.federation.seed), epochs,
                                  cfg.federation.lr, cfg.federation.batch_size, cfg.federation.seed);
  for (const auto& row : result.history) {
    const auto h = row.metrics.headline();
    log("epoch " + std::to_string(row.round) + ": loss " + std::to_string(row.loss) + ", eval " +
        (h ? std::to_string(*h) : std::string("n/a")));
  }
  write_history_csv(result.history, out_path(cfg, "history.csv"));
  write_history_json(result.history, out_path(cfg, "history.json"));
  save_checkpoint(out_path(cfg, "checkpoint.m2ck"), {model, result.weights});
  std::printf("final_weights_hash %016llx\n", static_cast<unsigned long long>(fingerprint(result.weights.span())));
  return 0;
}

struct EvaluateArgs {
  std::string checkpoint;
  std::string manifest;
};

int cmd_evaluate(const EvaluateArgs& a) {
  const auto ckpt = load_checkpoint(a.checkpoint);
  const auto manifest = DatasetManifest::read(a.manifest);
  if (manifest.d_tab != ckpt.config.d_tab_in || manifest.d_img != ckpt.config.d_img_in) {
    throw DataError("checkpoint expects d_tab=" + std::to_string(ckpt.config.d_tab_in) + ", d_img=" +
                    std::to_string(ckpt.config.d_img_in) + " but dataset '" + manifest.name + "' has d_tab=" +
                    std::to_string(manifest.d_tab) + ", d_img=" + std::to_string(manifest.d_img));
  }
  const auto report = evaluate_model(ckpt.params, ckpt.config, load_dataset(manifest));
  std::printf("%s\n", report.to_json().c_str());
  return 0;
}

struct ReportArgs {
  std::vector<std::string> runs;
  std::string out = "report.csv";
};

int cmd_report(const ReportArgs& a) {
  std::vector<std::pair<std::string, std::vector<HistoryRow>>> runs;
  for (const auto& spec : a.runs) {
    const auto eq = spec.find('=');
    const std::string label = eq == std::string::npos ? fs::path(spec).parent_path().filename().string() : spec.substr(0, eq);
    const std::string path = eq == std::string::npos ? spec : spec.substr(eq + 1);
    runs.emplace_back(label.empty() ? path : label, read_history_csv(path));
  }
  const auto rows = merge_histories(runs);
  write_long_csv(rows, a.out);
  std::printf("%zu rows written to %s\n", rows.size(), a.out.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Federated multimodal air-quality training"};
  app.require_subcommand(1);
  app.add_flag("-q,--quiet", g_quiet, "suppress progress logging");

  PartitionArgs partition;
  auto* p = app.add_subcommand("partition", "split a dataset into a test set and K non-IID client shards");
  p->add_option("--input", partition.input, "feature file (.m2fa) to partition");
  p->add_flag("--synthetic", partition.synthetic, "generate the synthetic benchmark instead of reading --input");
  p->add_option("--n", partition.spec.n, "synthetic sample count")->capture_default_str();
  p->add_option("--d-tab", partition.spec.d_tab, "synthetic sensor feature count")->capture_default_str();
  p->add_option("--d-img", partition.spec.d_img, "synthetic image feature count")->capture_default_str();
  p->add_option("--noise", partition.spec.noise, "synthetic observation noise")->capture_default_str();
  p->add_option("--data-seed", partition.spec.seed, "synthetic generator seed")->capture_default_str();
  p->add_option("-K,--clients", partition.partition.num_clients, "number of clients")->capture_default_str();
  p->add_option("--alpha", partition.partition.alpha, "Dirichlet concentration")->capture_default_str();
  p->add_option("--seed", partition.partition.seed, "split and partition seed")->capture_default_str();
  p->add_option("--test-fraction", partition.test_fraction, "held-out test share")->capture_default_str();
  p->add_option("-o,--out", partition.out_dir, "output directory")->capture_default_str();

  CertgenArgs certgen;
  auto* cg = app.add_subcommand("certgen", "create a federation root, a server identity and client identities");
  cg->add_option("-o,--out", certgen.options.out_dir, "output directory")->default_val("certs");
  cg->add_option("-K,--clients", certgen.options.num_clients, "number of client identities")->capture_default_str();
  cg->add_option("--host", certgen.options.server_hosts, "server DNS name or IP (repeatable)");
  cg->add_option("--days", certgen.options.valid_days, "validity in days")->capture_default_str();

  ServerArgs server;
  auto* s = app.add_subcommand("server", "run the federation server");
  server.config.attach(s);
  s->add_option("--port-file", server.port_file, "write the bound port to this file once listening");

  ClientArgs client;
  auto* c = app.add_subcommand("client", "join a federation with one local dataset");
  client.config.attach(c);
  c->add_option("-m,--manifest", client.manifest, "local dataset manifest");
  c->add_option("--cert", client.cert, "client certificate (PEM)");
  c->add_option("--key", client.key, "client private key (PEM)");
  c->add_option("--name", client.name, "client name; defaults to the certificate common name");
  c->add_option("--profile-out", client.profile_out, "per-round profile CSV path");

  CentralizedArgs central;
  auto* ce = app.add_subcommand("centralized", "train on the pooled training set");
  central.config.attach(ce);
  ce->add_option("--epochs", central.epochs, "epochs; defaults to federation.rounds");

  EvaluateArgs evaluate;
  auto* ev = app.add_subcommand("evaluate", "print metrics of a checkpoint on a dataset as JSON");
  ev->add_option("--checkpoint", evaluate.checkpoint, "checkpoint file")->required();
  ev->add_option("-m,--manifest", evaluate.manifest, "dataset manifest")->required();

  ReportArgs report;
  auto* rp = app.add_subcommand("report", "merge history CSVs into one long-format CSV");
  rp->add_option("runs", report.runs, "history files as label=path (or path)")->required();
  rp->add_option("-o,--out", report.out, "output CSV")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*p) return cmd_partition(partition);
    if (*cg) return cmd_certgen(certgen);
    if (*s) return cmd_server(server);
    if (*c) return cmd_client(client);
    if (*ce) return cmd_centralized(central);
    if (*ev) return cmd_evaluate(evaluate);
    if (*rp) return cmd_report(report);
  } catch (const Error& e) {
    std::fprintf(stderr, "error (%s): %s\n", to_string(e.kind()), e.what());
    return exit_code_for(e.kind());
  } catch (const fs::filesystem_error& e) {
    std::fprintf(stderr, "error (io): %s\n", e.what());
    return exit_code_for(ErrorKind::kIo);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 2;
}
