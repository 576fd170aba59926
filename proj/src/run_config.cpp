#include "m2fedaqi/run_config.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <sstream>

#include "m2fedaqi/error.hpp"

namespace m2fedaqi {

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

template <typename T>
T parse_number(const std::string& key, const std::string& value) {
  T out{};
  const auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), out);
  if (ec != std::errc() || ptr != value.data() + value.size()) {
    throw ConfigError(key + ": '" + value + "' is not a valid number");
  }
  return out;
}

void absolutize(std::string& path, const std::filesystem::path& base) {
  if (path.empty()) return;
  const std::filesystem::path p(path);
  if (p.is_relative()) path = (base / p).lexically_normal().string();
}

}  // namespace

bool parse_bool(const std::string& key, const std::string& value) {
  std::string v = value;
  std::transform(v.begin(), v.end(), v.begin(), [](unsigned char c) { return std::tolower(c); });
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw ConfigError(key + ": '" + value + "' is not a boolean");
}

const std::vector<std::string>& RunConfig::keys() {
  static const std::vector<std::string> k = {
      "model.d_tab",         "model.d_img",          "model.d_emb",
      "model.task",          "model.dropout_p",      "model.use_skip",
      "model.use_film_fusion", "model.modality",     "federation.rounds",
      "federation.local_epochs", "federation.lr",    "federation.batch_size",
      "federation.expected_clients", "federation.timeout_s", "federation.seed",
      "federation.validation_fraction", "transport.endpoint", "transport.ca_cert",
      "transport.cert",      "transport.key",        "transport.max_frame",
      "data.manifest",       "data.test_manifest",   "output.directory",
  };
  return k;
}

void RunConfig::set(const std::string& key, const std::string& value) {
  if (key == "model.d_tab") model.d_tab_in = parse_number<int>(key, value);
  else if (key == "model.d_img") model.d_img_in = parse_number<int>(key, value);
  else if (key == "model.d_emb") model.d_emb = parse_number<int>(key, value);
  else if (key == "model.task") model.task = parse_task(value);
  else if (key == "model.dropout_p") model.dropout_p = parse_number<float>(key, value);
  else if (key == "model.use_skip") model.use_skip = parse_bool(key, value);
  else if (key == "model.use_film_fusion") model.use_film_fusion = parse_bool(key, value);
  else if (key == "model.modality") model.modality = parse_modality(value);
  else if (key == "federation.rounds") federation.rounds = parse_number<int>(key, value);
  else if (key == "federation.local_epochs") federation.local_epochs = parse_number<int>(key, value);
  else if (key == "federation.lr") federation.lr = parse_number<float>(key, value);
  else if (key == "federation.batch_size") federation.batch_size = parse_number<int>(key, value);
  else if (key == "federation.expected_clients") federation.expected_clients = parse_number<int>(key, value);
  else if (key == "federation.timeout_s") federation.round_timeout_s = parse_number<double>(key, value);
  else if (key == "federation.seed") federation.seed = parse_number<std::uint64_t>(key, value);
  else if (key == "federation.validation_fraction") federation.validation_fraction = parse_number<double>(key, value);
  else if (key == "transport.endpoint") endpoint = value;
  else if (key == "transport.ca_cert") trust.ca_cert = value;
  else if (key == "transport.cert") trust.cert = value;
  else if (key == "transport.key") trust.key = value;
  else if (key == "transport.max_frame") max_frame = parse_number<std::uint32_t>(key, value);
  else if (key == "data.manifest") manifest = value;
  else if (key == "data.test_manifest") test_manifest = value;
  else if (key == "output.directory") output_dir = value;
  else throw ConfigError("unknown configuration key '" + key + "'");
}

void RunConfig::apply_overrides(const std::vector<std::string>& assignments) {
  for (const auto& a : assignments) {
    const auto eq = a.find('=');
    if (eq == std::string::npos) throw ConfigError("override '" + a + "' is not key=value");
    set(trim(std::string_view(a).substr(0, eq)), trim(std::string_view(a).substr(eq + 1)));
  }
}

RunConfig RunConfig::parse(std::string_view text, const std::string& origin) {
  RunConfig cfg;
  std::istringstream in{std::string(text)};
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto t = trim(line);
    if (t.empty() || t.front() == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(origin + ":" + std::to_string(line_no) + ": expected key = value");
    }
    try {
      cfg.set(trim(std::string_view(t).substr(0, eq)), trim(std::string_view(t).substr(eq + 1)));
    } catch (const ConfigError& e) {
      throw ConfigError(origin + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return cfg;
}

RunConfig RunConfig::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  auto cfg = parse(ss.str(), path);
  cfg.resolve_paths(std::filesystem::absolute(path).parent_path());
  return cfg;
}

void RunConfig::resolve_paths(const std::filesystem::path& base) {
  trust = trust.with_env_overrides();
  for (std::string* p : {&trust.ca_cert, &trust.cert, &trust.key, &manifest, &test_manifest, &output_dir}) {
    absolutize(*p, base);
  }
}

}  // namespace m2fedaqi
