#include "m2fedaqi/data.hpp"

#include <charconv>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

namespace m2fedaqi {

int aqi_to_category(double aqi) {
  if (!(aqi >= 0.0)) throw DataError("AQI must be a non-negative number, got " + std::to_string(aqi));
  if (aqi <= 50.0) return 0;
  if (aqi <= 100.0) return 1;
  if (aqi <= 150.0) return 2;
  if (aqi <= 200.0) return 3;
  if (aqi <= 300.0) return 4;
  return 5;
}

const char* aqi_category_name(int category) {
  static constexpr const char* kNames[] = {"Good", "Moderate", "Unhealthy for Sensitive Groups",
                                           "Unhealthy", "Very Unhealthy", "Hazardous"};
  if (category < 0 || category >= kNumAqiClasses) return "Unknown";
  return kNames[category];
}

Sample Dataset::sample(std::size_t i) const {
  if (i >= size()) throw DataError("sample index " + std::to_string(i) + " out of range");
  const auto row = static_cast<nn::Index>(i);
  Sample s;
  s.id = i;
  s.tab_feat.assign(tabular.row(row).data(), tabular.row(row).data() + tabular.cols());
  s.img_feat.assign(image.row(row).data(), image.row(row).data() + image.cols());
  s.pm25 = pm25[i];
  s.class_label = labels[i];
  return s;
}

Dataset Dataset::subset(std::span<const std::size_t> indices) const {
  Dataset out;
  out.name = name;
  out.tabular.resize(static_cast<nn::Index>(indices.size()), tabular.cols());
  out.image.resize(static_cast<nn::Index>(indices.size()), image.cols());
  out.pm25.reserve(indices.size());
  out.labels.reserve(indices.size());
  for (std::size_t k = 0; k < indices.size(); ++k) {
    const auto src = static_cast<nn::Index>(indices[k]);
    if (indices[k] >= size()) throw DataError("subset index " + std::to_string(indices[k]) + " out of range");
    out.tabular.row(static_cast<nn::Index>(k)) = tabular.row(src);
    out.image.row(static_cast<nn::Index>(k)) = image.row(src);
    out.pm25.push_back(pm25[indices[k]]);
    out.labels.push_back(labels[indices[k]]);
  }
  return out;
}

Batch<float> Dataset::batch(std::span<const std::size_t> indices) const {
  Batch<float> b;
  b.tabular.resize(static_cast<nn::Index>(indices.size()), tabular.cols());
  b.image.resize(static_cast<nn::Index>(indices.size()), image.cols());
  b.labels.reserve(indices.size());
  b.values.reserve(indices.size());
  for (std::size_t k = 0; k < indices.size(); ++k) {
    const auto src = static_cast<nn::Index>(indices[k]);
    b.tabular.row(static_cast<nn::Index>(k)) = tabular.row(src);
    b.image.row(static_cast<nn::Index>(k)) = image.row(src);
    b.labels.push_back(labels[indices[k]]);
    b.values.push_back(pm25[indices[k]]);
  }
  return b;
}

Batch<float> Dataset::all() const {
  Batch<float> b;
  b.tabular = tabular;
  b.image = image;
  b.labels = label_vector();
  b.values = pm25;
  return b;
}

void Dataset::validate() const {
  if (static_cast<std::size_t>(tabular.rows()) != size() || static_cast<std::size_t>(image.rows()) != size() ||
      labels.size() != size()) {
    throw DataError("dataset columns have inconsistent row counts");
  }
  for (std::size_t i = 0; i < size(); ++i) {
    const auto row = static_cast<nn::Index>(i);
    if (!tabular.row(row).allFinite() || !image.row(row).allFinite() || !std::isfinite(pm25[i])) {
      throw DataError("non-finite value in row " + std::to_string(i));
    }
    if (pm25[i] < 0.0f) throw DataError("negative pm25 in row " + std::to_string(i));
    if (labels[i] != aqi_to_category(pm25[i])) {
      throw DataError("class label " + std::to_string(labels[i]) + " in row " + std::to_string(i) +
                      " disagrees with AQI banding of " + std::to_string(pm25[i]));
    }
  }
}

bool Dataset::operator==(const Dataset& other) const {
  auto same_bits = [](const nn::Matrix<float>& a, const nn::Matrix<float>& b) {
    return a.rows() == b.rows() && a.cols() == b.cols() &&
           std::memcmp(a.data(), b.data(), sizeof(float) * static_cast<std::size_t>(a.size())) == 0;
  };
  return same_bits(tabular, other.tabular) && same_bits(image, other.image) && labels == other.labels &&
         pm25.size() == other.pm25.size() &&
         std::memcmp(pm25.data(), other.pm25.data(), sizeof(float) * pm25.size()) == 0;
}

NormalizationStats NormalizationStats::compute(const Dataset& data) {
  NormalizationStats s;
  const auto n = static_cast<double>(data.size());
  if (data.size() == 0) throw DataError("cannot compute normalization stats of an empty dataset");
  for (nn::Index c = 0; c < data.tabular.cols(); ++c) {
    const Eigen::VectorXd col = data.tabular.col(c).cast<double>();
    const double mean = col.sum() / n;
    const double var = (col.array() - mean).square().sum() / n;
    s.mean.push_back(static_cast<float>(mean));
    s.stddev.push_back(static_cast<float>(std::sqrt(var)));
  }
  return s;
}

Dataset normalize(const Dataset& data, const NormalizationStats& stats) {
  if (stats.mean.size() != static_cast<std::size_t>(data.d_tab()) || stats.stddev.size() != stats.mean.size()) {
    throw DataError("normalization stats cover " + std::to_string(stats.mean.size()) +
                    " features, dataset has " + std::to_string(data.d_tab()));
  }
  Dataset out = data;
  for (nn::Index c = 0; c < out.tabular.cols(); ++c) {
    const double mean = stats.mean[static_cast<std::size_t>(c)];
    const double sd = stats.stddev[static_cast<std::size_t>(c)];
    for (nn::Index r = 0; r < out.tabular.rows(); ++r) {
      out.tabular(r, c) = sd == 0.0 ? 0.0f : static_cast<float>((out.tabular(r, c) - mean) / sd);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Binary feature file.

namespace {

constexpr char kMagic[4] = {'M', '2', 'F', 'A'};
constexpr std::size_t kHeaderBytes = 4 + 1 + 8 + 4 + 4;

std::size_t row_bytes(std::size_t d_tab, std::size_t d_img) { return 4 * (d_tab + d_img) + 4 + 1; }

}  // namespace

std::vector<std::uint8_t> encode_dataset(const Dataset& data) {
  ByteWriter w;
  w.raw({reinterpret_cast<const std::uint8_t*>(kMagic), 4});
  w.u8(kDatasetVersion);
  w.u64(data.size());
  w.u32(static_cast<std::uint32_t>(data.d_tab()));
  w.u32(static_cast<std::uint32_t>(data.d_img()));
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto row = static_cast<nn::Index>(i);
    w.f32_array({data.tabular.row(row).data(), static_cast<std::size_t>(data.tabular.cols())});
    w.f32_array({data.image.row(row).data(), static_cast<std::size_t>(data.image.cols())});
    w.f32(data.pm25[i]);
    w.u8(data.labels[i]);
  }
  return w.take();
}

Dataset decode_dataset(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < kHeaderBytes) {
    throw DataError("feature file truncated: expected at least " + std::to_string(kHeaderBytes) +
                    " header bytes, got " + std::to_string(bytes.size()));
  }
  ByteReader r(bytes);
  auto magic = r.raw(4);
  if (std::memcmp(magic.data(), kMagic, 4) != 0) throw DataError("feature file: bad magic");
  const auto version = r.u8();
  if (version != kDatasetVersion) throw DataError("feature file: unsupported version " + std::to_string(version));
  const std::uint64_t rows = r.u64();
  const std::uint32_t d_tab = r.u32();
  const std::uint32_t d_img = r.u32();
  const std::size_t expected = kHeaderBytes + rows * row_bytes(d_tab, d_img);
  if (bytes.size() != expected) {
    throw DataError("feature file size mismatch: expected " + std::to_string(expected) + " bytes, got " +
                    std::to_string(bytes.size()));
  }
  Dataset d;
  d.tabular.resize(static_cast<nn::Index>(rows), d_tab);
  d.image.resize(static_cast<nn::Index>(rows), d_img);
  d.pm25.resize(rows);
  d.labels.resize(rows);
  for (std::uint64_t i = 0; i < rows; ++i) {
    const auto row = static_cast<nn::Index>(i);
    r.f32_array({d.tabular.row(row).data(), d_tab});
    r.f32_array({d.image.row(row).data(), d_img});
    d.pm25[i] = r.f32();
    d.labels[i] = r.u8();
    if (!d.tabular.row(row).allFinite() || !d.image.row(row).allFinite() || !std::isfinite(d.pm25[i])) {
      throw DataError("feature file: non-finite value in row " + std::to_string(i));
    }
    if (d.pm25[i] < 0.0f || d.labels[i] != aqi_to_category(d.pm25[i])) {
      throw DataError("feature file: inconsistent label/target in row " + std::to_string(i));
    }
  }
  return d;
}

void write_dataset_file(const std::string& path, const Dataset& data) {
  write_file(path, encode_dataset(data));
}

Dataset read_dataset_file(const std::string& path) {
  Dataset d = decode_dataset(read_file(path));
  d.name = std::filesystem::path(path).stem().string();
  return d;
}

// ---------------------------------------------------------------------------
// Manifest.

namespace {

std::string join_floats(const std::vector<float>& v) {
  std::string out;
  char buf[64];
  for (std::size_t i = 0; i < v.size(); ++i) {
    // Shortest round-trip representation keeps stats bit-exact through text.
    auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), v[i]);
    if (i) out += ',';
    out.append(buf, end);
  }
  return out;
}

std::string float_text(float v) { return join_floats({v}); }

float parse_float(const std::string& key, const std::string& text) {
  float v = 0.0f;
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc() || ptr != text.data() + text.size()) {
    throw DataError("manifest: bad number '" + text + "' for " + key);
  }
  return v;
}

std::vector<float> parse_floats(const std::string& key, const std::string& text) {
  std::vector<float> out;
  if (text.empty()) return out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(parse_float(key, item));
  return out;
}

long long parse_int(const std::string& key, const std::string& text) {
  long long v = 0;
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc() || ptr != text.data() + text.size()) {
    throw DataError("manifest: bad integer '" + text + "' for " + key);
  }
  return v;
}

}  // namespace

void DatasetManifest::validate() const {
  if (n == 0) throw DataError("manifest '" + name + "': sample count must be positive");
  if (d_tab <= 0 || d_img <= 0) throw DataError("manifest '" + name + "': dimensions must be positive");
  if (stats.mean.size() != static_cast<std::size_t>(d_tab) || stats.stddev.size() != stats.mean.size()) {
    throw DataError("manifest '" + name + "': normalization stats length differs from d_tab");
  }
  if (!(target_scale > 0.0f)) throw DataError("manifest '" + name + "': target_scale must be positive");
}

void DatasetManifest::write(const std::string& path) const {
  validate();
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write manifest " + path);
  out << "format=m2fedaqi-manifest-1\n";
  out << "name=" << name << "\n";
  out << "split=" << split << "\n";
  out << "d_tab=" << d_tab << "\n";
  out << "d_img=" << d_img << "\n";
  out << "n=" << n << "\n";
  out << "tab_mean=" << join_floats(stats.mean) << "\n";
  out << "tab_std=" << join_floats(stats.stddev) << "\n";
  out << "target_mean=" << float_text(target_mean) << "\n";
  out << "target_scale=" << float_text(target_scale) << "\n";
  out << "classification=" << (supports_classification ? 1 : 0) << "\n";
  out << "regression=" << (supports_regression ? 1 : 0) << "\n";
  out << "features=" << features_path << "\n";
  if (!out) throw IoError("short write to manifest " + path);
}

DatasetManifest DatasetManifest::read(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open manifest " + path);
  std::map<std::string, std::string> kv;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw DataError("manifest " + path + ": line " + std::to_string(line_no) + " is not key=value");
    }
    kv[line.substr(0, eq)] = line.substr(eq + 1);
  }
  auto need = [&](const std::string& key) -> const std::string& {
    auto it = kv.find(key);
    if (it == kv.end()) throw DataError("manifest " + path + ": missing key '" + key + "'");
    return it->second;
  };
  if (need("format") != "m2fedaqi-manifest-1") throw DataError("manifest " + path + ": unknown format");
  DatasetManifest m;
  m.name = need("name");
  m.split = need("split");
  m.d_tab = static_cast<int>(parse_int("d_tab", need("d_tab")));
  m.d_img = static_cast<int>(parse_int("d_img", need("d_img")));
  m.n = static_cast<std::size_t>(parse_int("n", need("n")));
  m.stats.mean = parse_floats("tab_mean", need("tab_mean"));
  m.stats.stddev = parse_floats("tab_std", need("tab_std"));
  m.target_mean = parse_float("target_mean", need("target_mean"));
  m.target_scale = parse_float("target_scale", need("target_scale"));
  m.supports_classification = need("classification") == "1";
  m.supports_regression = need("regression") == "1";
  std::filesystem::path features = need("features");
  if (features.is_relative()) features = std::filesystem::path(path).parent_path() / features;
  m.features_path = features.string();
  m.validate();
  return m;
}

Dataset load_dataset(const DatasetManifest& manifest, bool apply_normalization) {
  manifest.validate();
  Dataset d = read_dataset_file(manifest.features_path);
  d.name = manifest.name;
  if (d.size() != manifest.n || d.d_tab() != manifest.d_tab || d.d_img() != manifest.d_img) {
    throw DataError("manifest '" + manifest.name + "' declares n=" + std::to_string(manifest.n) +
                    " d_tab=" + std::to_string(manifest.d_tab) + " d_img=" + std::to_string(manifest.d_img) +
                    " but file holds n=" + std::to_string(d.size()) + " d_tab=" + std::to_string(d.d_tab()) +
                    " d_img=" + std::to_string(d.d_img()));
  }
  return apply_normalization ? normalize(d, manifest.stats) : d;
}

void apply_target_scaling(ModelConfig& cfg, const DatasetManifest& manifest) {
  if (cfg.task == Task::kRegression) {
    cfg.target_mean = manifest.target_mean;
    cfg.target_scale = manifest.target_scale;
  } else {
    cfg.target_mean = 0.0f;
    cfg.target_scale = 1.0f;
  }
}

}  // namespace m2fedaqi
