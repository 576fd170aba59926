#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>
#include <set>

#include "m2fedaqi/bytes.hpp"
#include "m2fedaqi/data.hpp"
#include "m2fedaqi/partition.hpp"
#include "m2fedaqi/prepare.hpp"
#include "m2fedaqi/synthetic.hpp"
#include "support.hpp"

namespace m2fedaqi {
namespace {

using testing::TempDir;

std::vector<int> balanced_labels(std::size_t n) {
  std::vector<int> labels(n);
  for (std::size_t i = 0; i < n; ++i) labels[i] = static_cast<int>(i % kNumAqiClasses);
  return labels;
}

void expect_exact_cover(const IndexLists& lists, std::size_t n) {
  std::vector<int> seen(n, 0);
  for (const auto& l : lists) {
    for (auto i : l) {
      ASSERT_LT(i, n);
      ++seen[i];
    }
  }
  for (std::size_t i = 0; i < n; ++i) ASSERT_EQ(seen[i], 1) << "index " << i;
}

Dataset tiny_dataset() {
  SyntheticSpec spec;
  spec.n = 120;
  spec.d_tab = 4;
  spec.d_img = 6;
  spec.tab_nuisance = 1;
  spec.tuning_units = 3;
  spec.seed = 3;
  return generate_synthetic(spec);
}

TEST(AqiBands, TableExamples) {
  EXPECT_EQ(aqi_to_category(42), 0);
  EXPECT_EQ(aqi_to_category(150), 2);
  EXPECT_EQ(aqi_to_category(301), 5);
}

TEST(AqiBands, UpperInclusiveBoundaries) {
  const double edges[] = {50, 100, 150, 200, 300};
  for (int c = 0; c < 5; ++c) {
    EXPECT_EQ(aqi_to_category(edges[c]), c) << edges[c];
    EXPECT_EQ(aqi_to_category(std::nextafter(edges[c], 1e9)), c + 1) << edges[c];
  }
  EXPECT_EQ(aqi_to_category(0), 0);
  EXPECT_EQ(aqi_to_category(50.5), 1);
  EXPECT_EQ(aqi_to_category(1e6), 5);
}

TEST(AqiBands, MonotoneAndTotal) {
  int prev = 0;
  for (double a = 0; a <= 600; a += 0.25) {
    const int c = aqi_to_category(a);
    EXPECT_GE(c, prev);
    EXPECT_LE(c, 5);
    prev = c;
  }
}

TEST(AqiBands, NegativeIsDataError) {
  EXPECT_THROW(aqi_to_category(-1), DataError);
  EXPECT_THROW(aqi_to_category(std::nan("")), DataError);
  EXPECT_STREQ(aqi_category_name(2), "Unhealthy for Sensitive Groups");
}

TEST(Partition, SingleClientTakesEverything) {
  PartitionConfig cfg;
  cfg.num_clients = 1;
  cfg.alpha = 0.01;
  const auto lists = partition_dirichlet(balanced_labels(97), cfg);
  ASSERT_EQ(lists.size(), 1u);
  EXPECT_EQ(lists[0].size(), 97u);
  expect_exact_cover(lists, 97);
}

TEST(Partition, ExactCoverAcrossConfigs) {
  const auto labels = balanced_labels(600);
  for (int k : {2, 3, 6, 10}) {
    for (double alpha : {0.1, 0.5, 1.0, 100.0}) {
      for (std::uint64_t seed : {1, 7, 42}) {
        PartitionConfig cfg;
        cfg.num_clients = k;
        cfg.alpha = alpha;
        cfg.seed = seed;
        const auto lists = partition_dirichlet(labels, cfg);
        ASSERT_EQ(static_cast<int>(lists.size()), k);
        expect_exact_cover(lists, labels.size());
        for (const auto& l : lists) EXPECT_GE(l.size(), 1u);
      }
    }
  }
}

TEST(Partition, SeedSevenExample) {
  PartitionConfig cfg;
  cfg.num_clients = 6;
  cfg.alpha = 0.5;
  cfg.seed = 7;
  expect_exact_cover(partition_dirichlet(balanced_labels(600), cfg), 600);
}

TEST(Partition, HugeAlphaIsNearUniform) {
  const auto labels = balanced_labels(6000);
  PartitionConfig cfg;
  cfg.num_clients = 6;
  cfg.alpha = 1e6;
  cfg.seed = 3;
  const auto lists = partition_dirichlet(labels, cfg);
  for (const auto& l : lists) {
    std::array<double, kNumAqiClasses> counts{};
    for (auto i : l) counts[static_cast<std::size_t>(labels[i])] += 1.0;
    for (double c : counts) EXPECT_NEAR(c / 1000.0, 1.0 / 6.0, 0.02);
  }
}

TEST(Partition, HeterogeneityGrowsAsAlphaShrinks) {
  const auto labels = balanced_labels(6000);
  auto mean_ratio = [&](double alpha) {
    double total = 0;
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
      PartitionConfig cfg;
      cfg.num_clients = 6;
      cfg.alpha = alpha;
      cfg.seed = seed;
      const auto lists = partition_dirichlet(labels, cfg);
      std::size_t lo = labels.size(), hi = 0;
      for (const auto& l : lists) {
        lo = std::min(lo, l.size());
        hi = std::max(hi, l.size());
      }
      total += static_cast<double>(hi) / static_cast<double>(lo);
    }
    return total / 50.0;
  };
  EXPECT_GT(mean_ratio(0.1), mean_ratio(10.0));
}

TEST(Partition, Deterministic) {
  PartitionConfig cfg;
  cfg.seed = 9;
  EXPECT_EQ(partition_dirichlet(balanced_labels(300), cfg), partition_dirichlet(balanced_labels(300), cfg));
}

TEST(Partition, ImpossibleRequestIsPartitionError) {
  PartitionConfig cfg;
  cfg.num_clients = 6;
  EXPECT_THROW(partition_dirichlet(balanced_labels(4), cfg), PartitionError);
  cfg.num_clients = 6;
  cfg.alpha = 0.001;
  cfg.min_per_client = 151;  // 900 / 6 = 150, unreachable
  cfg.max_attempts = 3;
  EXPECT_THROW(partition_dirichlet(balanced_labels(900), cfg), PartitionError);
}

TEST(Partition, InvalidConfig) {
  PartitionConfig cfg;
  cfg.alpha = 0.0;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg.alpha = -1;
  EXPECT_THROW(partition_dirichlet(balanced_labels(60), cfg), ConfigError);
}

TEST(Dirichlet, SamplesLieOnTheSimplex) {
  RandomStream rng(5);
  for (double alpha : {0.05, 0.5, 5.0}) {
    const auto p = sample_dirichlet(alpha, 6, rng);
    double sum = 0;
    for (double v : p) {
      EXPECT_GE(v, 0.0);
      sum += v;
    }
    EXPECT_NEAR(sum, 1.0, 1e-12);
  }
}

TEST(Holdout, SizesAndCover) {
  const auto h = split_holdout(103, 0.2, RandomStream(1));
  EXPECT_EQ(h.held_out.size(), 21u);
  EXPECT_EQ(h.kept.size(), 82u);
  expect_exact_cover({h.kept, h.held_out}, 103);
}

TEST(Synthetic, NoiseFreeLinearSensorsAreExactlyDecodable) {
  SyntheticSpec spec;
  spec.n = 600;
  spec.noise = spec.tab_noise = spec.img_noise = 0.0;
  spec.staggered_sensors = false;
  spec.band_margin = 0.0;
  const auto d = generate_synthetic(spec);
  Eigen::MatrixXd x(static_cast<Index>(d.size()), d.d_tab() + 1);
  Eigen::VectorXd y(static_cast<Index>(d.size()));
  for (Index i = 0; i < x.rows(); ++i) {
    x.row(i).head(d.d_tab()) = d.tabular.row(i).cast<double>();
    x(i, d.d_tab()) = 1.0;
    y(i) = d.pm25[static_cast<std::size_t>(i)];
  }
  const Eigen::VectorXd beta = x.colPivHouseholderQr().solve(y);
  const double ss_res = (y - x * beta).squaredNorm();
  const double ss_tot = (y.array() - y.mean()).square().sum();
  EXPECT_GT(1.0 - ss_res / ss_tot, 0.999);
}

TEST(Synthetic, DeterministicFiles) {
  TempDir dir;
  SyntheticSpec spec;
  spec.n = 300;
  spec.d_img = 32;
  write_dataset_file(dir / "a.m2fa", generate_synthetic(spec));
  write_dataset_file(dir / "b.m2fa", generate_synthetic(spec));
  EXPECT_EQ(testing::slurp(dir / "a.m2fa"), testing::slurp(dir / "b.m2fa"));
  spec.seed = 2;
  write_dataset_file(dir / "c.m2fa", generate_synthetic(spec));
  EXPECT_NE(testing::slurp(dir / "a.m2fa"), testing::slurp(dir / "c.m2fa"));
}

TEST(Synthetic, ClassesAreBalancedEnough) {
  SyntheticSpec spec;
  spec.n = 600;
  spec.d_img = 16;
  spec.seed = 1;
  const auto d = generate_synthetic(spec);
  std::array<int, kNumAqiClasses> counts{};
  for (auto l : d.labels) ++counts[l];
  for (int c : counts) EXPECT_GE(c, 50);
  d.validate();
  for (std::size_t i = 0; i < d.size(); ++i) EXPECT_EQ(d.labels[i], aqi_to_category(d.pm25[i]));
}

TEST(Synthetic, InvalidSpec) {
  SyntheticSpec spec;
  spec.n = 0;
  EXPECT_THROW(generate_synthetic(spec), ConfigError);
  spec = SyntheticSpec{};
  spec.tab_nuisance = spec.d_tab;
  EXPECT_THROW(generate_synthetic(spec), ConfigError);
}

TEST(DatasetFile, RoundTripBitExact) {
  TempDir dir;
  const auto d = tiny_dataset();
  write_dataset_file(dir / "d.m2fa", d);
  const auto back = read_dataset_file(dir / "d.m2fa");
  EXPECT_TRUE(back == d);
  const auto s = back.sample(7);
  EXPECT_EQ(s.id, 7u);
  EXPECT_EQ(s.tab_feat.size(), 4u);
  EXPECT_EQ(s.img_feat.size(), 6u);
}

TEST(DatasetFile, LayoutIsBitExact) {
  Dataset d;
  d.tabular.resize(1, 1);
  d.image.resize(1, 2);
  d.tabular << 1.0f;
  d.image << 2.0f, 3.0f;
  d.pm25 = {75.0f};
  d.labels = {1};
  const auto bytes = encode_dataset(d);
  ByteWriter w;
  w.raw(std::vector<std::uint8_t>{'M', '2', 'F', 'A'});
  w.u8(kDatasetVersion);
  w.u64(1);
  w.u32(1);
  w.u32(2);
  w.f32(1.0f);
  w.f32(2.0f);
  w.f32(3.0f);
  w.f32(75.0f);
  w.u8(1);
  EXPECT_EQ(bytes, w.bytes());
}

TEST(DatasetFile, TruncationNamesByteCounts) {
  auto bytes = encode_dataset(tiny_dataset());
  const auto full = bytes.size();
  bytes.resize(full - 3);
  try {
    decode_dataset(bytes);
    FAIL();
  } catch (const DataError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find(std::to_string(full)), std::string::npos) << msg;
    EXPECT_NE(msg.find(std::to_string(full - 3)), std::string::npos) << msg;
  }
}

TEST(DatasetFile, BadMagicVersionAndValues) {
  auto bytes = encode_dataset(tiny_dataset());
  auto magic = bytes;
  magic[1] = 'X';
  EXPECT_THROW(decode_dataset(magic), DataError);
  auto version = bytes;
  version[4] = 9;
  EXPECT_THROW(decode_dataset(version), DataError);
  auto nan = bytes;
  const float q = std::nanf("");
  std::memcpy(nan.data() + 21 + 4, &q, 4);
  try {
    decode_dataset(nan);
    FAIL();
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("row 0"), std::string::npos) << e.what();
  }
}

TEST(Normalize, ZeroVarianceColumnBecomesZero) {
  auto d = tiny_dataset();
  d.tabular.col(2).setConstant(4.0f);
  const auto stats = NormalizationStats::compute(d);
  EXPECT_EQ(stats.stddev[2], 0.0f);
  const auto n = normalize(d, stats);
  EXPECT_TRUE(n.tabular.col(2).isZero());
}

TEST(Normalize, TrainColumnsHaveZeroMean) {
  const auto d = tiny_dataset();
  const auto n = normalize(d, NormalizationStats::compute(d));
  for (Index j = 0; j < n.tabular.cols(); ++j) EXPECT_LT(std::abs(n.tabular.col(j).cast<double>().mean()), 1e-5);
  EXPECT_TRUE(n.image == d.image);
}

TEST(Manifest, WriteReadAndLoad) {
  TempDir dir;
  const auto d = tiny_dataset();
  write_dataset_file(dir / "d.m2fa", d);
  DatasetManifest m;
  m.name = "tiny";
  m.d_tab = d.d_tab();
  m.d_img = d.d_img();
  m.n = d.size();
  m.stats = NormalizationStats::compute(d);
  m.target_mean = 150.0f;
  m.target_scale = 90.0f;
  m.features_path = "d.m2fa";
  m.write(dir / "d.manifest");
  const auto back = DatasetManifest::read(dir / "d.manifest");
  EXPECT_EQ(back.name, "tiny");
  EXPECT_EQ(back.stats.mean, m.stats.mean);
  EXPECT_EQ(back.stats.stddev, m.stats.stddev);
  EXPECT_EQ(back.target_scale, 90.0f);
  const auto raw = load_dataset(back, false);
  EXPECT_TRUE(raw.tabular == d.tabular);
  const auto normed = load_dataset(back, true);
  EXPECT_TRUE(normed.tabular == normalize(d, m.stats).tabular);

  ModelConfig cfg;
  cfg.task = Task::kRegression;
  apply_target_scaling(cfg, back);
  EXPECT_EQ(cfg.target_mean, 150.0f);

  m.n = d.size() + 1;
  m.write(dir / "wrong.manifest");
  EXPECT_THROW(load_dataset(DatasetManifest::read(dir / "wrong.manifest")), DataError);
}

TEST(Prepare, SplitSizesAndFiles) {
  SyntheticSpec spec;
  spec.n = 3000;
  spec.d_img = 16;
  const auto raw = generate_synthetic(spec);
  PartitionConfig pc;
  pc.num_clients = 6;
  pc.alpha = 0.5;
  pc.seed = 1;
  const auto split = split_federated(raw, pc, 0.2);
  EXPECT_EQ(split.test.size(), 600u);
  EXPECT_EQ(split.train.size(), 2400u);
  std::size_t total = 0;
  for (const auto& row : split.class_histogram()) total += std::accumulate(row.begin(), row.end(), std::size_t{0});
  EXPECT_EQ(total, 2400u);
  expect_exact_cover(split.clients, 2400);

  TempDir dir;
  const auto files = write_federated_split(split, dir.path().string());
  ASSERT_EQ(files.client_manifests.size(), 6u);
  std::size_t loaded = 0;
  for (std::size_t k = 0; k < 6; ++k) {
    const auto local = load_dataset(DatasetManifest::read(files.client_manifests[k]));
    EXPECT_TRUE(local == split.client(k));
    loaded += local.size();
  }
  EXPECT_EQ(loaded, 2400u);
  const auto test = load_dataset(DatasetManifest::read(files.test_manifest));
  EXPECT_TRUE(test == split.normalized_test());
  const auto summary = testing::slurp(files.summary_csv);
  EXPECT_EQ(std::count(summary.begin(), summary.end(), '\n'), 7);
}

}  // namespace
}  // namespace m2fedaqi
