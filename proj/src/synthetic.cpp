#include "m2fedaqi/synthetic.hpp"

#include <algorithm>
#include <array>
#include <cmath>

#include "m2fedaqi/error.hpp"

namespace m2fedaqi {

namespace {

constexpr double kMaxPm25 = 500.0;
constexpr int kMaxResampleAttempts = 1000;
constexpr double kBandEdges[kNumAqiClasses + 1] = {0.0, 50.0, 100.0, 150.0, 200.0, 300.0, 500.0};

}  // namespace

Dataset generate_synthetic(const SyntheticSpec& spec) {
  if (spec.n == 0 || spec.d_tab <= 0 || spec.d_img <= 0) {
    throw ConfigError("synthetic: n, d_tab and d_img must be positive");
  }
  if (!(spec.noise >= 0.0)) throw ConfigError("synthetic: noise must be non-negative");

  const RandomStream root = RandomStream(spec.seed).derive("synthetic");
  const int nuisance = spec.tab_nuisance >= 0 ? spec.tab_nuisance : spec.d_tab / 2;
  const nn::Index n = static_cast<nn::Index>(spec.n);
  const int conc = spec.d_tab - nuisance;
  if (nuisance < 0 || conc < 1) throw ConfigError("synthetic: tab_nuisance must leave at least one sensor channel");
  if (!(spec.band_margin >= 0.0 && spec.band_margin < 0.5)) throw ConfigError("synthetic: band_margin must lie in [0, 0.5)");
  if (spec.tuning_units < 0 || spec.scene_factors < 0) throw ConfigError("synthetic: negative unit count");
  if (!(spec.sensor_width > 0.0)) throw ConfigError("synthetic: sensor_width must be positive");

  // Fixed mixing matrices.
  RandomStream mix = root.derive("mixing");
  Eigen::MatrixXd a(spec.d_tab, 1 + nuisance);
  for (nn::Index i = 0; i < a.size(); ++i) a.data()[i] = mix.normal();
  const int units = std::max(spec.tuning_units, 1);
  Eigen::MatrixXd b(spec.d_img, units);
  for (nn::Index i = 0; i < b.size(); ++i) b.data()[i] = mix.normal() / std::sqrt(static_cast<double>(units));
  Eigen::MatrixXd c(spec.d_img, spec.scene_factors);
  for (nn::Index i = 0; i < c.size(); ++i) c.data()[i] = spec.scene_scale * mix.normal();

  // Latent concentrations, resampled until the class histogram is balanced enough.
  std::vector<float> pm25(spec.n);
  std::vector<std::uint8_t> labels(spec.n);
  const std::size_t min_count = spec.n / 12;
  bool balanced = false;
  for (int attempt = 0; attempt < kMaxResampleAttempts && !balanced; ++attempt) {
    RandomStream rng = root.derive("pm25").derive(static_cast<std::uint64_t>(attempt));
    std::array<std::size_t, kNumAqiClasses> counts{};
    for (std::size_t i = 0; i < spec.n; ++i) {
      if (spec.band_margin > 0.0) {
        const int band = static_cast<int>(rng.uniform() * kNumAqiClasses);
        const double lo = kBandEdges[band], hi = kBandEdges[band + 1];
        const double w = (hi - lo) * (1.0 - 2.0 * spec.band_margin);
        pm25[i] = static_cast<float>(lo + (hi - lo) * spec.band_margin + w * rng.uniform());
      } else {
        pm25[i] = static_cast<float>(kMaxPm25 * rng.uniform());
      }
      labels[i] = static_cast<std::uint8_t>(aqi_to_category(pm25[i]));
      ++counts[labels[i]];
    }
    balanced = std::all_of(counts.begin(), counts.end(), [&](std::size_t k) { return k >= min_count; });
  }
  if (!balanced) throw DataError("synthetic: could not draw a balanced class histogram");

  Dataset d;
  d.name = "synthetic";
  d.tabular.resize(n, spec.d_tab);
  d.image.resize(n, spec.d_img);
  d.pm25 = std::move(pm25);
  d.labels = std::move(labels);

  // Tuning-curve centres cover the range the gain-distorted view can reach.
  const double lo = -0.1, hi = 1.1 * std::exp(2.0 * spec.exposure_kappa);
  const double width = spec.tuning_units > 1 ? (hi - lo) / (spec.tuning_units - 1) : 1.0;
  Eigen::VectorXd code(units);

  RandomStream sensor = root.derive("sensor");
  RandomStream camera = root.derive("camera");
  Eigen::VectorXd latent(1 + nuisance);
  Eigen::VectorXd scene(spec.scene_factors);
  for (nn::Index i = 0; i < n; ++i) {
    const double pm = d.pm25[static_cast<std::size_t>(i)];
    const double s = pm / kMaxPm25;
    const double sensed = s + spec.tab_noise * sensor.normal();
    for (int j = 0; j < nuisance; ++j) latent(1 + j) = spec.nuisance_scale * sensor.normal();
    Eigen::VectorXd tab(spec.d_tab);
    if (spec.staggered_sensors) {
      // Staggered saturating channels followed by the environmental channels.
      for (int j = 0; j < conc; ++j) tab(j) = std::tanh((sensed - (j + 0.5) / conc) / spec.sensor_width);
      for (int j = 0; j < nuisance; ++j) tab(conc + j) = latent(1 + j);
    } else {
      latent(0) = sensed;
      tab = a * latent;
    }
    for (int j = 0; j < spec.d_tab; ++j) tab(j) += spec.noise * sensor.normal();
    d.tabular.row(i) = tab.transpose().cast<float>();

    const double exposure = nuisance > 0 ? std::exp(spec.exposure_kappa * latent(1) / spec.nuisance_scale) : 1.0;
    const double seen = exposure * (s + spec.img_noise * camera.normal());
    if (spec.tuning_units > 0) {
      for (int j = 0; j < units; ++j) {
        const double z = (seen - (lo + j * width)) / width;
        code(j) = std::exp(-0.5 * z * z);
      }
    } else {
      code(0) = seen;
    }
    for (int j = 0; j < spec.scene_factors; ++j) scene(j) = camera.normal();
    Eigen::VectorXd img = b * code + c * scene;
    for (int j = 0; j < spec.d_img; ++j) img(j) += spec.noise * camera.normal();
    d.image.row(i) = img.transpose().cast<float>();
  }
  return d;
}

}  // namespace m2fedaqi
