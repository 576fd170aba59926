#pragma once

#include <cstdint>

#include "m2fedaqi/data.hpp"

namespace m2fedaqi {

/// Synthetic stand-in for paired (image feature, sensor reading, PM2.5) data.
///
/// A latent concentration s = pm25 / 500 is observed twice with independent
/// errors. The sensor block reads s' = s + tab_noise*e through staggered
/// saturating channels tanh((s' - c_j) / sensor_width), followed by
/// tab_nuisance environmental factors u drawn N(0, nuisance_scale^2). With
/// staggered_sensors off the block is a random linear mix A [s'; u].
/// The camera sees s through a bank of R smooth tuning curves (a stand-in
/// for the haze-sensitive units of a pretrained backbone), distorted by an
/// exposure gain g = exp(kappa * u_0) driven by the first sensor factor:
///   img = B psi(g * (s + img_noise*e')) + C v + noise*eps'
/// psi_j(x) = exp(-(x - c_j)^2 / (2 w^2)) with centres c_j evenly spread over
/// the observable range. v are scene factors. R = 0 replaces psi by the
/// identity (a single linear direction). A, B, C are fixed random matrices.
/// Each modality alone is ambiguous near band edges (the camera through the
/// unknown gain, the sensor through its coarse channels), so the pair
/// carries more information than either branch.
struct SyntheticSpec {
  std::size_t n = 3000;
  int d_tab = 10;
  int d_img = 1280;
  double noise = 0.02;       // additive feature noise on both blocks
  double tab_noise = 0.02;   // sensor error on s
  double img_noise = 0.02;   // camera error on s
  double exposure_kappa = 0.3;
  int tab_nuisance = 2;      // sensor nuisance factors; -1 means d_tab / 2
  double nuisance_scale = 1.0;
  int tuning_units = 16;     // R
  bool staggered_sensors = true;
  double sensor_width = 0.08;
  int scene_factors = 8;
  double scene_scale = 0.1;
  // 0 draws pm25 uniformly over [0, 500]. A positive margin m picks a band
  // uniformly and draws inside it, leaving out a fraction m at both edges.
  double band_margin = 0.25;
  std::uint64_t seed = 1;
};

/// Same SyntheticSpec, same dataset. Resamples the latent concentrations until every
/// class holds at least n/12 samples.
Dataset generate_synthetic(const SyntheticSpec& spec);

}  // namespace m2fedaqi
