#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "m2fedaqi/rng.hpp"

namespace m2fedaqi {

struct PartitionConfig {
  int num_clients = 6;
  double alpha = 0.5;  // Dirichlet concentration; smaller is more skewed
  std::uint64_t seed = 0;
  int min_per_client = 1;
  int max_attempts = 100;

  void validate() const;  // throws ConfigError
};

using IndexLists = std::vector<std::vector<std::size_t>>;

/// Label-skewed split: for each class c, client proportions are drawn from
/// Dirichlet(alpha * 1_K) and the class's shuffled indices are dealt out by
/// largest-remainder rounding. Redraws (seed, attempt) until every client
/// holds at least min_per_client samples; throws PartitionError otherwise.
IndexLists partition_dirichlet(std::span<const int> labels, const PartitionConfig& cfg);

/// One Dirichlet(alpha * 1_k) draw.
std::vector<double> sample_dirichlet(double alpha, int k, RandomStream& rng);

/// Seeded holdout: returns {kept, held_out} with round(n * fraction) held out.
struct Holdout {
  std::vector<std::size_t> kept;
  std::vector<std::size_t> held_out;
};
Holdout split_holdout(std::size_t n, double fraction, const RandomStream& rng);

}  // namespace m2fedaqi
