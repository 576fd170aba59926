#include "m2fedaqi/partition.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <random>
#include <string>

#include "m2fedaqi/error.hpp"

namespace m2fedaqi {

void PartitionConfig::validate() const {
  if (num_clients < 1) throw ConfigError("partition: number of clients must be at least 1");
  if (!(alpha > 0.0) || !std::isfinite(alpha)) throw ConfigError("partition: alpha must be a positive number");
  if (min_per_client < 1) throw ConfigError("partition: min_per_client must be at least 1");
  if (max_attempts < 1) throw ConfigError("partition: max_attempts must be at least 1");
}

std::vector<double> sample_dirichlet(double alpha, int k, RandomStream& rng) {
  std::gamma_distribution<double> gamma(alpha, 1.0);
  std::vector<double> p(static_cast<std::size_t>(k));
  double total = 0.0;
  for (auto& v : p) {
    v = gamma(rng);
    total += v;
  }
  if (total <= 0.0) {
    // Every gamma draw underflowed (tiny alpha): all mass on one client.
    std::fill(p.begin(), p.end(), 0.0);
    p[static_cast<std::size_t>(rng() % static_cast<std::uint64_t>(k))] = 1.0;
    return p;
  }
  for (auto& v : p) v /= total;
  return p;
}

namespace {

std::vector<std::size_t> largest_remainder(const std::vector<double>& proportions, std::size_t n) {
  const std::size_t k = proportions.size();
  std::vector<std::size_t> counts(k);
  std::vector<std::pair<double, std::size_t>> remainders(k);
  std::size_t assigned = 0;
  for (std::size_t i = 0; i < k; ++i) {
    const double exact = proportions[i] * static_cast<double>(n);
    counts[i] = static_cast<std::size_t>(std::floor(exact));
    assigned += counts[i];
    remainders[i] = {exact - static_cast<double>(counts[i]), i};
  }
  // Larger remainder first, lower client index on ties.
  std::stable_sort(remainders.begin(), remainders.end(),
                   [](const auto& a, const auto& b) { return a.first > b.first; });
  for (std::size_t j = 0; assigned < n; ++j, ++assigned) counts[remainders[j % k].second] += 1;
  return counts;
}

}  // namespace

IndexLists partition_dirichlet(std::span<const int> labels, const PartitionConfig& cfg) {
  cfg.validate();
  const auto k = static_cast<std::size_t>(cfg.num_clients);
  if (labels.size() < k) {
    throw PartitionError("partition: " + std::to_string(labels.size()) + " samples cannot cover " +
                         std::to_string(k) + " clients");
  }
  std::map<int, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < labels.size(); ++i) by_class[labels[i]].push_back(i);

  const RandomStream root = RandomStream(cfg.seed).derive("partition");
  for (int attempt = 0; attempt < cfg.max_attempts; ++attempt) {
    const RandomStream stream = root.derive(static_cast<std::uint64_t>(attempt));
    IndexLists clients(k);
    for (const auto& [cls, members] : by_class) {
      RandomStream rng = stream.derive("class").derive(static_cast<std::uint64_t>(cls));
      std::vector<std::size_t> shuffled = members;
      std::shuffle(shuffled.begin(), shuffled.end(), rng);
      const auto proportions = sample_dirichlet(cfg.alpha, cfg.num_clients, rng);
      const auto counts = largest_remainder(proportions, shuffled.size());
      std::size_t cursor = 0;
      for (std::size_t c = 0; c < k; ++c) {
        clients[c].insert(clients[c].end(), shuffled.begin() + static_cast<std::ptrdiff_t>(cursor),
                          shuffled.begin() + static_cast<std::ptrdiff_t>(cursor + counts[c]));
        cursor += counts[c];
      }
    }
    const bool ok = std::all_of(clients.begin(), clients.end(), [&](const auto& list) {
      return list.size() >= static_cast<std::size_t>(cfg.min_per_client);
    });
    if (ok) {
      for (auto& list : clients) std::sort(list.begin(), list.end());
      return clients;
    }
  }
  throw PartitionError("partition: no draw gave every client at least " + std::to_string(cfg.min_per_client) +
                       " samples after " + std::to_string(cfg.max_attempts) +
                       " attempts; use a larger alpha or fewer clients");
}

Holdout split_holdout(std::size_t n, double fraction, const RandomStream& rng) {
  if (!(fraction >= 0.0 && fraction < 1.0)) throw ConfigError("holdout fraction must lie in [0, 1)");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  RandomStream r = rng;
  std::shuffle(order.begin(), order.end(), r);
  const auto held = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(n)));
  Holdout h;
  h.held_out.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(held));
  h.kept.assign(order.begin() + static_cast<std::ptrdiff_t>(held), order.end());
  std::sort(h.held_out.begin(), h.held_out.end());
  std::sort(h.kept.begin(), h.kept.end());
  return h;
}

}  // namespace m2fedaqi
