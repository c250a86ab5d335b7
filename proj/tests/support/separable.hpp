#pragma once

#include <random>

#include "ecoenc/derived/derived.hpp"

namespace ecoenc::testing {

/// Derived dataset whose β = 0 targets are a linear function of pooled_f1:
/// target = argmax(V·z) with a margin, q peaks at the target exit.
inline derived::DerivedDataset separable_dataset(std::size_t n, std::size_t d,
                                                 std::vector<int> exits, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n01;
  std::uniform_real_distribution<double> high(70.0, 80.0), low(20.0, 50.0);
  const std::size_t E = exits.size();
  std::vector<double> V(E * d);
  for (auto& v : V) v = n01(rng);
  derived::DerivedDataset ds;
  ds.exit_set = exits;
  ds.ckpt_hash = "separable";
  while (ds.records.size() < n) {
    std::vector<double> z(d);
    for (auto& v : z) v = n01(rng);
    std::vector<double> score(E, 0.0);
    for (std::size_t k = 0; k < E; ++k)
      for (std::size_t j = 0; j < d; ++j) score[k] += V[k * d + j] * z[j];
    std::size_t best = 0;
    for (std::size_t k = 1; k < E; ++k)
      if (score[k] > score[best]) best = k;
    double second = -1e300;
    for (std::size_t k = 0; k < E; ++k)
      if (k != best) second = std::max(second, score[k]);
    if (score[best] - second < 0.5) continue;
    derived::DerivedRecord r;
    r.id = ds.records.size();
    r.pooled_f1 = z;
    for (std::size_t k = 0; k < E; ++k) r.q.push_back(k == best ? high(rng) : low(rng));
    ds.records.push_back(std::move(r));
  }
  return ds;
}

}  // namespace ecoenc::testing
