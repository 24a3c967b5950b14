#pragma once

#include <cstdint>
#include <vector>

#include "dacpol/dataset.hpp"
#include "dacpol/rng.hpp"

namespace dacpol::testing {

// Random bandit data with Gaussian features, uniform logging and outcomes
// in [0, 1].
inline BanditDataset random_bandit(std::size_t n, int s, int k, std::uint64_t seed, bool binary = false) {
  Rng rng(seed);
  BanditDataset ds;
  ds.features.resize(static_cast<Eigen::Index>(n), s);
  for (Eigen::Index i = 0; i < ds.features.size(); ++i) ds.features.data()[i] = rng.normal();
  ds.potential_outcomes.resize(static_cast<Eigen::Index>(n), k);
  for (Eigen::Index i = 0; i < ds.potential_outcomes.size(); ++i)
    ds.potential_outcomes.data()[i] = binary ? static_cast<double>(rng.below(2)) : rng.uniform();
  for (std::size_t i = 0; i < n; ++i) {
    const int a = static_cast<int>(rng.below(static_cast<std::uint64_t>(k)));
    ds.actions.push_back(a);
    ds.outcomes.push_back(ds.potential_outcomes(static_cast<Eigen::Index>(i), a));
  }
  return ds;
}

inline Matrix random_matrix(Eigen::Index rows, Eigen::Index cols, Rng& rng, double scale = 1.0) {
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = scale * rng.normal();
  return m;
}

}  // namespace dacpol::testing
