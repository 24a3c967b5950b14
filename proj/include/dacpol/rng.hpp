#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <string_view>
#include <utility>
#include <vector>

namespace dacpol {

inline constexpr std::string_view kRngName = "xoshiro256** seeded by splitmix64";

std::uint64_t splitmix64(std::uint64_t& state);

// Derives an independent stream seed; used for replication fan-out.
std::uint64_t mix_seed(std::uint64_t master, std::uint64_t stream);

// xoshiro256** with hand-written distributions so that sampled datasets do
// not depend on the standard library's distribution implementations.
class Rng {
 public:
  using result_type = std::uint64_t;

  explicit Rng(std::uint64_t seed);

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }
  result_type operator()() { return next(); }

  std::uint64_t next();
  // [0, 1) with 53 random bits.
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  // Standard normal via the polar method.
  double normal();
  double normal(double mean, double stddev) { return mean + stddev * normal(); }
  // Uniform integer in [0, n); n must be positive.
  std::uint64_t below(std::uint64_t n);

  // m distinct indices out of [0, n), in draw order.
  std::vector<std::size_t> sample_without_replacement(std::size_t n, std::size_t m);

  template <class T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      const std::size_t j = static_cast<std::size_t>(below(i));
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  std::array<std::uint64_t, 4> s_{};
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace dacpol
