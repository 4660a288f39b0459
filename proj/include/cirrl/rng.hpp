#pragma once

#include "cirrl/linalg.hpp"

#include <cstdint>
#include <random>

namespace cirrl {

/// Seeded random source. All randomness in the library flows through this type
/// so a single 64-bit seed reproduces a run bit for bit.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  double normal() { return normal_(engine_); }
  double uniform() { return uniform_(engine_); }
  double chi_squared(double dof);
  std::uint64_t next_u64() { return engine_(); }
  /// Uniform integer in [0, n).
  std::size_t index(std::size_t n);

  DenseMatrix normal_matrix(Eigen::Index rows, Eigen::Index cols);
  Vector normal_vector(Eigen::Index n);

  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_{0.0, 1.0};
  std::uniform_real_distribution<double> uniform_{0.0, 1.0};
};

/// Independent child seed for a named stream (SplitMix64 finaliser over seed ^ tag).
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t tag);

}  // namespace cirrl
