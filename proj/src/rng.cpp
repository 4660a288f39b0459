#include "cirrl/rng.hpp"

namespace cirrl {

double Rng::chi_squared(double dof) {
  std::chi_squared_distribution<double> dist(dof);
  return dist(engine_);
}

std::size_t Rng::index(std::size_t n) {
  std::uniform_int_distribution<std::size_t> dist(0, n - 1);
  return dist(engine_);
}

DenseMatrix Rng::normal_matrix(Eigen::Index rows, Eigen::Index cols) {
  DenseMatrix m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = normal();
  return m;
}

Vector Rng::normal_vector(Eigen::Index n) {
  Vector v(n);
  for (Eigen::Index i = 0; i < n; ++i) v(i) = normal();
  return v;
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t tag) {
  std::uint64_t z = seed ^ (tag * 0x9E3779B97F4A7C15ULL + 0x632BE59BD9B4E019ULL);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

}  // namespace cirrl
