#pragma once
#include "cirrl/dataset.hpp"
#include "cirrl/linalg.hpp"
#include "cirrl/rng.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <functional>
#include <vector>

namespace cirrl::testing {

inline DenseMatrix random_matrix(Eigen::Index r, Eigen::Index c, std::uint64_t seed) {
  Rng rng(seed);
  return rng.normal_matrix(r, c);
}

inline bool same_bytes(const DenseMatrix& a, const DenseMatrix& b) {
  return a.rows() == b.rows() && a.cols() == b.cols() &&
         std::memcmp(a.data(), b.data(), sizeof(double) * static_cast<std::size_t>(a.size())) == 0;
}

inline bool same_bytes(const Vector& a, const Vector& b) {
  return a.size() == b.size() &&
         std::memcmp(a.data(), b.data(), sizeof(double) * static_cast<std::size_t>(a.size())) == 0;
}

/// |a - b| / max(|a|, |b|, floor)
inline double rel_error(double a, double b, double floor = 1e-6) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

/// Central difference of f with respect to *p.
inline double central_difference(const std::function<double()>& f, double* p, double h = 1e-5) {
  const double saved = *p;
  *p = saved + h;
  const double up = f();
  *p = saved - h;
  const double down = f();
  *p = saved;
  return (up - down) / (2.0 * h);
}

/// Rows of every environment stacked in dataset order.
inline DenseMatrix stacked_x(const MultiEnvDataset& d) {
  std::vector<DenseMatrix> blocks;
  for (const auto& e : d.envs) blocks.push_back(e.x);
  return vstack(blocks);
}

inline DenseMatrix stacked_z(const MultiEnvDataset& d) {
  std::vector<DenseMatrix> blocks;
  for (const auto& e : d.envs) blocks.push_back(e.z_true);
  return vstack(blocks);
}

inline double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace cirrl::testing
