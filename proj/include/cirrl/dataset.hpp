#pragma once

#include "cirrl/linalg.hpp"

#include <vector>

namespace cirrl {

/// One environment's samples. `z_true` is empty when the latents are unknown
/// (real data); the intervention moments are empty unless the data came from
/// the generator.
struct EnvData {
  int label = 0;
  DenseMatrix x;
  Vector y;
  DenseMatrix z_true;
  Vector delta_mean;
  DenseMatrix delta_cov;
  /// Node-equation input (eps + delta) per row, kept for audits of generated data.
  DenseMatrix node_noise;

  Eigen::Index size() const { return x.rows(); }
  bool has_latents() const { return z_true.size() > 0; }
};

/// Multi-environment data; label 0 is the observational reference.
struct MultiEnvDataset {
  std::vector<EnvData> envs;

  int dim() const { return envs.empty() ? 0 : static_cast<int>(envs.front().x.cols()); }
  Eigen::Index total_size() const;
  bool has_env(int label) const;
  const EnvData& env(int label) const;
  std::vector<int> labels() const;
  /// Index of the environment with this label in `envs`; throws DataError if absent.
  std::size_t position(int label) const;
  bool has_latents() const;

  /// Shared width, unique labels, reference environment present. Throws DataError / ContractError.
  void validate() const;
};

}  // namespace cirrl
