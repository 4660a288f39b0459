#pragma once

// Hot loops of the MLP engine and the energy-score losses.
//
// Every kernel exists twice: an OpenMP version in cirrl::kernels and a plain
// loop version in cirrl::kernels::serial that tests and the benchmark compare
// against. Each output element is accumulated in a fixed order independent of
// the thread count, so parallel results do not depend on OMP_NUM_THREADS.

#include "cirrl/linalg.hpp"

namespace cirrl::kernels {

/// c = a * b, or c += a * b when `accumulate`.
void gemm_nn(const DenseMatrix& a, const DenseMatrix& b, DenseMatrix& c, bool accumulate = false);

/// c = a^T * b, or c += a^T * b when `accumulate`.
void gemm_tn(const DenseMatrix& a, const DenseMatrix& b, DenseMatrix& c, bool accumulate = false);

/// c = a * b^T.
void gemm_nt(const DenseMatrix& a, const DenseMatrix& b, DenseMatrix& c);

/// Sample energy score of m draws per item against one target per item.
///
/// `samples` stacks m blocks of n rows; row j*n + i is draw j for item i.
/// value = mean_i [ (1/m) sum_j |t_i - s_ij| - 1/(m(m-1)) sum_{j<j'} |s_ij - s_ij'| ]
/// Gradients are of `value`; a zero-length difference contributes a zero subgradient.
struct EnergyScore {
  double value = 0.0;
  /// Per-item contribution (before averaging); summed in item order for `value`.
  Vector per_item;
  DenseMatrix grad_targets;
  DenseMatrix grad_samples;
};

EnergyScore energy_score(const DenseMatrix& targets, const DenseMatrix& samples, int draws);

/// Number of threads the parallel kernels will use.
int max_threads();

namespace serial {

void gemm_nn(const DenseMatrix& a, const DenseMatrix& b, DenseMatrix& c, bool accumulate = false);
void gemm_tn(const DenseMatrix& a, const DenseMatrix& b, DenseMatrix& c, bool accumulate = false);
void gemm_nt(const DenseMatrix& a, const DenseMatrix& b, DenseMatrix& c);
EnergyScore energy_score(const DenseMatrix& targets, const DenseMatrix& samples, int draws);

}  // namespace serial
}  // namespace cirrl::kernels
