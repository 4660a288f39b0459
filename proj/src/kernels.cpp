#include "cirrl/kernels.hpp"

#include "cirrl/errors.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace cirrl::kernels {

namespace {

using Index = Eigen::Index;

void check_gemm(Index a_inner, Index b_inner, const char* what) {
  if (a_inner != b_inner) {
    throw ShapeError(std::string(what) + ": inner dimensions differ (" + std::to_string(a_inner) +
                     " vs " + std::to_string(b_inner) + ")");
  }
}

void prepare_output(DenseMatrix& c, Index rows, Index cols, bool accumulate) {
  if (accumulate) {
    if (c.rows() != rows || c.cols() != cols) throw ShapeError("gemm: accumulator has wrong shape");
  } else {
    c.setZero(rows, cols);
  }
}

// One MR x NR tile of c, held in registers across the whole depth loop.
// Element (i, k) of the left operand lives at pa[i * sai + k * sak]; all MR
// rows and NR columns of the operands must be readable, but only the leading
// rows x cols block of c is loaded and stored.
template <int MR, int NR>
inline void tile(const double* pa, Index sai, Index sak, const double* pb, Index ldb, double* pc, Index ldc,
                 Index depth, bool accumulate, Index rows, Index cols) {
  double acc[MR][NR];
  for (int r = 0; r < MR; ++r)
    for (int j = 0; j < NR; ++j) acc[r][j] = accumulate && r < rows && j < cols ? pc[r * ldc + j] : 0.0;
  for (Index k = 0; k < depth; ++k) {
    const double* brow = pb + k * ldb;
    for (int r = 0; r < MR; ++r) {
      const double av = pa[r * sai + k * sak];
#pragma omp simd
      for (int j = 0; j < NR; ++j) acc[r][j] += av * brow[j];
    }
  }
  for (Index r = 0; r < rows; ++r)
    for (Index j = 0; j < cols; ++j) pc[r * ldc + j] = acc[r][j];
}

constexpr int kMr = 8;
constexpr int kNr = 16;

// c (m x n) = op(a) * b where op(a)(i, k) = pa[i * sai + k * sak] and b is depth x n row-major.
// Ragged edges run through the same tile on zero-padded copies, so every
// element is accumulated in ascending k regardless of where it sits.
void gemm_strided(const double* pa, Index sai, Index sak, const double* pb, double* pc, Index m, Index depth, Index n,
                  bool accumulate) {
  const Index row_blocks = (m + kMr - 1) / kMr;
  const Index col_blocks = (n + kNr - 1) / kNr;
  const Index full_cols = n - n % kNr;
  std::vector<double> bpad;
  if (full_cols < n) {
    bpad.assign(static_cast<std::size_t>(depth * kNr), 0.0);
    for (Index k = 0; k < depth; ++k)
      for (Index j = full_cols; j < n; ++j) bpad[static_cast<std::size_t>(k * kNr + j - full_cols)] = pb[k * n + j];
  }
#pragma omp parallel for schedule(static) if (m * depth * n > 32768)
  for (Index blk = 0; blk < row_blocks; ++blk) {
    const Index i0 = blk * kMr;
    const Index rows = std::min<Index>(kMr, m - i0);
    const double* a0 = pa + i0 * sai;
    Index a_si = sai, a_sk = sak;
    std::vector<double> apad;
    if (rows < kMr) {
      apad.assign(static_cast<std::size_t>(kMr * depth), 0.0);
      for (Index r = 0; r < rows; ++r)
        for (Index k = 0; k < depth; ++k) apad[static_cast<std::size_t>(r * depth + k)] = a0[r * sai + k * sak];
      a0 = apad.data();
      a_si = depth;
      a_sk = 1;
    }
    double* c0 = pc + i0 * n;
    for (Index cb = 0; cb < col_blocks; ++cb) {
      const Index j0 = cb * kNr;
      if (j0 < full_cols) {
        tile<kMr, kNr>(a0, a_si, a_sk, pb + j0, n, c0 + j0, n, depth, accumulate, rows, kNr);
      } else {
        tile<kMr, kNr>(a0, a_si, a_sk, bpad.data(), kNr, c0 + j0, n, depth, accumulate, rows, n - j0);
      }
    }
  }
}

}  // namespace

int max_threads() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

void gemm_nn(const DenseMatrix& a, const DenseMatrix& b, DenseMatrix& c, bool accumulate) {
  check_gemm(a.cols(), b.rows(), "gemm_nn");
  const Index m = a.rows(), depth = a.cols(), n = b.cols();
  prepare_output(c, m, n, accumulate);
  gemm_strided(a.data(), depth, 1, b.data(), c.data(), m, depth, n, accumulate);
}

void gemm_tn(const DenseMatrix& a, const DenseMatrix& b, DenseMatrix& c, bool accumulate) {
  check_gemm(a.rows(), b.rows(), "gemm_tn");
  const Index depth = a.rows(), m = a.cols(), n = b.cols();
  prepare_output(c, m, n, accumulate);
  gemm_strided(a.data(), 1, m, b.data(), c.data(), m, depth, n, accumulate);
}

void gemm_nt(const DenseMatrix& a, const DenseMatrix& b, DenseMatrix& c) {
  check_gemm(a.cols(), b.cols(), "gemm_nt");
  const DenseMatrix bt = b.transpose();
  gemm_nn(a, bt, c, false);
}

EnergyScore energy_score(const DenseMatrix& targets, const DenseMatrix& samples, int draws) {
  if (draws < 2) throw InvalidConfigError("energy_score: need at least 2 draws per item");
  const Index n = targets.rows(), p = targets.cols();
  if (samples.cols() != p || samples.rows() != n * draws) {
    throw ShapeError("energy_score: samples must stack draws blocks of targets' shape");
  }
  if (n == 0) throw ShapeError("energy_score: empty batch");

  EnergyScore out;
  out.per_item.setZero(n);
  out.grad_targets.setZero(n, p);
  out.grad_samples.setZero(samples.rows(), p);
  const double inv_n = 1.0 / static_cast<double>(n);
  const double w_fit = 1.0 / draws;
  const double w_pair = 1.0 / (static_cast<double>(draws) * (draws - 1));

  const double* pt = targets.data();
  const double* ps = samples.data();
  double* gt = out.grad_targets.data();
  double* gs = out.grad_samples.data();

#pragma omp parallel for schedule(static) if (n * draws * p > 8192)
  for (Index i = 0; i < n; ++i) {
    const double* t = pt + i * p;
    double fit = 0.0;
    for (int j = 0; j < draws; ++j) {
      const double* s = ps + (j * n + i) * p;
      double sq = 0.0;
      for (Index c = 0; c < p; ++c) sq += (t[c] - s[c]) * (t[c] - s[c]);
      const double dist = std::sqrt(sq);
      fit += dist;
      if (dist > 0.0) {
        const double g = w_fit * inv_n / dist;
        double* gsj = gs + (j * n + i) * p;
        for (Index c = 0; c < p; ++c) {
          gsj[c] += g * (s[c] - t[c]);
          gt[i * p + c] += g * (t[c] - s[c]);
        }
      }
    }
    double spread = 0.0;
    for (int j = 0; j < draws; ++j) {
      const double* sj = ps + (j * n + i) * p;
      for (int jj = j + 1; jj < draws; ++jj) {
        const double* sk = ps + (jj * n + i) * p;
        double sq = 0.0;
        for (Index c = 0; c < p; ++c) sq += (sj[c] - sk[c]) * (sj[c] - sk[c]);
        const double dist = std::sqrt(sq);
        spread += dist;
        if (dist > 0.0) {
          const double g = w_pair * inv_n / dist;
          double* gj = gs + (j * n + i) * p;
          double* gk = gs + (jj * n + i) * p;
          for (Index c = 0; c < p; ++c) {
            gj[c] -= g * (sj[c] - sk[c]);
            gk[c] -= g * (sk[c] - sj[c]);
          }
        }
      }
    }
    out.per_item[i] = w_fit * fit - w_pair * spread;
  }

  double total = 0.0;
  for (Index i = 0; i < n; ++i) total += out.per_item[i];
  out.value = total * inv_n;
  return out;
}

}  // namespace cirrl::kernels
