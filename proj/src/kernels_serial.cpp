#include "cirrl/errors.hpp"
#include "cirrl/kernels.hpp"

#include <cmath>

namespace cirrl::kernels::serial {

using Index = Eigen::Index;

void gemm_nn(const DenseMatrix& a, const DenseMatrix& b, DenseMatrix& c, bool accumulate) {
  if (a.cols() != b.rows()) throw ShapeError("serial::gemm_nn: inner dimensions differ");
  if (!accumulate) c.setZero(a.rows(), b.cols());
  for (Index i = 0; i < a.rows(); ++i) {
    for (Index j = 0; j < b.cols(); ++j) {
      double s = c(i, j);
      for (Index k = 0; k < a.cols(); ++k) s += a(i, k) * b(k, j);
      c(i, j) = s;
    }
  }
}

void gemm_tn(const DenseMatrix& a, const DenseMatrix& b, DenseMatrix& c, bool accumulate) {
  if (a.rows() != b.rows()) throw ShapeError("serial::gemm_tn: inner dimensions differ");
  if (!accumulate) c.setZero(a.cols(), b.cols());
  for (Index i = 0; i < a.cols(); ++i) {
    for (Index j = 0; j < b.cols(); ++j) {
      double s = c(i, j);
      for (Index k = 0; k < a.rows(); ++k) s += a(k, i) * b(k, j);
      c(i, j) = s;
    }
  }
}

void gemm_nt(const DenseMatrix& a, const DenseMatrix& b, DenseMatrix& c) {
  if (a.cols() != b.cols()) throw ShapeError("serial::gemm_nt: inner dimensions differ");
  c.setZero(a.rows(), b.rows());
  for (Index i = 0; i < a.rows(); ++i) {
    for (Index k = 0; k < a.cols(); ++k) {
      const double aik = a(i, k);
      for (Index j = 0; j < b.rows(); ++j) c(i, j) += aik * b(j, k);
    }
  }
}

EnergyScore energy_score(const DenseMatrix& targets, const DenseMatrix& samples, int draws) {
  if (draws < 2) throw InvalidConfigError("serial::energy_score: need at least 2 draws per item");
  const Index n = targets.rows(), p = targets.cols();
  if (samples.cols() != p || samples.rows() != n * draws) {
    throw ShapeError("serial::energy_score: bad sample shape");
  }
  EnergyScore out;
  out.per_item.setZero(n);
  out.grad_targets.setZero(n, p);
  out.grad_samples.setZero(samples.rows(), p);
  const double m = draws;
  for (Index i = 0; i < n; ++i) {
    double fit = 0.0, spread = 0.0;
    for (int j = 0; j < draws; ++j) {
      const Eigen::RowVectorXd diff = samples.row(j * n + i) - targets.row(i);
      const double dist = diff.norm();
      fit += dist;
      if (dist > 0.0) {
        out.grad_samples.row(j * n + i) += diff / (dist * m * n);
        out.grad_targets.row(i) -= diff / (dist * m * n);
      }
      for (int jj = j + 1; jj < draws; ++jj) {
        const Eigen::RowVectorXd pair = samples.row(j * n + i) - samples.row(jj * n + i);
        const double pd = pair.norm();
        spread += pd;
        if (pd > 0.0) {
          out.grad_samples.row(j * n + i) -= pair / (pd * m * (m - 1) * n);
          out.grad_samples.row(jj * n + i) += pair / (pd * m * (m - 1) * n);
        }
      }
    }
    out.per_item[i] = fit / m - spread / (m * (m - 1));
  }
  out.value = out.per_item.sum() / static_cast<double>(n);
  return out;
}

}  // namespace cirrl::kernels::serial
