#include "cirrl/linalg.hpp"

#include "cirrl/errors.hpp"

#include <cmath>
#include <sstream>

namespace cirrl {

void require_finite(const DenseMatrix& m, const std::string& what) {
  if (!m.allFinite()) throw NumericError(what + ": non-finite entry");
}

DenseMatrix symmetrize(const DenseMatrix& m) {
  if (m.rows() != m.cols()) throw ShapeError("symmetrize: matrix is not square");
  return 0.5 * (m + m.transpose());
}

Vector symmetric_eigenvalues(const DenseMatrix& m) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(symmetrize(m), Eigen::EigenvaluesOnly);
  return solver.eigenvalues();
}

DenseMatrix psd_sqrt(const DenseMatrix& m) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(symmetrize(m));
  const Vector root = solver.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return solver.eigenvectors() * root.asDiagonal() * solver.eigenvectors().transpose();
}

Vector checked_solve(const DenseMatrix& a, const Vector& b, double rel_tol, const std::string& what) {
  if (a.rows() != a.cols() || a.rows() != b.size()) throw ShapeError(what + ": shape mismatch");
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(a);
  const Vector sv = svd.singularValues();
  const double smax = sv.size() ? sv(0) : 0.0;
  const double smin = sv.size() ? sv(sv.size() - 1) : 0.0;
  if (!(smin >= rel_tol * smax) || smax == 0.0) {
    std::ostringstream msg;
    msg.precision(6);
    msg << what << ": matrix is rank deficient (smallest singular value " << smin << ", largest "
        << smax << ")";
    throw RankDeficiencyError(msg.str(), smin);
  }
  return Eigen::MatrixXd(a).partialPivLu().solve(b);
}

double condition_number(const DenseMatrix& m) {
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(m);
  const Vector sv = svd.singularValues();
  if (sv.size() == 0) return 0.0;
  const double smin = sv(sv.size() - 1);
  return smin > 0.0 ? sv(0) / smin : std::numeric_limits<double>::infinity();
}

Vector column_means(const DenseMatrix& x) {
  if (x.rows() == 0) throw ShapeError("column_means: no rows");
  return x.colwise().mean().transpose();
}

DenseMatrix vstack(const std::vector<DenseMatrix>& blocks) {
  Eigen::Index rows = 0, cols = blocks.empty() ? 0 : blocks.front().cols();
  for (const auto& b : blocks) {
    if (b.cols() != cols) throw ShapeError("vstack: blocks differ in width");
    rows += b.rows();
  }
  DenseMatrix out(rows, cols);
  Eigen::Index at = 0;
  for (const auto& b : blocks) {
    out.middleRows(at, b.rows()) = b;
    at += b.rows();
  }
  return out;
}

}  // namespace cirrl
