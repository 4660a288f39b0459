#pragma once

#include <Eigen/Dense>

#include <string>
#include <vector>

namespace cirrl {

/// Row-major dense matrix of doubles; every weight, activation and data block uses it.
using DenseMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;

/// Throws NumericError when any entry is NaN or infinite.
void require_finite(const DenseMatrix& m, const std::string& what);

/// Eigenvalues of the symmetric part of `m`, ascending.
Vector symmetric_eigenvalues(const DenseMatrix& m);

/// Symmetric square root of a PSD matrix; tiny negative eigenvalues are clamped to zero.
DenseMatrix psd_sqrt(const DenseMatrix& m);

/// Solves `a x = b` via SVD-checked LU; throws RankDeficiencyError when
/// sigma_min < rel_tol * sigma_max.
Vector checked_solve(const DenseMatrix& a, const Vector& b, double rel_tol, const std::string& what);

/// Largest / smallest singular value ratio.
double condition_number(const DenseMatrix& m);

DenseMatrix symmetrize(const DenseMatrix& m);

/// Column means of `x`.
Vector column_means(const DenseMatrix& x);

/// Stacks equally wide blocks vertically.
DenseMatrix vstack(const std::vector<DenseMatrix>& blocks);

}  // namespace cirrl
