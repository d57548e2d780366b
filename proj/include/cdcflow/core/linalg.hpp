#pragma once

#include "cdcflow/core/error.hpp"
#include "cdcflow/core/types.hpp"

#include <algorithm>
#include <cmath>

namespace cdcflow::linalg {

struct SymmetricEigen {
  Vector values;   // descending
  Matrix vectors;  // columns match values
};

/// Eigendecomposition of the symmetric part of `m`, eigenvalues sorted
/// descending. Eigenvector signs are fixed so the largest-magnitude entry of
/// each column is positive.
inline SymmetricEigen symmetric_eigen(const Matrix& m) {
  const Matrix sym = 0.5 * (m + m.transpose());
  Eigen::SelfAdjointEigenSolver<Matrix> solver(sym);
  if (solver.info() != Eigen::Success) throw NumericalError("symmetric eigendecomposition failed");
  const Index n = sym.rows();
  SymmetricEigen out{Vector(n), Matrix(n, n)};
  for (Index j = 0; j < n; ++j) {
    out.values(j) = solver.eigenvalues()(n - 1 - j);
    out.vectors.col(j) = solver.eigenvectors().col(n - 1 - j);
  }
  for (Index j = 0; j < n; ++j) {
    Index arg = 0;
    out.vectors.col(j).cwiseAbs().maxCoeff(&arg);
    if (out.vectors(arg, j) < 0) out.vectors.col(j) *= -1.0;
  }
  return out;
}

inline constexpr double kNegativeEigenTolerance = 1e-10;

/// Principal square root of a symmetric PSD matrix. Eigenvalues in
/// [-1e-10, 0) are clamped to zero; anything more negative is an error.
inline Matrix psd_sqrt(const Matrix& m) {
  auto eig = symmetric_eigen(m);
  for (Index j = 0; j < eig.values.size(); ++j) {
    if (eig.values(j) < -kNegativeEigenTolerance) throw ConfigError("matrix is not positive semidefinite");
    eig.values(j) = std::sqrt(std::max(eig.values(j), 0.0));
  }
  return eig.vectors * eig.values.asDiagonal() * eig.vectors.transpose();
}

/// Inverse principal square root of a symmetric positive definite matrix.
inline Matrix spd_inv_sqrt(const Matrix& m) {
  auto eig = symmetric_eigen(m);
  for (Index j = 0; j < eig.values.size(); ++j) {
    if (!(eig.values(j) > 0)) throw NumericalError("matrix is not positive definite");
    eig.values(j) = 1.0 / std::sqrt(eig.values(j));
  }
  return eig.vectors * eig.values.asDiagonal() * eig.vectors.transpose();
}

inline Matrix symmetrize(const Matrix& m) { return 0.5 * (m + m.transpose()); }

}  // namespace cdcflow::linalg
