#pragma once

#include "stfield/types.hpp"

#include <Eigen/Cholesky>

namespace stfield {

/// Cholesky factor of a symmetric positive definite matrix, with the diagonal
/// loading that had to be added to obtain it.
struct SpdFactor {
  Eigen::LLT<Matrix> llt;
  double jitter = 0.0;

  Index size() const { return llt.rows(); }
  Matrix solve(const Matrix& rhs) const { return llt.solve(rhs); }
  /// L^{-1} rhs.
  Matrix half_solve(const Matrix& rhs) const { return llt.matrixL().solve(rhs); }
  Matrix reconstructed() const {
    Matrix l = llt.matrixL();
    return l * l.transpose();
  }
};

/// Factorizes `a`. On failure adds 1e-12 * tr(a)/n to the diagonal and
/// escalates by 10x up to 1e-6 * tr(a)/n before giving up.
inline SpdFactor factorize_spd(const Matrix& a) {
  require(a.rows() == a.cols(), "matrix must be square");
  SpdFactor f;
  if (a.rows() == 0) return f;
  f.llt.compute(a);
  if (f.llt.info() == Eigen::Success) return f;

  const double scale = std::abs(a.trace()) / static_cast<double>(a.rows());
  for (double rel = 1e-12; rel <= 1e-6 * (1.0 + 1e-9); rel *= 10.0) {
    f.jitter = rel * scale;
    Matrix loaded = a;
    loaded.diagonal().array() += f.jitter;
    f.llt.compute(loaded);
    if (f.llt.info() == Eigen::Success) return f;
  }
  throw FactorizationError("matrix is not positive definite", f.jitter);
}

/// Extracts rows and columns `idx` of a square matrix.
inline Matrix principal_submatrix(const Matrix& a, const std::vector<Index>& idx) {
  return a(idx, idx);
}

}  // namespace stfield
