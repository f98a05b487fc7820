#pragma once

#include "stfield/dft.hpp"

#include <cmath>
#include <functional>
#include <numbers>

namespace stfield {

/// Lag-domain covariance C[l] = E[u[n] u'[n-l]] of a stationary pair.
using LagCovariance = std::function<double(Index)>;

/// E[U_k U'_l^*] for rectangular length-W DFTs of the two processes.
inline std::complex<double> windowed_cross_cov(const LagCovariance& lag_cov, Index window, Index k, Index l) {
  require(k >= 0 && k < window && l >= 0 && l < window, "bin index out of range");
  const double step = 2.0 * std::numbers::pi / static_cast<double>(window);
  std::complex<double> acc = 0.0;
  for (Index r = 0; r < window; ++r) {
    for (Index s = 0; s < window; ++s) {
      const double phase = -step * static_cast<double>(k * r) + step * static_cast<double>(l * s);
      acc += lag_cov(r - s) * std::polar(1.0, phase);
    }
  }
  return acc;
}

/// Full W x W cross-frequency covariance F T F^H, T the Toeplitz lag matrix.
inline CMatrix windowed_cross_cov_matrix(const LagCovariance& lag_cov, Index window) {
  require(window >= 1, "window must be positive");
  const auto w = static_cast<std::size_t>(window);
  std::vector<double> lags(2 * w - 1);
  for (Index l = -(window - 1); l <= window - 1; ++l) lags[static_cast<std::size_t>(l + window - 1)] = lag_cov(l);

  // Columns: A[:, s] = DFT_r of T[r, s].
  CMatrix a(window, window);
  std::vector<dft::Complex> col(w);
  for (Index s = 0; s < window; ++s) {
    for (Index r = 0; r < window; ++r) col[static_cast<std::size_t>(r)] = lags[static_cast<std::size_t>(r - s + window - 1)];
    const auto f = dft::forward(col);
    for (Index k = 0; k < window; ++k) a(k, s) = f[static_cast<std::size_t>(k)];
  }
  // Rows: B[k, l] = sum_s A[k, s] exp(+j theta_l s) = conj(DFT_s conj(A[k, s]))[l].
  CMatrix out(window, window);
  std::vector<dft::Complex> row(w);
  for (Index k = 0; k < window; ++k) {
    for (Index s = 0; s < window; ++s) row[static_cast<std::size_t>(s)] = std::conj(a(k, s));
    const auto f = dft::forward(row);
    for (Index l = 0; l < window; ++l) out(k, l) = std::conj(f[static_cast<std::size_t>(l)]);
  }
  return out;
}

/// Share of squared magnitude off the diagonal. Invariant to max-normalization.
inline double off_diagonal_energy_fraction(const CMatrix& m) {
  const double total = m.cwiseAbs2().sum();
  require(total > 0.0, "matrix has no energy");
  const double diag = m.diagonal().cwiseAbs2().sum();
  return (total - diag) / total;
}

/// Matrix scaled so that its largest magnitude is one.
inline CMatrix max_normalized(const CMatrix& m) {
  const double peak = m.cwiseAbs().maxCoeff();
  require(peak > 0.0, "matrix has no energy");
  return m / peak;
}

}  // namespace stfield
