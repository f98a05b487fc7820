#pragma once

#include "stfield/covariance.hpp"
#include "stfield/linalg.hpp"

#include <algorithm>
#include <limits>
#include <numeric>

namespace stfield {

/// Time series of field estimates at the targets. Columns outside
/// [first_valid, end_valid) hold NaN: the window was not fully available.
struct Reconstruction {
  Matrix mean;      // P x T
  Vector variance;  // P, empty when the method has no posterior
  Index first_valid = 0;
  Index end_valid = 0;

  bool valid(Index n) const { return n >= first_valid && n < end_valid; }
};

/// Precomputed LMMSE reconstruction filter for a fixed geometry and noise level.
struct PosteriorModel {
  SpdFactor factor;             // of K_SS + sigma2 I over the support
  Matrix filter;                // P x |support|
  Vector variance;              // diagonal of the posterior covariance
  std::vector<Index> support;   // flat observation indices in use
  double sigma2 = 0.0;
};

inline std::vector<Index> all_indices(Index n) {
  std::vector<Index> idx(static_cast<std::size_t>(n));
  std::iota(idx.begin(), idx.end(), Index{0});
  return idx;
}

/// Posterior restricted to the observations `support` (exact for binary masks).
inline PosteriorModel fit_subset(const CovarianceSet& cov, double sigma2, std::vector<Index> support) {
  require(sigma2 > 0.0, "noise variance must be positive");
  PosteriorModel model;
  model.sigma2 = sigma2;
  model.support = std::move(support);
  Matrix kss = principal_submatrix(cov.Kyy, model.support);
  kss.diagonal().array() += sigma2;
  model.factor = factorize_spd(kss);
  const Matrix kyu = cov.Kuy(Eigen::all, model.support).transpose();
  model.filter = model.factor.solve(kyu).transpose();
  const Matrix half = model.factor.half_solve(kyu);
  model.variance = cov.Kuu.diagonal() - half.colwise().squaredNorm().transpose();
  return model;
}

inline PosteriorModel fit(const CovarianceSet& cov, double sigma2) {
  return fit_subset(cov, sigma2, all_indices(cov.Kyy.rows()));
}

/// u_hat = filter * y. `y` is either the full stacked window (flat index order)
/// or already restricted to the model support.
inline Vector posterior_mean(const PosteriorModel& model, const Vector& y) {
  const auto n = static_cast<Index>(model.support.size());
  if (y.size() == n) return model.filter * y;
  require(y.size() > *std::max_element(model.support.begin(), model.support.end()),
          "observation vector does not match the model");
  return model.filter * y(model.support);
}

inline Matrix symmetrized(const Matrix& m) { return 0.5 * (m + m.transpose()); }

/// Kuu - Kuy (Kyy + sigma2 I)^{-1} Kyu over the model's support.
inline Matrix posterior_cov(const CovarianceSet& cov, const PosteriorModel& model) {
  const Matrix kyu = cov.Kuy(Eigen::all, model.support).transpose();
  const Matrix half = model.factor.half_solve(kyu);
  return symmetrized(cov.Kuu - half.transpose() * half);
}

/// Kuu - Kuy Z (Z Kyy Z + sigma2 I)^{-1} Z Kyu for a relaxed mask z in [0, 1].
inline Matrix masked_posterior_cov(const CovarianceSet& cov, const Vector& z, double sigma2) {
  require(sigma2 > 0.0, "noise variance must be positive");
  require(z.size() == cov.Kyy.rows(), "mask length does not match the observation count");
  require((z.array() >= 0.0).all() && (z.array() <= 1.0).all(), "mask weights must lie in [0, 1]");
  Matrix m = z.asDiagonal() * cov.Kyy * z.asDiagonal();
  m.diagonal().array() += sigma2;
  const SpdFactor f = factorize_spd(m);
  const Matrix zkyu = z.asDiagonal() * cov.Kuy.transpose();
  const Matrix half = f.half_solve(zkyu);
  return symmetrized(cov.Kuu - half.transpose() * half);
}

/// Stacks the causal window ending at sample n into y[w*M + m] = x_m[n - w].
inline Vector stack_window(const Matrix& signals, Index n, Index window) {
  const Index mics = signals.rows();
  require(n >= window - 1 && n < signals.cols(), "window exceeds the record");
  Vector y(mics * window);
  for (Index w = 0; w < window; ++w) y.segment(w * mics, mics) = signals.col(n - w);
  return y;
}

/// Applies the precomputed filter to every full causal window of an M x T record.
inline Reconstruction reconstruct_stream(const PosteriorModel& model, const Matrix& signals, const Geometry& geo) {
  require(signals.rows() == geo.num_mics(), "signal rows must equal the microphone count");
  const Index total = signals.cols();
  const Index win = geo.window;
  require(total >= win, "record shorter than the window");
  require(model.support.empty() ||
              *std::max_element(model.support.begin(), model.support.end()) < geo.num_observations(),
          "model support exceeds the geometry");

  const Index targets = model.filter.rows();
  Reconstruction rec;
  rec.mean = Matrix::Constant(targets, total, std::numeric_limits<double>::quiet_NaN());
  rec.variance = model.variance;
  rec.first_valid = win - 1;
  rec.end_valid = total;

  // Gather matrix: column j of `obs` is the observation feeding filter column j.
  const auto k = static_cast<Index>(model.support.size());
  std::vector<Index> mic(static_cast<std::size_t>(k));
  std::vector<Index> lag(static_cast<std::size_t>(k));
  for (Index j = 0; j < k; ++j) {
    mic[static_cast<std::size_t>(j)] = geo.mic_of(model.support[static_cast<std::size_t>(j)]);
    lag[static_cast<std::size_t>(j)] = geo.lag_of(model.support[static_cast<std::size_t>(j)]);
  }
  Matrix obs(k, total - win + 1);
  for (Index n = win - 1; n < total; ++n) {
    for (Index j = 0; j < k; ++j) {
      obs(j, n - win + 1) = signals(mic[static_cast<std::size_t>(j)], n - lag[static_cast<std::size_t>(j)]);
    }
  }
  rec.mean.rightCols(total - win + 1) = model.filter * obs;
  return rec;
}

}  // namespace stfield
