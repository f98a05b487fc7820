#pragma once

#include "stfield/estimator.hpp"

#include <cmath>
#include <vector>

namespace stfield {

/// Reported instead of -inf for an exact reconstruction.
inline constexpr double kNmseFloorDb = -300.0;

/// 10 log10(|est - ref|_F^2 / |ref|_F^2) over columns [lo, hi).
inline double nmse_db_range(const Matrix& est, const Matrix& ref, Index lo, Index hi) {
  require(est.rows() == ref.rows() && est.cols() == ref.cols(), "estimate and reference shapes differ");
  require(0 <= lo && lo < hi && hi <= ref.cols(), "empty scoring range");
  const auto e = est.middleCols(lo, hi - lo);
  const auto r = ref.middleCols(lo, hi - lo);
  require(e.allFinite(), "estimate is not finite inside the scoring range");
  const double energy = r.squaredNorm();
  if (!(energy > 0.0)) throw ModelError("reference has zero energy");
  const double ratio = (e - r).squaredNorm() / energy;
  if (ratio <= 0.0) return kNmseFloorDb;
  return std::max(kNmseFloorDb, 10.0 * std::log10(ratio));
}

/// NMSE over [trim, N - trim).
inline double nmse_db(const Matrix& est, const Matrix& ref, Index trim = 200) {
  require(ref.cols() > 2 * trim, "record must be longer than twice the trim");
  return nmse_db_range(est, ref, trim, ref.cols() - trim);
}

/// NMSE with the trimmed range also clipped to the estimator's valid outputs.
inline double nmse_db(const Reconstruction& rec, const Matrix& ref, Index trim = 200) {
  require(ref.cols() > 2 * trim, "record must be longer than twice the trim");
  return nmse_db_range(rec.mean, ref, std::max(trim, rec.first_valid), std::min(ref.cols() - trim, rec.end_valid));
}

/// Mean squared error per row (target) over the columns.
inline Vector empirical_error_variance(const Matrix& errors) {
  require(errors.cols() >= 2, "need at least two time indices");
  return errors.rowwise().squaredNorm() / static_cast<double>(errors.cols());
}

struct Interval {
  double mean = 0.0;
  double lo = 0.0;
  double hi = 0.0;
};

inline constexpr double kNormalQuantile975 = 1.959963984540054;

/// Normal-approximation 95% interval: mean +- z * s / sqrt(n).
inline Interval confidence_interval(const std::vector<double>& samples) {
  require(samples.size() >= 2, "need at least two samples");
  const auto n = static_cast<double>(samples.size());
  double mean = 0.0;
  for (double s : samples) mean += s;
  mean /= n;
  double ss = 0.0;
  for (double s : samples) ss += (s - mean) * (s - mean);
  const double half = kNormalQuantile975 * std::sqrt(ss / (n - 1.0)) / std::sqrt(n);
  return {mean, mean - half, mean + half};
}

}  // namespace stfield
