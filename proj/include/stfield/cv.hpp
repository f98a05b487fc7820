#pragma once

#include "stfield/baselines.hpp"
#include "stfield/estimator.hpp"

#include <Eigen/Eigenvalues>

#include <array>
#include <cmath>
#include <string>
#include <string_view>

namespace stfield {

enum class Method { SpatioTemporal, Spatial, FdKrrFull, FdKrrCausal, FdKrrNonCausal, FdKrrTrunc };

inline constexpr std::array<std::pair<Method, std::string_view>, 6> kMethodNames{{
    {Method::SpatioTemporal, "spatio_temporal"},
    {Method::Spatial, "spatial"},
    {Method::FdKrrFull, "fd_krr_full"},
    {Method::FdKrrCausal, "fd_krr_causal"},
    {Method::FdKrrNonCausal, "fd_krr_noncausal"},
    {Method::FdKrrTrunc, "fd_krr_trunc"},
}};

inline std::string_view method_name(Method m) {
  for (const auto& [k, v] : kMethodNames)
    if (k == m) return v;
  return "unknown";
}

inline Method parse_method(std::string_view name) {
  for (const auto& [k, v] : kMethodNames)
    if (v == name) return k;
  throw SchemaError("unknown method: " + std::string(name));
}

/// Whether the method's output depends on the window length W.
inline bool uses_window(Method m) {
  return m == Method::SpatioTemporal || m == Method::FdKrrCausal || m == Method::FdKrrNonCausal ||
         m == Method::FdKrrTrunc;
}

/// `count` log-spaced values from lo to hi, ascending.
inline std::vector<double> log_grid(Index count = 20, double lo = 1e-9, double hi = 1.0) {
  require(count >= 1 && lo > 0.0 && hi >= lo, "invalid grid");
  std::vector<double> g(static_cast<std::size_t>(count));
  if (count == 1) {
    g[0] = lo;
    return g;
  }
  const double a = std::log10(lo);
  const double b = std::log10(hi);
  for (Index i = 0; i < count; ++i)
    g[static_cast<std::size_t>(i)] = std::pow(10.0, a + (b - a) * static_cast<double>(i) / static_cast<double>(count - 1));
  return g;
}

struct CvResult {
  double sigma2 = 0.0;
  std::vector<double> grid;
  std::vector<double> scores;  // total held-out squared error per grid value
};

/// Minimum score; ties (and NaN-free plateaus) go to the earliest, smallest value.
inline CvResult pick_min(std::vector<double> grid, std::vector<double> scores) {
  require(!grid.empty() && grid.size() == scores.size(), "grid and scores must match");
  std::size_t best = 0;
  for (std::size_t i = 1; i < scores.size(); ++i)
    if (scores[i] < scores[best]) best = i;
  CvResult r;
  r.sigma2 = grid[best];
  r.grid = std::move(grid);
  r.scores = std::move(scores);
  return r;
}

namespace detail {

/// k^T (K + s I)^{-1} for many s via one eigendecomposition of K.
struct ShiftedSolver {
  Matrix basis;  // eigenvectors of K
  Vector eigen;  // eigenvalues
  Matrix proj;   // basis^T k

  ShiftedSolver(const Matrix& k_ss, const Matrix& k_st) {
    Eigen::SelfAdjointEigenSolver<Matrix> es(k_ss);
    if (es.info() != Eigen::Success) throw FactorizationError("eigendecomposition failed", 0.0);
    basis = es.eigenvectors();
    eigen = es.eigenvalues();
    proj = basis.transpose() * k_st;
  }
  /// Rows: targets; columns: observed inputs.
  Matrix gains(double s) const {
    return (basis * ((eigen.array() + s).inverse().matrix().asDiagonal() * proj)).transpose();
  }
  /// Weights applied to basis^T y, for cheap repeated prediction.
  Matrix spectral_weights(double s) const {
    return ((eigen.array() + s).inverse().matrix().asDiagonal() * proj).transpose();
  }
};

inline std::vector<Index> others(Index count, Index skip) {
  std::vector<Index> idx;
  for (Index i = 0; i < count; ++i)
    if (i != skip) idx.push_back(i);
  return idx;
}

inline Positions pick(const Positions& pts, const std::vector<Index>& idx) {
  Positions out;
  for (Index i : idx) out.push_back(pts[static_cast<std::size_t>(i)]);
  return out;
}

}  // namespace detail

/// Leave-one-microphone-out CV of the spatio-temporal estimator. The held-out
/// microphone's lag-0 sample is predicted from every window sample of the
/// other microphones, using the prior observation covariance `kyy`.
inline CvResult cv_spatio_temporal(const Matrix& kyy, const Matrix& signals, Index window,
                                   const std::vector<double>& grid) {
  const Index mics = signals.rows();
  require(mics >= 2, "cross-validation needs at least two microphones");
  require(kyy.rows() == mics * window, "covariance does not match the window");
  require(signals.cols() >= window, "record shorter than the window");
  const Index count = signals.cols() - window + 1;
  std::vector<double> scores(grid.size(), 0.0);
  for (Index m = 0; m < mics; ++m) {
    std::vector<Index> keep;
    for (Index i = 0; i < mics * window; ++i)
      if (i % mics != m) keep.push_back(i);
    const detail::ShiftedSolver solver(kyy(keep, keep), kyy(keep, std::vector<Index>{m}));
    Matrix obs(static_cast<Index>(keep.size()), count);
    for (std::size_t j = 0; j < keep.size(); ++j) {
      const Index mic = keep[j] % mics;
      const Index lag = keep[j] / mics;
      obs.row(static_cast<Index>(j)) = signals.row(mic).segment(window - 1 - lag, count);
    }
    const Matrix rotated = solver.basis.transpose() * obs;
    const auto truth = signals.row(m).segment(window - 1, count);
    for (std::size_t g = 0; g < grid.size(); ++g) {
      const Matrix pred = solver.spectral_weights(grid[g]) * rotated;
      scores[g] += (pred - truth).squaredNorm();
    }
  }
  return pick_min(grid, scores);
}

/// Leave-one-microphone-out CV of FD-KRR-Full; squared error summed over the
/// passband bins of the full-record DFT with uniform weights.
inline CvResult cv_fd_full(const Matrix& signals, const Positions& mics, const FreqKernelConfig& cfg,
                           const std::vector<double>& grid) {
  const Index m_count = signals.rows();
  require(m_count >= 2 && m_count == static_cast<Index>(mics.size()), "cross-validation needs at least two microphones");
  const Index total = signals.cols();
  CMatrix spec(m_count, total);
  for (Index m = 0; m < m_count; ++m) {
    const auto f = dft::forward_real(signals.row(m).transpose());
    for (Index k = 0; k < total; ++k) spec(m, k) = f[static_cast<std::size_t>(k)];
  }
  const auto bins = dft::passband_bins(total, cfg.medium.fs, cfg.f_lo, cfg.f_hi);
  std::vector<double> scores(grid.size(), 0.0);
  for (Index m = 0; m < m_count; ++m) {
    const auto keep = detail::others(m_count, m);
    const Positions kept = detail::pick(mics, keep);
    const Positions held{mics[static_cast<std::size_t>(m)]};
    for (Index k : bins) {
      const double omega = 2.0 * std::numbers::pi * dft::bin_frequency(k, total, cfg.medium.fs);
      const detail::ShiftedSolver solver(diffuse_gram(kept, kept, omega, cfg.medium.c),
                                         diffuse_gram(kept, held, omega, cfg.medium.c));
      const CVector rotated = solver.basis.transpose().cast<std::complex<double>>() * spec(keep, k);
      for (std::size_t g = 0; g < grid.size(); ++g) {
        const std::complex<double> pred =
            (solver.spectral_weights(grid[g]).cast<std::complex<double>>() * rotated)(0);
        scores[g] += std::norm(pred - spec(m, k));
      }
    }
  }
  return pick_min(grid, scores);
}

/// Shape of a bin-wise FIR method: DFT length, lag range and bins.
struct FirLayout {
  Index grid = 0;
  Index first_lag = 0;
  Index length = 0;
};

inline FirLayout fir_layout(Method method, Index window, Index trunc_grid) {
  switch (method) {
    case Method::FdKrrCausal:
      return {window, 0, window};
    case Method::FdKrrNonCausal:
      return {2 * window - 1, -(window - 1), 2 * window - 1};
    case Method::FdKrrTrunc:
      return {trunc_grid, 0, window};
    default:
      throw ModelError("method is not a bin-wise FIR method");
  }
}

/// Leave-one-microphone-out CV of a windowed FD-KRR variant; the error is
/// measured on the held-out channel in the time domain after FIR filtering.
inline CvResult cv_fd_fir(const Matrix& signals, const Positions& mics, const FreqKernelConfig& cfg,
                          const FirLayout& layout, const std::vector<double>& grid) {
  const Index m_count = signals.rows();
  require(m_count >= 2 && m_count == static_cast<Index>(mics.size()), "cross-validation needs at least two microphones");
  require(layout.length >= 1 && layout.grid >= layout.length, "invalid filter layout");
  const auto bins = dft::passband_bins(layout.grid, cfg.medium.fs, cfg.f_lo, cfg.f_hi);
  std::vector<double> scores(grid.size(), 0.0);
  for (Index m = 0; m < m_count; ++m) {
    const auto keep = detail::others(m_count, m);
    const Positions kept = detail::pick(mics, keep);
    const Positions held{mics[static_cast<std::size_t>(m)]};
    std::vector<detail::ShiftedSolver> solvers;
    solvers.reserve(bins.size());
    for (Index k : bins) {
      const double omega = 2.0 * std::numbers::pi * dft::bin_frequency(k, layout.grid, cfg.medium.fs);
      solvers.emplace_back(diffuse_gram(kept, kept, omega, cfg.medium.c), diffuse_gram(kept, held, omega, cfg.medium.c));
    }
    const Matrix inputs = signals(keep, Eigen::all);
    for (std::size_t g = 0; g < grid.size(); ++g) {
      std::size_t b = 0;
      const auto bank = fir_from_bin_gains(layout.grid, layout.first_lag, layout.length, bins, 1,
                                           static_cast<Index>(keep.size()),
                                           [&](Index) { return solvers[b++].gains(grid[g]); });
      const auto rec = apply_filter_bank(bank, inputs);
      require(rec.end_valid > rec.first_valid, "record too short for the filter");
      const Index n = rec.end_valid - rec.first_valid;
      scores[g] +=
          (rec.mean.row(0).segment(rec.first_valid, n) - signals.row(m).segment(rec.first_valid, n)).squaredNorm();
    }
  }
  return pick_min(grid, scores);
}

/// A method plus its structural parameters.
struct MethodSpec {
  Method method = Method::SpatioTemporal;
  Index window = 10;
  Index trunc_grid = 0;  // 0: record length
};

/// Inputs shared by every method. `cov` must be built for the method's window
/// (W, or 1 for Spatial) when the method is model based.
struct MethodInputs {
  const Matrix* signals = nullptr;
  const Geometry* geo = nullptr;
  const CovarianceSet* cov = nullptr;
  FreqKernelConfig freq;
};

struct MethodOutcome {
  Reconstruction rec;
  double sigma2 = 0.0;
  CvResult cv;
};

inline bool model_based(Method m) { return m == Method::SpatioTemporal || m == Method::Spatial; }

inline Index effective_window(const MethodSpec& spec) { return spec.method == Method::Spatial ? 1 : spec.window; }

/// Tunes sigma2 by leave-one-microphone-out CV on the microphone signals only,
/// then reconstructs at the targets.
inline MethodOutcome tune_and_reconstruct(const MethodSpec& spec, const MethodInputs& in,
                                          const std::vector<double>& grid) {
  require(in.signals && in.geo, "method inputs are incomplete");
  const Matrix& y = *in.signals;
  MethodOutcome out;
  if (model_based(spec.method)) {
    require(in.cov != nullptr, "model-based methods need a covariance set");
    const Geometry g = in.geo->with_window(effective_window(spec));
    require(in.cov->Kyy.rows() == g.num_observations(), "covariance set does not match the window");
    out.cv = cv_spatio_temporal(in.cov->Kyy, y, g.window, grid);
    out.sigma2 = out.cv.sigma2;
    out.rec = reconstruct_stream(fit(*in.cov, out.sigma2), y, g);
    return out;
  }
  FreqKernelConfig cfg = in.freq;
  if (spec.method == Method::FdKrrFull) {
    out.cv = cv_fd_full(y, in.geo->mics, cfg, grid);
    cfg.sigma2 = out.sigma2 = out.cv.sigma2;
    out.rec = fd_krr_full(y, *in.geo, cfg);
    return out;
  }
  const Index tgrid = spec.trunc_grid > 0 ? spec.trunc_grid : y.cols();
  const FirLayout layout = fir_layout(spec.method, spec.window, tgrid);
  out.cv = cv_fd_fir(y, in.geo->mics, cfg, layout, grid);
  cfg.sigma2 = out.sigma2 = out.cv.sigma2;
  const FirFilterBank bank = spec.method == Method::FdKrrTrunc
                                 ? fd_krr_trunc(*in.geo, cfg, tgrid, spec.window)
                                 : fd_krr_window_bank(*in.geo, cfg, spec.window, spec.method == Method::FdKrrCausal);
  out.rec = apply_filter_bank(bank, y);
  return out;
}

}  // namespace stfield
