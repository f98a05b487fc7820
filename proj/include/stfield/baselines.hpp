#pragma once

#include "stfield/dft.hpp"
#include "stfield/estimator.hpp"

#include <cmath>
#include <limits>
#include <numbers>

namespace stfield {

/// Bin-wise diffuse-kernel ridge regression settings.
struct FreqKernelConfig {
  double f_lo = 70.0;
  double f_hi = 1000.0;
  double sigma2 = 1e-3;
  MediumParams medium;

  void validate() const {
    medium.validate();
    require(f_lo >= 0.0 && f_lo < f_hi && f_hi <= medium.fs / 2.0, "passband must lie within [0, fs/2]");
    require(sigma2 > 0.0, "ridge parameter must be positive");
  }
};

/// sinc((omega/c) |a_i - b_j|).
inline Matrix diffuse_gram(const Positions& a, const Positions& b, double omega, double c) {
  require(omega > 0.0, "diffuse gram needs a positive frequency");
  Matrix g(static_cast<Index>(a.size()), static_cast<Index>(b.size()));
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = 0; j < b.size(); ++j)
      g(static_cast<Index>(i), static_cast<Index>(j)) = coherence_diffuse((a[i] - b[j]).norm(), omega, c);
  return g;
}

/// KRR interpolation matrix K_uy (K_yy + sigma2 I)^{-1} at one frequency.
inline Matrix bin_gains(const Positions& mics, const Positions& targets, double omega, double c, double sigma2) {
  Matrix kyy = diffuse_gram(mics, mics, omega, c);
  kyy.diagonal().array() += sigma2;
  const SpdFactor f = factorize_spd(kyy);
  return f.solve(diffuse_gram(mics, targets, omega, c)).transpose();
}

/// Linear multichannel FIR: u[n] = sum_w H_w x[n - w] for w in
/// [first_lag, first_lag + length). Column (w - first_lag) * M + m of `taps`
/// holds H_w[:, m]. Negative lags read future samples.
struct FirFilterBank {
  Matrix taps;
  Index mics = 0;
  Index first_lag = 0;
  Index length = 0;

  Index last_lag() const { return first_lag + length - 1; }
  Matrix tap(Index lag) const { return taps.middleCols((lag - first_lag) * mics, mics); }
};

inline Reconstruction apply_filter_bank(const FirFilterBank& bank, const Matrix& signals) {
  require(signals.rows() == bank.mics, "signal rows must equal the filter bank input count");
  const Index total = signals.cols();
  Reconstruction rec;
  rec.first_valid = std::max<Index>(0, bank.last_lag());
  rec.end_valid = std::min<Index>(total, total + bank.first_lag);
  rec.mean = Matrix::Constant(bank.taps.rows(), total, std::numeric_limits<double>::quiet_NaN());
  if (rec.end_valid <= rec.first_valid) return rec;
  const Index count = rec.end_valid - rec.first_valid;
  Matrix acc = Matrix::Zero(bank.taps.rows(), count);
  for (Index w = bank.first_lag; w <= bank.last_lag(); ++w) {
    acc.noalias() += bank.tap(w) * signals.middleCols(rec.first_valid - w, count);
  }
  rec.mean.middleCols(rec.first_valid, count) = acc;
  return rec;
}

/// Frequency-domain KRR over the whole record; returns the complex inverse
/// transform (its imaginary part is rounding residue).
inline CMatrix fd_krr_full_complex(const Matrix& signals, const Geometry& geo, const FreqKernelConfig& cfg) {
  cfg.validate();
  require(signals.rows() == geo.num_mics(), "signal rows must equal the microphone count");
  const Index total = signals.cols();
  require(total >= 2, "record must have at least two samples");
  const Index targets = geo.num_targets();

  CMatrix spec(geo.num_mics(), total);
  for (Index m = 0; m < geo.num_mics(); ++m) {
    const auto f = dft::forward_real(signals.row(m).transpose());
    for (Index k = 0; k < total; ++k) spec(m, k) = f[static_cast<std::size_t>(k)];
  }
  CMatrix out_spec = CMatrix::Zero(targets, total);
  for (Index k : dft::passband_bins(total, cfg.medium.fs, cfg.f_lo, cfg.f_hi)) {
    const double omega = 2.0 * std::numbers::pi * dft::bin_frequency(k, total, cfg.medium.fs);
    const Matrix g = bin_gains(geo.mics, geo.targets, omega, cfg.medium.c, cfg.sigma2);
    const CVector u = g.cast<std::complex<double>>() * spec.col(k);
    out_spec.col(k) = u;
    out_spec.col(total - k) = u.conjugate();
  }
  CMatrix out(targets, total);
  std::vector<dft::Complex> row(static_cast<std::size_t>(total));
  for (Index p = 0; p < targets; ++p) {
    for (Index k = 0; k < total; ++k) row[static_cast<std::size_t>(k)] = out_spec(p, k);
    const auto x = dft::inverse(row);
    for (Index n = 0; n < total; ++n) out(p, n) = x[static_cast<std::size_t>(n)];
  }
  return out;
}

inline Reconstruction fd_krr_full(const Matrix& signals, const Geometry& geo, const FreqKernelConfig& cfg) {
  Reconstruction rec;
  rec.mean = fd_krr_full_complex(signals, geo, cfg).real();
  rec.first_valid = 0;
  rec.end_valid = signals.cols();
  return rec;
}

/// Real FIR bank from per-bin gains on a `grid`-point DFT:
/// H_w = (2/grid) sum_k cos(2 pi k w / grid) G_k for lags
/// [first_lag, first_lag + length). Equals the inverse DFT of the Hermitian
/// extension when only interior bins (no DC or Nyquist) carry gain.
template <class GainFn>
FirFilterBank fir_from_bin_gains(Index grid, Index first_lag, Index length, const std::vector<Index>& bins,
                                 Index outputs, Index inputs, GainFn&& gain) {
  FirFilterBank bank;
  bank.mics = inputs;
  bank.first_lag = first_lag;
  bank.length = length;
  bank.taps = Matrix::Zero(outputs, inputs * length);
  for (Index k : bins) {
    const Matrix g = gain(k);
    const double theta = 2.0 * std::numbers::pi * static_cast<double>(k) / static_cast<double>(grid);
    for (Index w = first_lag; w < first_lag + length; ++w) {
      bank.taps.middleCols((w - first_lag) * inputs, inputs) +=
          (2.0 / static_cast<double>(grid)) * std::cos(theta * static_cast<double>(w)) * g;
    }
  }
  return bank;
}

/// FIR equivalent of the windowed bin-wise estimator. The causal variant uses
/// the last W samples and keeps the newest reconstructed sample; the
/// non-causal one uses 2W-1 samples centred on the output sample.
inline FirFilterBank fd_krr_window_bank(const Geometry& geo, const FreqKernelConfig& cfg, Index window, bool causal) {
  cfg.validate();
  require(window >= 2, "windowed FD-KRR needs W >= 2");
  const Index len = causal ? window : 2 * window - 1;
  return fir_from_bin_gains(len, causal ? 0 : -(window - 1), len,
                            dft::passband_bins(len, cfg.medium.fs, cfg.f_lo, cfg.f_hi), geo.num_targets(),
                            geo.num_mics(), [&](Index k) {
                              const double omega = 2.0 * std::numbers::pi * dft::bin_frequency(k, len, cfg.medium.fs);
                              return bin_gains(geo.mics, geo.targets, omega, cfg.medium.c, cfg.sigma2);
                            });
}

inline Reconstruction fd_krr_windowed(const Matrix& signals, const Geometry& geo, const FreqKernelConfig& cfg,
                                      Index window, bool causal) {
  return apply_filter_bank(fd_krr_window_bank(geo, cfg, window, causal), signals);
}

/// One output sample of the windowed estimator computed literally: DFT of the
/// window, bin-wise KRR, inverse DFT, pick the output position.
inline CVector fd_krr_window_direct(const Matrix& signals, const Geometry& geo, const FreqKernelConfig& cfg,
                                    Index window, bool causal, Index n) {
  const Index len = causal ? window : 2 * window - 1;
  // Both variants start W-1 samples back; the output sits at position W-1.
  const Index start = n - window + 1;
  const Index out_pos = window - 1;
  require(start >= 0 && start + len <= signals.cols(), "window exceeds the record");
  CMatrix spec(geo.num_mics(), len);
  for (Index m = 0; m < geo.num_mics(); ++m) {
    const auto f = dft::forward_real(signals.row(m).segment(start, len).transpose());
    for (Index k = 0; k < len; ++k) spec(m, k) = f[static_cast<std::size_t>(k)];
  }
  CMatrix out_spec = CMatrix::Zero(geo.num_targets(), len);
  for (Index k : dft::passband_bins(len, cfg.medium.fs, cfg.f_lo, cfg.f_hi)) {
    const double omega = 2.0 * std::numbers::pi * dft::bin_frequency(k, len, cfg.medium.fs);
    const Matrix g = bin_gains(geo.mics, geo.targets, omega, cfg.medium.c, cfg.sigma2);
    const CVector u = g.cast<std::complex<double>>() * spec.col(k);
    out_spec.col(k) = u;
    out_spec.col(len - k) = u.conjugate();
  }
  CVector out(geo.num_targets());
  std::vector<dft::Complex> row(static_cast<std::size_t>(len));
  for (Index p = 0; p < geo.num_targets(); ++p) {
    for (Index k = 0; k < len; ++k) row[static_cast<std::size_t>(k)] = out_spec(p, k);
    out[p] = dft::inverse(row)[static_cast<std::size_t>(out_pos)];
  }
  return out;
}

/// High-resolution (T_grid-bin) KRR filter, inverse transformed with tap 0 at
/// lag 0 and truncated to the causal lags 0..W-1.
inline FirFilterBank fd_krr_trunc(const Geometry& geo, const FreqKernelConfig& cfg, Index grid, Index window) {
  cfg.validate();
  require(window >= 1 && grid >= window, "truncation needs 1 <= W <= T_grid");
  return fir_from_bin_gains(grid, 0, window, dft::passband_bins(grid, cfg.medium.fs, cfg.f_lo, cfg.f_hi),
                            geo.num_targets(), geo.num_mics(), [&](Index k) {
                              const double omega = 2.0 * std::numbers::pi * dft::bin_frequency(k, grid, cfg.medium.fs);
                              return bin_gains(geo.mics, geo.targets, omega, cfg.medium.c, cfg.sigma2);
                            });
}

/// Spatio-temporal estimator restricted to the zero-lag spatial covariance.
inline Reconstruction spatial_baseline(const Matrix& signals, const Geometry& geo, const KernelModel& model,
                                       double sigma2) {
  const Geometry g1 = geo.with_window(1);
  const PosteriorModel post = fit(build_covariance_set(model, g1), sigma2);
  return reconstruct_stream(post, signals, g1);
}

}  // namespace stfield
