#pragma once

#include "stfield/types.hpp"

#include <unsupported/Eigen/FFT>

#include <complex>
#include <vector>

namespace stfield::dft {

using Complex = std::complex<double>;

/// X[k] = sum_n x[n] exp(-j 2 pi k n / N).
inline std::vector<Complex> forward(const std::vector<Complex>& x) {
  Eigen::FFT<double> fft;
  std::vector<Complex> out;
  fft.fwd(out, x);
  return out;
}

inline std::vector<Complex> forward_real(const Eigen::Ref<const Vector>& x) {
  std::vector<Complex> in(static_cast<std::size_t>(x.size()));
  for (Index i = 0; i < x.size(); ++i) in[static_cast<std::size_t>(i)] = x[i];
  return forward(in);
}

/// x[n] = (1/N) sum_k X[k] exp(+j 2 pi k n / N).
inline std::vector<Complex> inverse(const std::vector<Complex>& X) {
  Eigen::FFT<double> fft;
  std::vector<Complex> out;
  fft.inv(out, X);
  return out;
}

/// Frequency (Hz) of bin k for an N-point transform at rate fs.
inline double bin_frequency(Index k, Index n, double fs) {
  return static_cast<double>(k) * fs / static_cast<double>(n);
}

/// Positive-frequency bins 1..ceil(N/2)-1 whose centre lies in [f_lo, f_hi].
/// DC and Nyquist are never included.
inline std::vector<Index> passband_bins(Index n, double fs, double f_lo, double f_hi) {
  std::vector<Index> bins;
  for (Index k = 1; 2 * k < n; ++k) {
    const double f = bin_frequency(k, n, fs);
    if (f >= f_lo && f <= f_hi) bins.push_back(k);
  }
  return bins;
}

}  // namespace stfield::dft
