#pragma once

#include "stfield/dft.hpp"

#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>

namespace stfield {

/// Deterministic, independent RNG stream for (seed, stream, index).
inline std::mt19937_64 make_rng(std::uint64_t seed, std::uint64_t stream = 0, std::uint64_t index = 0) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(index),
                    static_cast<std::uint32_t>(index >> 32)};
  return std::mt19937_64(seq);
}

inline double sinc_pi(double x) {
  if (std::abs(x) < 1e-12) return 1.0;
  const double a = std::numbers::pi * x;
  return std::sin(a) / a;
}

/// Modified Bessel function I0 by its power series (adequate for |x| <= 20).
inline double bessel_i0(double x) {
  const double q = 0.25 * x * x;
  double term = 1.0;
  double sum = 1.0;
  for (int k = 1; k < 64 && term > 1e-17 * sum; ++k) {
    term *= q / (static_cast<double>(k) * static_cast<double>(k));
    sum += term;
  }
  return sum;
}

inline constexpr int kFractionalDelayTaps = 16;
inline constexpr double kKaiserBeta = 6.0;

/// Kaiser-windowed sinc fractional delay. Applying it reads
/// x[n - integer - (j - 7)] for tap j = 0..15.
struct FractionalDelay {
  long integer = 0;
  std::array<double, kFractionalDelayTaps> taps{};
  static constexpr long kFirstOffset = -(kFractionalDelayTaps / 2 - 1);
};

inline FractionalDelay fractional_delay(double delay) {
  FractionalDelay fd;
  const double base = std::floor(delay);
  fd.integer = static_cast<long>(base);
  const double frac = delay - base;
  const double half = kFractionalDelayTaps / 2.0;
  const double norm = bessel_i0(kKaiserBeta);
  double sum = 0.0;
  for (int j = 0; j < kFractionalDelayTaps; ++j) {
    const double t = static_cast<double>(j + FractionalDelay::kFirstOffset) - frac;
    const double r = t / half;
    const double win = std::abs(r) < 1.0 ? bessel_i0(kKaiserBeta * std::sqrt(1.0 - r * r)) / norm : 0.0;
    fd.taps[static_cast<std::size_t>(j)] = sinc_pi(t) * win;
    sum += fd.taps[static_cast<std::size_t>(j)];
  }
  for (auto& t : fd.taps) t /= sum;
  return fd;
}

/// Smallest n' >= n whose only prime factors are 2, 3 and 5.
inline Index fft_friendly_size(Index n) {
  for (Index m = std::max<Index>(n, 1);; ++m) {
    Index r = m;
    for (Index p : {2, 3, 5})
      while (r % p == 0) r /= p;
    if (r == 1) return m;
  }
}

struct ExcitationSpec {
  Index samples = 2000;
  double f_lo = 70.0;
  double f_hi = 1000.0;
  std::uint64_t seed = 0;

  void validate(double fs) const {
    require(samples >= 16, "excitation needs at least 16 samples");
    require(f_lo > 0.0 && f_lo < f_hi && f_hi < fs / 2.0, "excitation band must lie within (0, fs/2)");
  }
};

/// White Gaussian noise masked to [f_lo, f_hi] in the frequency domain,
/// scaled to unit expected variance, with the transform margins discarded.
inline Vector bandlimited_noise(const ExcitationSpec& spec, double fs, std::uint64_t stream = 0,
                                std::uint64_t index = 0) {
  spec.validate(fs);
  const Index margin = 64;
  const Index n = fft_friendly_size(spec.samples + 2 * margin);
  auto rng = make_rng(spec.seed, stream, index);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<dft::Complex> x(static_cast<std::size_t>(n));
  for (auto& v : x) v = normal(rng);
  auto spec_x = dft::forward(x);
  const auto bins = dft::passband_bins(n, fs, spec.f_lo, spec.f_hi);
  require(!bins.empty(), "excitation band contains no frequency bins");
  std::vector<dft::Complex> masked(static_cast<std::size_t>(n), 0.0);
  for (Index k : bins) {
    masked[static_cast<std::size_t>(k)] = spec_x[static_cast<std::size_t>(k)];
    masked[static_cast<std::size_t>(n - k)] = spec_x[static_cast<std::size_t>(n - k)];
  }
  const auto y = dft::inverse(masked);
  const double scale = std::sqrt(static_cast<double>(n) / (2.0 * static_cast<double>(bins.size())));
  Vector out(spec.samples);
  for (Index i = 0; i < spec.samples; ++i) out[i] = scale * y[static_cast<std::size_t>(margin + i)].real();
  return out;
}

/// Full linear convolution.
inline Vector convolve(const Vector& x, const Vector& h) {
  if (x.size() == 0 || h.size() == 0) return Vector();
  Vector y = Vector::Zero(x.size() + h.size() - 1);
  for (Index j = 0; j < h.size(); ++j) {
    if (h[j] != 0.0) y.segment(j, x.size()) += h[j] * x;
  }
  return y;
}

/// Rational resampling by up/down with a Kaiser-windowed sinc interpolator
/// whose cutoff is the lower of the two Nyquist rates.
inline Vector resample_rational(const Vector& x, Index up, Index down, int half_taps = 32) {
  require(up >= 1 && down >= 1, "resampling factors must be positive");
  if (up == down) return x;
  const Index out_len = (x.size() * up + down - 1) / down;
  const double cutoff = std::min(1.0, static_cast<double>(up) / static_cast<double>(down));
  const double half = static_cast<double>(half_taps) / cutoff;
  const double norm = bessel_i0(kKaiserBeta);
  Vector y = Vector::Zero(out_len);
  for (Index k = 0; k < out_len; ++k) {
    const double t = static_cast<double>(k) * static_cast<double>(down) / static_cast<double>(up);
    const auto lo = static_cast<Index>(std::ceil(t - half));
    const auto hi = static_cast<Index>(std::floor(t + half));
    double acc = 0.0;
    for (Index i = std::max<Index>(lo, 0); i <= std::min<Index>(hi, x.size() - 1); ++i) {
      const double d = t - static_cast<double>(i);
      const double r = d / half;
      if (std::abs(r) >= 1.0) continue;
      const double win = bessel_i0(kKaiserBeta * std::sqrt(1.0 - r * r)) / norm;
      acc += x[i] * cutoff * sinc_pi(cutoff * d) * win;
    }
    y[k] = acc;
  }
  return y;
}

}  // namespace stfield
