#pragma once

#include "stfield/types.hpp"

#include <cmath>
#include <numbers>

namespace stfield {

struct MediumParams {
  double c = 343.0;    // speed of sound, m/s
  double fs = 8000.0;  // sampling rate, Hz

  double sample_period() const { return 1.0 / fs; }
  void validate() const {
    require(c > 0.0, "speed of sound must be positive");
    require(fs > 0.0, "sampling rate must be positive");
  }
};

/// Flat band-pass source spectrum on [omega1, omega2] (rad/s) with intensity q.
struct SourceSpectrum {
  double omega1 = 2.0 * std::numbers::pi * 70.0;
  double omega2 = 2.0 * std::numbers::pi * 1000.0;
  double q = 1.0;

  static SourceSpectrum from_hz(double f_lo, double f_hi, double q = 1.0) {
    SourceSpectrum s{2.0 * std::numbers::pi * f_lo, 2.0 * std::numbers::pi * f_hi, q};
    s.validate();
    return s;
  }

  void validate() const {
    require(omega1 > 0.0 && omega1 < omega2, "band edges must satisfy 0 < omega1 < omega2");
    require(q > 0.0, "source intensity must be positive");
  }

  /// Two-sided power spectral density, normalized so that kappa(0) = 1.
  double density(double omega) const {
    const double w = std::abs(omega);
    return (w >= omega1 && w <= omega2) ? std::numbers::pi / (omega2 - omega1) : 0.0;
  }
};

/// Below this value of |delta|*(omega1+omega2) kappa uses its Taylor expansion.
inline constexpr double kKappaSeriesThreshold = 1e-6;

/// Temporal correlation of the band-limited source at time lag `delta` (s).
///
/// Closed form (sin(w2 d) - sin(w1 d)) / (d (w2 - w1)), evaluated in the
/// product form cos(wc d) * sin(wh d) / (wh d) with wc the band centre and wh
/// the half width, which avoids cancellation for small lags.
inline double kappa(double delta, const SourceSpectrum& s) {
  const double sum = s.omega1 + s.omega2;
  if (std::abs(delta) * sum < kKappaSeriesThreshold) {
    const double m2 = s.omega1 * s.omega1 + s.omega1 * s.omega2 + s.omega2 * s.omega2;
    return 1.0 - delta * delta * m2 / 6.0;
  }
  const double half_width = 0.5 * (s.omega2 - s.omega1) * delta;
  return std::cos(0.5 * sum * delta) * std::sin(half_width) / half_width;
}

}  // namespace stfield
