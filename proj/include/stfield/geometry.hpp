#pragma once

#include "stfield/types.hpp"

#include <cmath>
#include <numbers>

namespace stfield {

/// Microphone and prediction positions plus the causal window length.
///
/// The observation vector stacks the M x W window column by column: sample
/// (mic m, lag w) lives at flat index w * M + m, lag 0 being the most recent
/// sample.
struct Geometry {
  Positions mics;
  Positions targets;
  Index window = 1;

  Index num_mics() const { return static_cast<Index>(mics.size()); }
  Index num_targets() const { return static_cast<Index>(targets.size()); }
  Index num_observations() const { return num_mics() * window; }

  Index flat_index(Index mic, Index lag) const { return lag * num_mics() + mic; }
  Index mic_of(Index flat) const { return flat % num_mics(); }
  Index lag_of(Index flat) const { return flat / num_mics(); }

  void validate() const {
    require(!mics.empty(), "geometry needs at least one microphone");
    require(!targets.empty(), "geometry needs at least one target");
    require(window >= 1, "window length must be at least one sample");
  }

  Geometry with_window(Index w) const {
    Geometry g = *this;
    g.window = w;
    return g;
  }
};

/// M microphones equally spaced on a horizontal circle, the first on the +x axis.
inline Positions circular_array(Index count, double radius, const Vec3& center) {
  require(count >= 1, "array needs at least one microphone");
  Positions out;
  out.reserve(static_cast<std::size_t>(count));
  for (Index m = 0; m < count; ++m) {
    const double ang = 2.0 * std::numbers::pi * static_cast<double>(m) / static_cast<double>(count);
    out.push_back(center + Vec3(radius * std::cos(ang), radius * std::sin(ang), 0.0));
  }
  return out;
}

/// Square-grid points of a horizontal disc, row-major in (x, y).
inline Positions disc_grid(double radius, double spacing, const Vec3& center) {
  require(radius >= 0.0 && spacing > 0.0, "disc grid needs radius >= 0 and spacing > 0");
  const auto n = static_cast<long>(std::floor(radius / spacing + 1e-9));
  const double r2 = radius * radius * (1.0 + 1e-9);
  Positions out;
  for (long i = -n; i <= n; ++i) {
    for (long j = -n; j <= n; ++j) {
      const double x = static_cast<double>(i) * spacing;
      const double y = static_cast<double>(j) * spacing;
      if (x * x + y * y <= r2) out.push_back(center + Vec3(x, y, 0.0));
    }
  }
  return out;
}

}  // namespace stfield
