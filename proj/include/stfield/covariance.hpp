#pragma once

#include "stfield/geometry.hpp"
#include "stfield/kernel.hpp"
#include "stfield/quadrature.hpp"

#include <complex>
#include <numbers>

namespace stfield {

/// Minimum admissible distance between an evaluation point and a source node.
inline constexpr double kNodeClearance = 1e-9;

/// Covariance of the field driven by a spatially white, band-limited source
/// layer on a sphere, discretized by an equal-weight surface quadrature.
struct KernelModel {
  MediumParams medium;
  SourceSpectrum spectrum;
  SphereQuadrature quadrature;

  static KernelModel make(const MediumParams& medium, const SourceSpectrum& spectrum,
                          double radius, Index nodes, const Vec3& center) {
    medium.validate();
    spectrum.validate();
    return KernelModel{medium, spectrum, fibonacci_lattice(nodes, radius, center)};
  }

  /// q / (16 pi^2) times the node weight 4 pi a^2 / Q.
  double prefactor() const {
    return spectrum.q / (16.0 * std::numbers::pi * std::numbers::pi) * quadrature.weight;
  }

  /// Distances from `r` to all quadrature nodes; rejects points on or outside
  /// the source sphere and points that sit on a node.
  Vector node_distances(const Vec3& r) const {
    if (!((r - quadrature.center).norm() < quadrature.radius)) {
      throw ModelError("evaluation point must lie strictly inside the source sphere");
    }
    Vector d(quadrature.size());
    for (Index i = 0; i < quadrature.size(); ++i) {
      d[i] = (r - quadrature.points[static_cast<std::size_t>(i)]).norm();
      if (d[i] < kNodeClearance) throw ModelError("evaluation point coincides with a quadrature node");
    }
    return d;
  }

  /// C(r, r'; l) for l = min_lag..max_lag, from precomputed node distances.
  Vector lag_table(const Vector& dist_r, const Vector& dist_rp, Index min_lag, Index max_lag) const {
    const double ts = medium.sample_period();
    Vector out = Vector::Zero(max_lag - min_lag + 1);
    for (Index i = 0; i < dist_r.size(); ++i) {
      const double w = 1.0 / (dist_r[i] * dist_rp[i]);
      const double delay = (dist_r[i] - dist_rp[i]) / medium.c;
      for (Index l = min_lag; l <= max_lag; ++l) {
        out[l - min_lag] += w * kappa(static_cast<double>(l) * ts - delay, spectrum);
      }
    }
    return out * prefactor();
  }

  std::complex<double> csd_from_distances(const Vector& dist_r, const Vector& dist_rp, double omega) const {
    std::complex<double> acc = 0.0;
    const double k = omega / medium.c;
    for (Index i = 0; i < dist_r.size(); ++i) {
      const double phase = -k * (dist_r[i] - dist_rp[i]);
      acc += std::polar(1.0 / (dist_r[i] * dist_rp[i]), phase);
    }
    return acc * spectrum.density(omega) * prefactor();
  }
};

/// Spatio-temporal covariance C(r, rp; lag) with the lag in samples.
inline double cov_st(const KernelModel& model, const Vec3& r, const Vec3& rp, Index lag) {
  return model.lag_table(model.node_distances(r), model.node_distances(rp), lag, lag)[0];
}

/// Gram blocks of the joint prior over targets (u) and the stacked window (y).
struct CovarianceSet {
  Matrix Kuu;  // P x P
  Matrix Kuy;  // P x MW
  Matrix Kyy;  // MW x MW
};

inline CovarianceSet build_covariance_set(const KernelModel& model, const Geometry& geo) {
  geo.validate();
  const Index mics = geo.num_mics();
  const Index targets = geo.num_targets();
  const Index win = geo.window;
  const Index n = geo.num_observations();

  std::vector<Vector> mic_dist;
  std::vector<Vector> tgt_dist;
  for (const auto& r : geo.mics) mic_dist.push_back(model.node_distances(r));
  for (const auto& r : geo.targets) tgt_dist.push_back(model.node_distances(r));

  // One lag table per ordered microphone pair (m <= m'), lags -(W-1)..(W-1).
  std::vector<Vector> pair_tables(static_cast<std::size_t>(mics * mics));
  for (Index a = 0; a < mics; ++a) {
    for (Index b = a; b < mics; ++b) {
      pair_tables[static_cast<std::size_t>(a * mics + b)] =
          model.lag_table(mic_dist[static_cast<std::size_t>(a)], mic_dist[static_cast<std::size_t>(b)],
                          -(win - 1), win - 1);
    }
  }
  auto mic_cov = [&](Index a, Index b, Index lag) {
    if (a <= b) return pair_tables[static_cast<std::size_t>(a * mics + b)][lag + win - 1];
    return pair_tables[static_cast<std::size_t>(b * mics + a)][-lag + win - 1];
  };

  CovarianceSet cov;
  cov.Kyy.resize(n, n);
  for (Index i = 0; i < n; ++i) {
    for (Index j = i; j < n; ++j) {
      const double v = mic_cov(geo.mic_of(i), geo.mic_of(j), geo.lag_of(j) - geo.lag_of(i));
      cov.Kyy(i, j) = v;
      cov.Kyy(j, i) = v;
    }
  }

  cov.Kuy.resize(targets, n);
  for (Index p = 0; p < targets; ++p) {
    for (Index m = 0; m < mics; ++m) {
      const Vector t = model.lag_table(tgt_dist[static_cast<std::size_t>(p)], mic_dist[static_cast<std::size_t>(m)], 0, win - 1);
      for (Index w = 0; w < win; ++w) cov.Kuy(p, geo.flat_index(m, w)) = t[w];
    }
  }

  cov.Kuu.resize(targets, targets);
  for (Index p = 0; p < targets; ++p) {
    for (Index pp = p; pp < targets; ++pp) {
      const double v =
          model.lag_table(tgt_dist[static_cast<std::size_t>(p)], tgt_dist[static_cast<std::size_t>(pp)], 0, 0)[0];
      cov.Kuu(p, pp) = v;
      cov.Kuu(pp, p) = v;
    }
  }
  return cov;
}

/// Cross-spectral density of the discretized model at angular frequency omega.
inline std::complex<double> csd_surface(const KernelModel& model, const Vec3& r, const Vec3& rp, double omega) {
  const double w = std::abs(omega);
  if (w < model.spectrum.omega1 || w > model.spectrum.omega2) {
    throw ModelError("csd_surface evaluated outside the source band");
  }
  return model.csd_from_distances(model.node_distances(r), model.node_distances(rp), omega);
}

/// S(r, r') / sqrt(S(r, r) S(r', r')).
inline std::complex<double> normalized_coherence(const KernelModel& model, const Vec3& r, const Vec3& rp,
                                                 double omega) {
  const Vector dr = model.node_distances(r);
  const Vector drp = model.node_distances(rp);
  require(std::abs(omega) >= model.spectrum.omega1 && std::abs(omega) <= model.spectrum.omega2,
          "coherence evaluated outside the source band");
  const auto cross = model.csd_from_distances(dr, drp, omega);
  const double auto_r = model.csd_from_distances(dr, dr, omega).real();
  const double auto_rp = model.csd_from_distances(drp, drp, omega).real();
  return cross / std::sqrt(auto_r * auto_rp);
}

/// Classical diffuse-field coherence sin(kd) / (kd).
inline double coherence_diffuse(double distance, double omega, double c) {
  require(distance >= 0.0, "distance must be non-negative");
  const double x = omega * distance / c;
  if (std::abs(x) < 1e-8) return 1.0 - x * x / 6.0;
  return std::sin(x) / x;
}

}  // namespace stfield
