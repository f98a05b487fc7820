#pragma once

#include "stfield/kernel.hpp"
#include "stfield/quadrature.hpp"
#include "stfield/signal.hpp"

#include <cmath>
#include <cstdlib>
#include <limits>
#include <numbers>

namespace stfield {

/// Free-field point sources on a sphere around the array, each driven by an
/// independent band-limited excitation.
struct DiffuseSpec {
  Index n_dirs = 1000;
  double radius = 5.0;
  std::uint64_t seed = 0;
  Vec3 center = Vec3::Zero();
  /// Source strength. Each excitation gets variance q * 4 pi a^2 / n_dirs so
  /// the field matches the quadrature prior with the same q.
  double q = 1.0;

  void validate() const {
    require(n_dirs >= 1, "diffuse field needs at least one direction");
    require(radius > 0.0, "source sphere radius must be positive");
    require(q > 0.0, "source strength must be positive");
  }
  double excitation_std() const {
    return std::sqrt(q * 4.0 * std::numbers::pi * radius * radius / static_cast<double>(n_dirs));
  }
};

/// Lattice directions for this seed, randomly rotated about the center.
inline SphereQuadrature diffuse_sources(const DiffuseSpec& spec) {
  spec.validate();
  auto rng = make_rng(spec.seed, 0x726f74);
  return rotated(fibonacci_lattice(spec.n_dirs, spec.radius, spec.center), random_rotation(rng));
}

namespace detail {

inline double max_delay_samples(const SphereQuadrature& src, const Positions& positions, const MediumParams& medium) {
  double worst = 0.0;
  for (const auto& p : positions) {
    require((p - src.center).norm() < src.radius, "positions must lie inside the source sphere");
    for (const auto& s : src.points) worst = std::max(worst, (p - s).norm());
  }
  return worst / medium.c * medium.fs;
}

inline Index lead_samples(double max_delay) {
  return static_cast<Index>(std::ceil(max_delay)) + kFractionalDelayTaps / 2;
}

}  // namespace detail

/// Excitation length the simulation needs for `samples` output samples.
inline Index diffuse_excitation_length(const DiffuseSpec& spec, const Positions& positions, const MediumParams& medium,
                                       Index samples) {
  const auto src = diffuse_sources(spec);
  return samples + detail::lead_samples(detail::max_delay_samples(src, positions, medium)) + kFractionalDelayTaps / 2;
}

/// u(r, t) = sum_d x_d(t - |r - r_d|/c) / (4 pi |r - r_d|) with column d of
/// `excitations` driving source d. Output sample n reads excitation sample
/// n + lead - delay, where lead covers the longest delay.
inline Matrix simulate_diffuse(const DiffuseSpec& spec, const Matrix& excitations, const Positions& positions,
                               const MediumParams& medium, Index samples) {
  medium.validate();
  const auto src = diffuse_sources(spec);
  require(excitations.cols() == src.size(), "one excitation column per direction is required");
  require(samples >= 1, "output must have at least one sample");
  const Index lead = detail::lead_samples(detail::max_delay_samples(src, positions, medium));
  require(excitations.rows() >= samples + lead + kFractionalDelayTaps / 2, "excitation too short for the delays");

  Matrix out(static_cast<Index>(positions.size()), samples);
  Vector acc(samples);
  for (std::size_t p = 0; p < positions.size(); ++p) {
    acc.setZero();
    for (Index d = 0; d < src.size(); ++d) {
      const double dist = (positions[p] - src.points[static_cast<std::size_t>(d)]).norm();
      const double amp = 1.0 / (4.0 * std::numbers::pi * dist);
      const auto fd = fractional_delay(dist / medium.c * medium.fs);
      const auto col = excitations.col(d);
      for (int j = 0; j < kFractionalDelayTaps; ++j) {
        const Index start = lead - fd.integer - (j + FractionalDelay::kFirstOffset);
        acc.noalias() += (amp * fd.taps[static_cast<std::size_t>(j)]) * col.segment(start, samples);
      }
    }
    out.row(static_cast<Index>(p)) = acc.transpose();
  }
  return out;
}

/// Independent band-limited excitation per direction (RNG stream per index),
/// scaled to the prior-consistent strength.
inline Matrix diffuse_excitations(const DiffuseSpec& spec, const ExcitationSpec& exc, Index length, double fs) {
  spec.validate();
  ExcitationSpec e = exc;
  e.samples = length;
  Matrix x(length, spec.n_dirs);
  const double scale = spec.excitation_std();
  for (Index d = 0; d < spec.n_dirs; ++d) x.col(d) = scale * bandlimited_noise(e, fs, 1, static_cast<std::uint64_t>(d));
  return x;
}

/// Diffuse field over exc.samples output samples at `positions`.
inline Matrix simulate_diffuse(const DiffuseSpec& spec, const ExcitationSpec& exc, const Positions& positions,
                               const MediumParams& medium) {
  const Index len = diffuse_excitation_length(spec, positions, medium, exc.samples);
  return simulate_diffuse(spec, diffuse_excitations(spec, exc, len, medium.fs), positions, medium, exc.samples);
}

/// Shoebox room with one source and frequency-independent wall reflection.
struct RoomSpec {
  Vec3 dims{3.0, 4.0, 2.5};
  double beta = 0.5;
  int max_order = 12;
  Vec3 source{1.0, 1.0, 1.0};
  Index discard = 800;

  bool contains(const Vec3& p) const { return (p.array() > 0.0).all() && (p.array() < dims.array()).all(); }

  void validate() const {
    require((dims.array() > 0.0).all(), "room dimensions must be positive");
    require(beta >= 0.0 && beta < 1.0, "reflection coefficient must lie in [0, 1)");
    require(max_order >= 0, "image order must be non-negative");
    require(discard >= 0, "discard must be non-negative");
    require(contains(source), "source must lie strictly inside the room");
  }
};

inline constexpr double kImageClearance = 1e-6;

/// Rectangular-room image method. Image (q, n) sits at (1 - 2q) x_s + 2 n L
/// per axis with sum(|n - q| + |n|) reflections.
inline Vector image_source_rir(const RoomSpec& room, const Vec3& mic, const MediumParams& medium) {
  room.validate();
  medium.validate();
  require(room.contains(mic), "microphone must lie inside the room");
  struct Arrival {
    double delay;
    double amp;
  };
  std::vector<Arrival> arrivals;
  const int span = room.max_order / 2 + 1;
  double longest = 0.0;
  for (int qx = 0; qx <= 1; ++qx)
    for (int qy = 0; qy <= 1; ++qy)
      for (int qz = 0; qz <= 1; ++qz)
        for (int nx = -span; nx <= span; ++nx)
          for (int ny = -span; ny <= span; ++ny)
            for (int nz = -span; nz <= span; ++nz) {
              const int order = std::abs(nx - qx) + std::abs(nx) + std::abs(ny - qy) + std::abs(ny) +
                                std::abs(nz - qz) + std::abs(nz);
              if (order > room.max_order) continue;
              const Vec3 img((1 - 2 * qx) * room.source.x() + 2.0 * nx * room.dims.x(),
                             (1 - 2 * qy) * room.source.y() + 2.0 * ny * room.dims.y(),
                             (1 - 2 * qz) * room.source.z() + 2.0 * nz * room.dims.z());
              const double d = (img - mic).norm();
              if (d < kImageClearance) throw ModelError("microphone coincides with an image source");
              const double amp = std::pow(room.beta, order) / (4.0 * std::numbers::pi * d);
              if (amp == 0.0) continue;
              const double delay = d / medium.c * medium.fs;
              arrivals.push_back({delay, amp});
              longest = std::max(longest, delay);
            }
  const Index len = static_cast<Index>(std::ceil(longest)) + kFractionalDelayTaps;
  Vector h = Vector::Zero(len);
  for (const auto& a : arrivals) {
    const auto fd = fractional_delay(a.delay);
    for (int j = 0; j < kFractionalDelayTaps; ++j) {
      const Index n = fd.integer + j + FractionalDelay::kFirstOffset;
      if (n >= 0 && n < len) h[n] += a.amp * fd.taps[static_cast<std::size_t>(j)];
    }
  }
  return h;
}

/// Convolves the excitation with each RIR and keeps samples
/// [discard, discard + samples).
inline Matrix render_rirs(const std::vector<Vector>& rirs, const Vector& excitation, Index samples, Index discard) {
  require(samples >= 1 && discard >= 0, "invalid output range");
  if (excitation.size() < discard + samples) throw ModelError("excitation too short after discarding");
  Matrix out(static_cast<Index>(rirs.size()), samples);
  Vector acc(samples);
  for (std::size_t p = 0; p < rirs.size(); ++p) {
    acc.setZero();
    const Vector& h = rirs[p];
    for (Index j = 0; j < h.size(); ++j) {
      // y[n] = sum_j h[j] x[n - j] for n = discard .. discard + samples - 1.
      const Index lo = std::max<Index>(0, j - discard);
      const Index hi = std::min<Index>(samples, excitation.size() - discard + j);
      if (hi <= lo || h[j] == 0.0) continue;
      acc.segment(lo, hi - lo) += h[j] * excitation.segment(discard + lo - j, hi - lo);
    }
    out.row(static_cast<Index>(p)) = acc.transpose();
  }
  return out;
}

inline Matrix render_room(const RoomSpec& room, const Positions& positions, const Vector& excitation, Index samples,
                          const MediumParams& medium) {
  std::vector<Vector> rirs;
  rirs.reserve(positions.size());
  for (const auto& p : positions) rirs.push_back(image_source_rir(room, p, medium));
  return render_rirs(rirs, excitation, samples, room.discard);
}

/// Uniform position at least `margin` from every wall.
template <class Rng>
Vec3 sample_source_position(const Vec3& dims, double margin, Rng& rng) {
  require((dims.array() > 2.0 * margin).all(), "room too small for the wall margin");
  Vec3 p;
  for (int i = 0; i < 3; ++i) {
    std::uniform_real_distribution<double> u(margin, dims[i] - margin);
    p[i] = u(rng);
  }
  return p;
}

/// Pooled variance over every entry of the set.
inline double pooled_variance(const Matrix& signals) {
  const double mean = signals.mean();
  return (signals.array() - mean).square().mean();
}

/// Adds white Gaussian noise at the given SNR relative to the pooled signal
/// variance. snr_db = +inf returns the input.
inline Matrix add_noise_snr(const Matrix& signals, double snr_db, std::uint64_t seed) {
  if (std::isinf(snr_db) && snr_db > 0.0) return signals;
  require(!std::isnan(snr_db), "SNR must be a number");
  const double var = pooled_variance(signals);
  if (!(var > 0.0)) throw ModelError("cannot set an SNR for all-zero signals");
  const double sd = std::sqrt(var * std::pow(10.0, -snr_db / 10.0));
  auto rng = make_rng(seed, 0x6e6f69);
  std::normal_distribution<double> normal(0.0, sd);
  Matrix out = signals;
  for (Index j = 0; j < out.cols(); ++j)
    for (Index i = 0; i < out.rows(); ++i) out(i, j) += normal(rng);
  return out;
}

}  // namespace stfield
