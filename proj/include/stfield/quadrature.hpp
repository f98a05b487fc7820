#pragma once

#include "stfield/types.hpp"

#include <Eigen/Geometry>

#include <cmath>
#include <numbers>
#include <random>

namespace stfield {

/// Equal-weight surface quadrature on a sphere of radius `radius`.
struct SphereQuadrature {
  double radius = 0.0;
  Vec3 center = Vec3::Zero();
  Positions points;
  double weight = 0.0;  // 4 pi a^2 / Q

  Index size() const { return static_cast<Index>(points.size()); }
};

/// Fibonacci spiral lattice: golden-angle longitude steps and latitudes
/// z_i = 1 - (2i+1)/Q.
inline SphereQuadrature fibonacci_lattice(Index count, double radius, const Vec3& center) {
  require(count >= 1, "quadrature needs at least one point");
  require(radius > 0.0, "quadrature radius must be positive");
  const double golden_angle = std::numbers::pi * (3.0 - std::sqrt(5.0));
  SphereQuadrature quad;
  quad.radius = radius;
  quad.center = center;
  quad.weight = 4.0 * std::numbers::pi * radius * radius / static_cast<double>(count);
  quad.points.reserve(static_cast<std::size_t>(count));
  for (Index i = 0; i < count; ++i) {
    const double z = 1.0 - (2.0 * static_cast<double>(i) + 1.0) / static_cast<double>(count);
    const double rho = std::sqrt(std::max(0.0, 1.0 - z * z));
    const double phi = golden_angle * static_cast<double>(i);
    Vec3 dir(rho * std::cos(phi), rho * std::sin(phi), z);
    dir.normalize();
    quad.points.push_back(center + radius * dir);
  }
  return quad;
}

/// Uniformly distributed random rotation (normalized Gaussian quaternion).
template <class Rng>
Eigen::Matrix3d random_rotation(Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::Quaterniond q(normal(rng), normal(rng), normal(rng), normal(rng));
  q.normalize();
  return q.toRotationMatrix();
}

/// Rotates the lattice rigidly about its center.
inline SphereQuadrature rotated(const SphereQuadrature& quad, const Eigen::Matrix3d& rot) {
  SphereQuadrature out = quad;
  for (auto& p : out.points) p = quad.center + rot * (p - quad.center);
  return out;
}

}  // namespace stfield
