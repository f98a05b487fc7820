#pragma once

#include <Eigen/Dense>

#include <stdexcept>
#include <string>
#include <vector>

namespace stfield {

using Vec3 = Eigen::Vector3d;
using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using CMatrix = Eigen::MatrixXcd;
using CVector = Eigen::VectorXcd;
using Index = Eigen::Index;
using Positions = std::vector<Vec3>;

/// Invalid model parameters or evaluation points.
class ModelError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Raised when a symmetric system stays indefinite after the jitter policy.
class FactorizationError : public std::runtime_error {
 public:
  FactorizationError(const std::string& what, double jitter)
      : std::runtime_error(what + " (last jitter " + std::to_string(jitter) + ")"),
        jitter_(jitter) {}
  double jitter() const noexcept { return jitter_; }

 private:
  double jitter_;
};

/// Malformed files, manifests, or config documents.
class SchemaError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline void require(bool cond, const char* what) {
  if (!cond) throw ModelError(what);
}

inline Vec3 centroid(const Positions& pts) {
  require(!pts.empty(), "centroid of an empty point set");
  Vec3 c = Vec3::Zero();
  for (const auto& p : pts) c += p;
  return c / static_cast<double>(pts.size());
}

}  // namespace stfield
