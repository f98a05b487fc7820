#pragma once

#include "stfield/estimator.hpp"

#include <algorithm>
#include <cmath>
#include <random>

namespace stfield {

/// Relaxed weights z in [epsilon, 1]^n summing to `budget`, or a binary mask
/// with exactly `budget` ones.
struct SelectionMask {
  Vector weights;
  Index budget = 0;
  double epsilon = 0.0;

  static SelectionMask binary(Index n, const std::vector<Index>& selected) {
    SelectionMask m;
    m.weights = Vector::Zero(n);
    for (Index i : selected) {
      require(i >= 0 && i < n, "selected index out of range");
      m.weights[i] = 1.0;
    }
    m.budget = static_cast<Index>(m.weights.sum());
    require(m.budget == static_cast<Index>(selected.size()), "duplicate indices in selection");
    return m;
  }

  Index size() const { return weights.size(); }

  bool is_binary() const {
    return ((weights.array() == 0.0) || (weights.array() == 1.0)).all() &&
           static_cast<Index>(weights.sum()) == budget;
  }

  /// Indices with unit weight, ascending.
  std::vector<Index> selected() const {
    std::vector<Index> out;
    for (Index i = 0; i < weights.size(); ++i)
      if (weights[i] == 1.0) out.push_back(i);
    return out;
  }
};

struct SelectionResult {
  SelectionMask mask;                 // binary
  std::vector<Index> order;           // indices in the order they were added
  double objective = 0.0;             // tr of the posterior covariance of the mask
  Vector relaxed_scores;              // relaxed solution that drove the pruning
  std::vector<double> trace_history;  // objective after each greedy addition
};

/// Posterior trace when only the observations `subset` are used.
inline double subset_trace(const CovarianceSet& cov, double sigma2, const std::vector<Index>& subset) {
  if (subset.empty()) return cov.Kuu.trace();
  return fit_subset(cov, sigma2, subset).variance.sum();
}

namespace detail {

inline void check_relaxed(const Vector& z, double epsilon, Index n) {
  require(z.size() == n, "mask length does not match the observation count");
  require(epsilon > 0.0, "epsilon must be positive");
  require((z.array() >= epsilon).all(), "relaxed weights must be at least epsilon");
}

/// G = (Kyy + sigma2 Z^-2)^{-1} Kyu together with the objective value.
struct RelaxedSolve {
  double value = 0.0;
  Matrix gain;  // MW x P, filled only when requested
};

inline RelaxedSolve relaxed_solve(const CovarianceSet& cov, const Vector& z, double sigma2, bool want_gain) {
  Matrix m = cov.Kyy;
  m.diagonal().array() += sigma2 * z.array().square().inverse();
  const SpdFactor f = factorize_spd(m);
  const Matrix kyu = cov.Kuy.transpose();
  RelaxedSolve out;
  const Matrix half = f.half_solve(kyu);
  out.value = cov.Kuu.trace() - half.squaredNorm();
  if (want_gain) out.gain = f.llt.matrixU().solve(half);
  return out;
}

}  // namespace detail

/// tr(Kuu) - tr((Kyy + sigma2 Z^-2)^{-1} Kyu Kuy).
inline double phi(const CovarianceSet& cov, const Vector& z, double sigma2, double epsilon) {
  require(sigma2 > 0.0, "noise variance must be positive");
  detail::check_relaxed(z, epsilon, cov.Kyy.rows());
  return detail::relaxed_solve(cov, z, sigma2, false).value;
}

/// d phi / d z_i = -2 sigma2 z_i^-3 [M^-1 A M^-1]_ii, M = Kyy + sigma2 Z^-2, A = Kyu Kuy.
inline Vector grad_phi(const CovarianceSet& cov, const Vector& z, double sigma2, double epsilon) {
  require(sigma2 > 0.0, "noise variance must be positive");
  detail::check_relaxed(z, epsilon, cov.Kyy.rows());
  const auto s = detail::relaxed_solve(cov, z, sigma2, true);
  return (-2.0 * sigma2) * z.array().cube().inverse() * s.gain.rowwise().squaredNorm().array();
}

/// Euclidean projection onto {z : sum z = budget, epsilon <= z_i <= 1}.
/// The shift tau is bracketed by bisection and then solved exactly on the
/// free coordinates.
inline Vector project_capped_simplex(const Vector& v, double budget, double epsilon) {
  const auto n = static_cast<double>(v.size());
  require(v.size() > 0, "cannot project an empty vector");
  require(epsilon >= 0.0 && epsilon < 1.0, "epsilon must lie in [0, 1)");
  const double tol = 1e-12 * std::max(1.0, n);
  if (budget < epsilon * n - tol || budget > n + tol) {
    throw ModelError("infeasible budget for the capped simplex");
  }
  if (budget >= n - tol) return Vector::Ones(v.size());
  if (budget <= epsilon * n + tol) return Vector::Constant(v.size(), epsilon);

  auto clip = [&](double tau) { return (v.array() - tau).max(epsilon).min(1.0).matrix().eval(); };
  double lo = v.minCoeff() - 1.0;      // every coordinate at the upper bound
  double hi = v.maxCoeff() - epsilon;  // every coordinate at the lower bound
  for (int it = 0; it < 200 && hi - lo > 0.0; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (mid <= lo || mid >= hi) break;
    if (clip(mid).sum() > budget) lo = mid; else hi = mid;
  }
  double tau = 0.5 * (lo + hi);

  double free_sum = 0.0;
  double fixed_sum = 0.0;
  Index free_count = 0;
  for (Index i = 0; i < v.size(); ++i) {
    const double t = v[i] - tau;
    if (t <= epsilon) fixed_sum += epsilon;
    else if (t >= 1.0) fixed_sum += 1.0;
    else { free_sum += v[i]; ++free_count; }
  }
  if (free_count > 0) {
    const double exact = (free_sum - (budget - fixed_sum)) / static_cast<double>(free_count);
    if (exact > lo && exact < hi) tau = exact;
  }
  return clip(tau);
}

/// Armijo backtracking settings for the projected-gradient stage.
struct StepPolicy {
  double armijo = 1e-4;
  double shrink = 0.5;
  int max_halvings = 30;
};

struct RelaxedSolution {
  SelectionMask mask;
  std::vector<double> history;  // objective at the start and after each accepted step
};

/// Projected gradient on the capped simplex, starting from z = K/n.
inline RelaxedSolution projected_gradient(const CovarianceSet& cov, double sigma2, Index budget, double epsilon,
                                          int iters, const StepPolicy& policy = {}) {
  const Index n = cov.Kyy.rows();
  require(sigma2 > 0.0, "noise variance must be positive");
  require(epsilon > 0.0, "epsilon must be positive");
  Vector z = project_capped_simplex(
      Vector::Constant(n, std::clamp(static_cast<double>(budget) / static_cast<double>(n), epsilon, 1.0)),
      static_cast<double>(budget), epsilon);

  RelaxedSolution out;
  double value = phi(cov, z, sigma2, epsilon);
  out.history.push_back(value);
  for (int it = 0; it < iters; ++it) {
    const Vector g = grad_phi(cov, z, sigma2, epsilon);
    const double gmax = g.cwiseAbs().maxCoeff();
    if (!(gmax > 0.0)) break;
    double step = 1.0 / gmax;
    bool accepted = false;
    for (int h = 0; h <= policy.max_halvings; ++h, step *= policy.shrink) {
      const Vector trial = project_capped_simplex(z - step * g, static_cast<double>(budget), epsilon);
      const double decrease = g.dot(trial - z);
      if (decrease >= 0.0) continue;
      const double trial_value = phi(cov, trial, sigma2, epsilon);
      if (trial_value <= value + policy.armijo * decrease) {
        z = trial;
        value = trial_value;
        accepted = true;
        break;
      }
    }
    if (!accepted) break;
    out.history.push_back(value);
  }
  out.mask.weights = z;
  out.mask.budget = budget;
  out.mask.epsilon = epsilon;
  return out;
}

/// The ceil(rho K) indices with the largest scores (ties: smaller index), ascending.
inline std::vector<Index> prune_candidates(const Vector& scores, double rho, Index budget) {
  require(rho >= 1.0, "rho must be at least one");
  const auto keep = std::min<Index>(
      scores.size(), static_cast<Index>(std::ceil(rho * static_cast<double>(budget) - 1e-9)));
  std::vector<Index> idx = all_indices(scores.size());
  std::stable_sort(idx.begin(), idx.end(), [&](Index a, Index b) { return scores[a] > scores[b]; });
  idx.resize(static_cast<std::size_t>(keep));
  std::sort(idx.begin(), idx.end());
  return idx;
}

/// Forward greedy minimization of the posterior trace over `candidates`.
///
/// Runs a pivoted Cholesky of (K_CC + sigma2 I): each step adds one column,
/// which downdates the conditional variances and target cross-covariances of
/// the remaining candidates by a rank-one term.
inline SelectionResult greedy_select(const CovarianceSet& cov, double sigma2, const std::vector<Index>& candidates,
                                     Index budget) {
  require(sigma2 > 0.0, "noise variance must be positive");
  const auto c = static_cast<Index>(candidates.size());
  require(budget >= 0 && budget <= c, "budget exceeds the candidate count");

  Matrix cross = cov.Kuy(Eigen::all, candidates).transpose();  // c x P
  Vector cond_var = cov.Kyy.diagonal()(candidates).array() + sigma2;
  Matrix factor_cols = Matrix::Zero(c, budget);
  std::vector<bool> taken(static_cast<std::size_t>(c), false);

  SelectionResult res;
  double trace = cov.Kuu.trace();
  for (Index step = 0; step < budget; ++step) {
    Index best = -1;
    double best_gain = -1.0;
    for (Index j = 0; j < c; ++j) {
      if (taken[static_cast<std::size_t>(j)]) continue;
      const double gain = cross.row(j).squaredNorm() / cond_var[j];
      if (gain > best_gain || (gain == best_gain && candidates[static_cast<std::size_t>(j)] <
                                                        candidates[static_cast<std::size_t>(best)])) {
        best = j;
        best_gain = gain;
      }
    }
    taken[static_cast<std::size_t>(best)] = true;
    const Index s = candidates[static_cast<std::size_t>(best)];
    const double pivot = std::sqrt(cond_var[best]);

    Vector col(c);
    for (Index j = 0; j < c; ++j) {
      const double kj = cov.Kyy(candidates[static_cast<std::size_t>(j)], s);
      col[j] = (kj - factor_cols.row(j).head(step).dot(factor_cols.row(best).head(step))) / pivot;
    }
    col[best] = pivot;
    factor_cols.col(step) = col;

    const Vector target_dir = cross.row(best).transpose() / pivot;
    trace -= target_dir.squaredNorm();
    cross.noalias() -= col * target_dir.transpose();
    cond_var.array() -= col.array().square();
    cond_var = cond_var.cwiseMax(sigma2);

    res.order.push_back(s);
    res.trace_history.push_back(trace);
  }
  res.mask = SelectionMask::binary(cov.Kyy.rows(), res.order);
  res.objective = budget > 0 ? trace : cov.Kuu.trace();
  return res;
}

struct SelectOptions {
  double epsilon = 1e-9;
  double rho = 1.2;
  int iters = 100;
  StepPolicy step;
};

/// Relaxed projected gradient, pruning to ceil(rho K) candidates, exact greedy.
inline SelectionResult select(const CovarianceSet& cov, double sigma2, Index budget, const SelectOptions& opt = {}) {
  const Index n = cov.Kyy.rows();
  require(budget >= 1 && budget <= n, "budget must lie in [1, MW]");
  if (budget == n) {
    auto res = greedy_select(cov, sigma2, all_indices(n), budget);
    res.relaxed_scores = Vector::Ones(n);
    return res;
  }
  const auto relaxed = projected_gradient(cov, sigma2, budget, opt.epsilon, opt.iters, opt.step);
  const auto candidates = prune_candidates(relaxed.mask.weights, opt.rho, budget);
  auto res = greedy_select(cov, sigma2, candidates, budget);
  res.relaxed_scores = relaxed.mask.weights;
  return res;
}

/// All microphones at the most recent lags, then the remainder of the next
/// lag in microphone order. Under the flat index this is {0, ..., K-1}.
inline SelectionMask recent_selection(Index mics, Index window, Index budget) {
  require(budget >= 0 && budget <= mics * window, "budget exceeds the observation count");
  return SelectionMask::binary(mics * window, all_indices(budget));
}

/// K distinct indices drawn uniformly without replacement.
inline SelectionMask random_selection(Index n, Index budget, std::uint64_t seed) {
  require(budget >= 0 && budget <= n, "budget exceeds the observation count");
  std::mt19937_64 rng(seed);
  std::vector<Index> idx = all_indices(n);
  for (Index i = 0; i < budget; ++i) {
    std::uniform_int_distribution<Index> pick(i, n - 1);
    std::swap(idx[static_cast<std::size_t>(i)], idx[static_cast<std::size_t>(pick(rng))]);
  }
  idx.resize(static_cast<std::size_t>(budget));
  return SelectionMask::binary(n, idx);
}

/// Number of selected microphones at each lag.
inline std::vector<Index> selected_per_lag(const SelectionMask& mask, Index mics) {
  require(mics >= 1 && mask.size() % mics == 0, "mask length is not a multiple of the microphone count");
  std::vector<Index> counts(static_cast<std::size_t>(mask.size() / mics), 0);
  for (Index i = 0; i < mask.size(); ++i)
    if (mask.weights[i] == 1.0) ++counts[static_cast<std::size_t>(i / mics)];
  return counts;
}

}  // namespace stfield
