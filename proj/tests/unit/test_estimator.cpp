#include "oracles.hpp"

#include <gtest/gtest.h>

using namespace stfield;

namespace {

const Vec3 kCenter(1.5, 1.3, 1.2);

KernelModel model(Index nodes = 400) {
  return KernelModel::make(MediumParams{}, SourceSpectrum::from_hz(70.0, 1000.0), 5.0, nodes, kCenter);
}

Geometry small_geometry(Index window) {
  return Geometry{circular_array(4, 0.1, kCenter), disc_grid(0.03, 0.015, kCenter), window};
}

Matrix explicit_inverse(Matrix a) { return Eigen::FullPivLU<Matrix>(a).inverse(); }

}  // namespace

TEST(Posterior, MeanMatchesExplicitInverse) {
  const auto geo = small_geometry(3);
  const auto cov = build_covariance_set(model(), geo);
  const double s2 = 1e-3;
  const auto post = fit(cov, s2);
  Matrix k = cov.Kyy;
  k.diagonal().array() += s2;
  const Matrix want = cov.Kuy * explicit_inverse(k);
  EXPECT_LT((post.filter - want).norm(), 1e-8 * want.norm());

  std::mt19937_64 rng(1);
  std::normal_distribution<double> n(0.0, 1.0);
  Vector y(geo.num_observations());
  for (Index i = 0; i < y.size(); ++i) y[i] = n(rng);
  EXPECT_LT((posterior_mean(post, y) - want * y).norm(), 1e-8 * (want * y).norm());
}

TEST(Posterior, CovarianceIsPsdAndBelowPrior) {
  const auto cov = build_covariance_set(model(), small_geometry(4));
  const auto post = fit(cov, 1e-4);
  const Matrix pc = posterior_cov(cov, post);
  EXPECT_LT((pc - pc.transpose()).norm(), 1e-15);
  Eigen::SelfAdjointEigenSolver<Matrix> es(pc);
  EXPECT_GE(es.eigenvalues().minCoeff(), -1e-10 * cov.Kuu.trace());
  for (Index p = 0; p < pc.rows(); ++p) {
    EXPECT_LE(pc(p, p), cov.Kuu(p, p) + 1e-15);
    EXPECT_NEAR(pc(p, p), post.variance[p], 1e-12);
  }
}

TEST(Posterior, MaskedIdentity) {
  std::mt19937_64 rng(13);
  std::uniform_real_distribution<double> u(0.1, 1.0);
  const auto cov = build_covariance_set(model(), small_geometry(5));
  const Index n = cov.Kyy.rows();
  const double s2 = 1e-3;
  for (int t = 0; t < 10; ++t) {
    Vector z(n);
    for (Index i = 0; i < n; ++i) z[i] = u(rng);
    Matrix a = z.asDiagonal() * cov.Kyy * z.asDiagonal();
    a.diagonal().array() += s2;
    const Matrix lhs = z.asDiagonal() * explicit_inverse(a) * z.asDiagonal();
    Matrix b = cov.Kyy;
    b.diagonal().array() += s2 * z.array().square().inverse();
    const Matrix rhs = explicit_inverse(b);
    EXPECT_LT((lhs - rhs).norm() / rhs.norm(), 1e-8);
  }
}

TEST(Posterior, MaskedWithUnitWeightsEqualsFullPosterior) {
  const auto cov = build_covariance_set(model(), small_geometry(3));
  const auto post = fit(cov, 1e-3);
  const Matrix masked = masked_posterior_cov(cov, Vector::Ones(cov.Kyy.rows()), 1e-3);
  EXPECT_LT((masked - posterior_cov(cov, post)).norm(), 1e-12);
}

TEST(Posterior, SubsetOrderDoesNotMatter) {
  const auto cov = build_covariance_set(model(), small_geometry(3));
  const auto a = fit_subset(cov, 1e-3, {7, 1, 4, 10});
  const auto b = fit_subset(cov, 1e-3, {1, 4, 7, 10});
  EXPECT_LT((a.variance - b.variance).norm(), 1e-14);
  Vector y = Vector::LinSpaced(12, -1.0, 1.0);
  EXPECT_LT((posterior_mean(a, y) - posterior_mean(b, y)).norm(), 1e-12);
}

TEST(Posterior, CalibratedOnPriorDraws) {
  // Jointly sample (u, y) from the prior; the empirical error variance must
  // track the posterior variance.
  const auto geo = small_geometry(3);
  const auto cov = build_covariance_set(model(), geo);
  const double s2 = 1e-3;
  const Index P = cov.Kuu.rows(), N = cov.Kyy.rows();
  Matrix joint(P + N, P + N);
  joint << cov.Kuu, cov.Kuy, cov.Kuy.transpose(), cov.Kyy;
  std::mt19937_64 rng(99);
  const Index draws = 4000;
  const Matrix x = oracle::gaussian_draws(joint, draws, rng);
  std::normal_distribution<double> noise(0.0, std::sqrt(s2));
  Matrix y = x.bottomRows(N);
  for (Index j = 0; j < draws; ++j)
    for (Index i = 0; i < N; ++i) y(i, j) += noise(rng);
  const auto post = fit(cov, s2);
  const Matrix err = post.filter * y - x.topRows(P);
  const Vector emp = err.rowwise().squaredNorm() / static_cast<double>(draws);
  for (Index p = 0; p < P; ++p) {
    const double ratio = emp[p] / post.variance[p];
    EXPECT_GT(ratio, 0.85);
    EXPECT_LT(ratio, 1.15);
  }
}

TEST(Factorization, JitterEscalatesForSingularMatrix) {
  Matrix a = Matrix::Ones(4, 4);  // rank one
  const auto f = factorize_spd(a);
  EXPECT_GT(f.jitter, 0.0);
  EXPECT_LE(f.jitter, 1e-6 * a.trace() / 4.0 * (1 + 1e-12));
  EXPECT_LT((f.reconstructed() - a).norm(), 1e-5);
}

TEST(Factorization, NoJitterWhenDefinite) {
  const auto f = factorize_spd(Matrix::Identity(5, 5) * 2.0);
  EXPECT_EQ(f.jitter, 0.0);
}

TEST(Factorization, IndefiniteMatrixReportsLastJitter) {
  Matrix a = Matrix::Identity(3, 3);
  a(2, 2) = -1.0;
  try {
    factorize_spd(a);
    FAIL() << "expected FactorizationError";
  } catch (const FactorizationError& e) {
    EXPECT_NEAR(e.jitter(), 1e-6 * a.trace() / 3.0, 1e-18);
  }
}

TEST(Stream, WarmUpSamplesAreFlagged) {
  const auto geo = small_geometry(5);
  const auto cov = build_covariance_set(model(), geo);
  const auto post = fit(cov, 1e-3);
  std::mt19937_64 rng(2);
  std::normal_distribution<double> n(0.0, 1.0);
  Matrix x(geo.num_mics(), 40);
  for (Index i = 0; i < x.size(); ++i) x.data()[i] = n(rng);
  const auto rec = reconstruct_stream(post, x, geo);
  EXPECT_EQ(rec.first_valid, 4);
  for (Index t = 0; t < 4; ++t) EXPECT_TRUE(rec.mean.col(t).array().isNaN().all());
  for (Index t = 4; t < 40; ++t) {
    const Vector want = posterior_mean(post, stack_window(x, t, 5));
    EXPECT_LT((rec.mean.col(t) - want).norm(), 1e-12);
  }
}

TEST(Stream, SubsetSupportGathersTheRightSamples) {
  const auto geo = small_geometry(4);
  const auto cov = build_covariance_set(model(), geo);
  const auto post = fit_subset(cov, 1e-3, {13, 0, 6});
  Matrix x = Matrix::Random(geo.num_mics(), 20);
  const auto rec = reconstruct_stream(post, x, geo);
  for (Index t = 3; t < 20; ++t) {
    const Vector y = stack_window(x, t, 4);
    EXPECT_LT((rec.mean.col(t) - posterior_mean(post, y)).norm(), 1e-12);
  }
}

TEST(Stream, RejectsMismatchedInputs) {
  const auto geo = small_geometry(3);
  const auto post = fit(build_covariance_set(model(), geo), 1e-3);
  EXPECT_THROW(reconstruct_stream(post, Matrix::Zero(3, 10), geo), ModelError);
  EXPECT_THROW(reconstruct_stream(post, Matrix::Zero(4, 2), geo), ModelError);
  EXPECT_THROW(fit(build_covariance_set(model(), geo), 0.0), ModelError);
}
