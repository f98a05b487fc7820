#include "oracles.hpp"

#include <gtest/gtest.h>

using namespace stfield;

namespace {

const Vec3 kCenter(1.5, 1.3, 1.2);

Geometry geometry(Index window = 10) {
  return Geometry{circular_array(8, 0.1, kCenter), disc_grid(0.05, 0.025, kCenter), window};
}

Matrix diffuse_signals(const Positions& pts, Index samples, std::uint64_t seed) {
  DiffuseSpec spec;
  spec.n_dirs = 200;
  spec.center = kCenter;
  spec.seed = seed;
  ExcitationSpec exc;
  exc.samples = samples;
  exc.seed = seed;
  return simulate_diffuse(spec, exc, pts, MediumParams{});
}

FreqKernelConfig config(double sigma2 = 1e-3) {
  FreqKernelConfig cfg;
  cfg.sigma2 = sigma2;
  return cfg;
}

}  // namespace

TEST(DiffuseGram, UnitDiagonalSymmetricAndSincZero) {
  const auto mics = circular_array(5, 0.1, kCenter);
  const Matrix g = diffuse_gram(mics, mics, 2.0 * std::numbers::pi * 500.0, 343.0);
  EXPECT_LT((g.diagonal() - Vector::Ones(5)).norm(), 1e-15);
  EXPECT_LT((g - g.transpose()).norm(), 1e-15);
  const double f = 1000.0;
  const Positions a{kCenter}, b{kCenter + Vec3(343.0 / (2.0 * f), 0.0, 0.0)};
  EXPECT_NEAR(diffuse_gram(a, b, 2.0 * std::numbers::pi * f, 343.0)(0, 0), 0.0, 1e-12);
  EXPECT_THROW(diffuse_gram(a, b, 0.0, 343.0), ModelError);
}

TEST(FdKrrFull, ZeroInZeroOut) {
  const auto geo = geometry();
  const auto rec = fd_krr_full(Matrix::Zero(8, 300), geo, config());
  EXPECT_EQ(rec.mean.cwiseAbs().maxCoeff(), 0.0);
}

TEST(FdKrrFull, SelfReconstructionRecoversInput) {
  Geometry geo{circular_array(8, 0.1, kCenter), circular_array(8, 0.1, kCenter), 1};
  const Matrix x = diffuse_signals(geo.mics, 1000, 3);
  const auto rec = fd_krr_full(x, geo, config(1e-6));
  // Passband content of the input: zero every bin outside [70, 1000] Hz.
  const Index total = x.cols();
  Matrix band(8, total);
  for (Index m = 0; m < 8; ++m) {
    std::vector<std::complex<double>> spec(static_cast<std::size_t>(total));
    for (Index k = 0; k < total; ++k) {
      const double f = static_cast<double>(std::min(k, total - k)) * 8000.0 / static_cast<double>(total);
      if (k == 0 || 2 * k == total || f < 70.0 || f > 1000.0) continue;
      std::complex<double> acc = 0.0;
      for (Index t = 0; t < total; ++t) acc += x(m, t) * std::polar(1.0, -2.0 * std::numbers::pi * k * t / total);
      spec[static_cast<std::size_t>(k)] = acc;
    }
    for (Index t = 0; t < total; ++t) {
      std::complex<double> acc = 0.0;
      for (Index k = 0; k < total; ++k)
        acc += spec[static_cast<std::size_t>(k)] * std::polar(1.0, 2.0 * std::numbers::pi * k * t / total);
      band(m, t) = acc.real() / static_cast<double>(total);
    }
  }
  EXPECT_LT(nmse_db(rec.mean, band, 0), -20.0);
}

TEST(FdKrrFull, ImaginaryResidueIsRounding) {
  const auto geo = geometry();
  const Matrix x = diffuse_signals(geo.mics, 500, 4);
  const CMatrix out = fd_krr_full_complex(x, geo, config());
  EXPECT_LT(out.imag().norm(), 1e-10 * out.real().norm());
}

TEST(FdKrrWindowed, FirBankMatchesLiteralWindowedDft) {
  const auto geo = geometry();
  const Matrix x = diffuse_signals(geo.mics, 200, 5);
  for (bool causal : {true, false}) {
    for (Index w : {2, 7, 10, 32}) {
      const auto rec = fd_krr_windowed(x, geo, config(), w, causal);
      for (Index n : {rec.first_valid, (rec.first_valid + rec.end_valid) / 2, rec.end_valid - 1}) {
        const CVector want = fd_krr_window_direct(x, geo, config(), w, causal, n);
        EXPECT_LT((rec.mean.col(n) - want.real()).norm(), 1e-10 * std::max(1.0, want.norm()))
            << (causal ? "causal" : "noncausal") << " W=" << w << " n=" << n;
        EXPECT_LT(want.imag().norm(), 1e-10 * std::max(1e-3, want.norm()));
      }
    }
  }
}

TEST(FdKrrWindowed, ValidRangeAndWarmUp) {
  const auto geo = geometry();
  const Matrix x = Matrix::Ones(8, 50);
  const auto causal = fd_krr_windowed(x, geo, config(), 10, true);
  EXPECT_EQ(causal.first_valid, 9);
  EXPECT_EQ(causal.end_valid, 50);
  EXPECT_TRUE(causal.mean.col(8).array().isNaN().all());
  const auto centred = fd_krr_windowed(x, geo, config(), 10, false);
  EXPECT_EQ(centred.first_valid, 9);
  EXPECT_EQ(centred.end_valid, 41);
  EXPECT_THROW(fd_krr_windowed(x, geo, config(), 1, true), ModelError);
}

TEST(FdKrrWindowed, ConvergesToFullRecordAsWindowGrows) {
  // Centred window. Gap: windowed NMSE minus full-record NMSE against the
  // true field, over the windowed method's valid samples.
  const auto geo = geometry();
  const Index total = 1200;
  Positions all = geo.mics;
  all.insert(all.end(), geo.targets.begin(), geo.targets.end());
  const Matrix field = diffuse_signals(all, total, 6);
  const Matrix x = field.topRows(8);
  const Matrix truth = field.bottomRows(geo.num_targets());
  const Matrix full = fd_krr_full(x, geo, config()).mean;
  double prev = std::numeric_limits<double>::infinity();
  for (Index w : {10, 50, 200, 400}) {
    const auto rec = fd_krr_windowed(x, geo, config(), w, false);
    const double gap = nmse_db_range(rec.mean, truth, rec.first_valid, rec.end_valid) -
                       nmse_db_range(full, truth, rec.first_valid, rec.end_valid);
    EXPECT_LT(gap, prev) << "W=" << w;
    prev = gap;
  }
  EXPECT_LT(std::abs(prev), 1.0);
}

TEST(FdKrrTrunc, FullLengthBankIsCircularFullRecordFilter) {
  const auto geo = geometry();
  const Index grid = 120;
  const Matrix x = diffuse_signals(geo.mics, grid, 7);
  Matrix periodic(8, 2 * grid);
  periodic << x, x;
  const auto bank = fd_krr_trunc(geo, config(), grid, grid);
  const auto rec = apply_filter_bank(bank, periodic);
  const Matrix full = fd_krr_full(x, geo, config()).mean;
  EXPECT_LT((rec.mean.rightCols(grid) - full).norm(), 1e-8 * full.norm());
}

TEST(FdKrrTrunc, KeepsOnlyCausalTaps) {
  const auto geo = geometry();
  const auto long_bank = fd_krr_trunc(geo, config(), 256, 64);
  const auto short_bank = fd_krr_trunc(geo, config(), 256, 10);
  EXPECT_EQ(short_bank.first_lag, 0);
  EXPECT_EQ(short_bank.length, 10);
  EXPECT_LT((long_bank.taps.leftCols(80) - short_bank.taps).norm(), 1e-14);
  EXPECT_THROW(fd_krr_trunc(geo, config(), 8, 10), ModelError);
}

TEST(FdKrrTrunc, NoBinsInBandGivesZeroTaps) {
  FreqKernelConfig cfg = config();
  cfg.f_lo = 70.0;
  cfg.f_hi = 80.0;
  const auto bank = fd_krr_trunc(geometry(), cfg, 16, 4);  // bin spacing 500 Hz
  EXPECT_EQ(bank.taps.cwiseAbs().maxCoeff(), 0.0);
}

TEST(Spatial, EqualsWindowOneEstimator) {
  const auto geo = geometry();
  const auto model = KernelModel::make(MediumParams{}, SourceSpectrum::from_hz(70.0, 1000.0), 5.0, 300, kCenter);
  const Matrix x = diffuse_signals(geo.mics, 100, 8);
  const auto rec = spatial_baseline(x, geo, model, 1e-3);
  const auto g1 = geo.with_window(1);
  const auto want = reconstruct_stream(fit(build_covariance_set(model, g1), 1e-3), x, g1);
  EXPECT_EQ((rec.mean - want.mean).norm(), 0.0);
  EXPECT_EQ(spatial_baseline(Matrix::Zero(8, 20), geo, model, 1e-3).mean.cwiseAbs().maxCoeff(), 0.0);
}

TEST(Baselines, AreLinear) {
  const auto geo = geometry();
  const auto model = KernelModel::make(MediumParams{}, SourceSpectrum::from_hz(70.0, 1000.0), 5.0, 200, kCenter);
  std::mt19937_64 rng(12);
  std::normal_distribution<double> n(0.0, 1.0);
  Matrix y1(8, 150), y2(8, 150);
  for (Index i = 0; i < y1.size(); ++i) {
    y1.data()[i] = n(rng);
    y2.data()[i] = n(rng);
  }
  const double a = 0.7, b = -1.9;
  const Matrix mix = a * y1 + b * y2;
  const auto check = [&](auto&& f, const char* name) {
    const Matrix lhs = f(mix);
    const Matrix rhs = a * f(y1) + b * f(y2);
    const auto cols = lhs.array().isNaN().colwise().any();
    double err = 0.0, ref = 0.0;
    for (Index j = 0; j < lhs.cols(); ++j) {
      if (cols[j]) continue;
      err += (lhs.col(j) - rhs.col(j)).squaredNorm();
      ref += rhs.col(j).squaredNorm();
    }
    EXPECT_LT(std::sqrt(err), 1e-10 * std::sqrt(ref)) << name;
  };
  const auto cfg = config();
  check([&](const Matrix& y) { return fd_krr_full(y, geo, cfg).mean; }, "full");
  check([&](const Matrix& y) { return fd_krr_windowed(y, geo, cfg, 10, true).mean; }, "causal");
  check([&](const Matrix& y) { return fd_krr_windowed(y, geo, cfg, 10, false).mean; }, "noncausal");
  const auto bank = fd_krr_trunc(geo, cfg, 150, 10);
  check([&](const Matrix& y) { return apply_filter_bank(bank, y).mean; }, "trunc");
  check([&](const Matrix& y) { return spatial_baseline(y, geo, model, 1e-3).mean; }, "spatial");
}
