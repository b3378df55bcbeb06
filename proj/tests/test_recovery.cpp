#include <gtest/gtest.h>

#include "airfl/recovery.hpp"
#include "golden_values.hpp"

using namespace airfl;

namespace {

// Posterior moments by direct integration: the inactive atom at 0 plus the
// active Gaussian component integrated with composite Simpson.
Posterior posterior_by_quadrature(double r, double tau2, const SignalPrior& p) {
  const double sx = std::sqrt(p.var);
  const int n = 200000;
  const double lo = -12 * sx + 0.0 * r, hi = 12 * sx;
  const double h = (hi - lo) / n;
  double z = 0, m1 = 0, m2 = 0;
  for (int i = 0; i <= n; ++i) {
    const double x = lo + i * h;
    const double w = (i == 0 || i == n) ? 1 : (i % 2 ? 4 : 2);
    const double f = std::exp(-0.5 * x * x / p.var - 0.5 * (r - x) * (r - x) / tau2);
    z += w * f;
    m1 += w * f * x;
    m2 += w * f * x * x;
  }
  const double c = p.rho / std::sqrt(2 * M_PI * p.var) * h / 3;
  z *= c, m1 *= c, m2 *= c;
  const double atom = (1 - p.rho) * std::exp(-0.5 * r * r / tau2);
  const double Z = z + atom;
  const double mean = m1 / Z;
  return {mean, m2 / Z - mean * mean};
}

Vector bg_signal(Rng& rng, Eigen::Index d, const SignalPrior& p) {
  std::bernoulli_distribution active(p.rho);
  std::normal_distribution<double> nd(0.0, std::sqrt(p.var));
  Vector x(d);
  for (Eigen::Index i = 0; i < d; ++i) x[i] = active(rng) ? nd(rng) : 0.0;
  return x;
}

}  // namespace

TEST(Denoiser, MatchesDirectQuadrature) {
  const SignalPrior p{0.1, 2.0};
  for (double tau2 : {0.01, 0.3, 2.0})
    for (double r : {-3.0, -0.4, 0.0, 0.05, 1.0, 5.0}) {
      const Posterior a = bg_mmse_denoiser(r, tau2, p);
      const Posterior b = posterior_by_quadrature(r, tau2, p);
      EXPECT_NEAR(a.mean, b.mean, 1e-8 * std::max(1.0, std::abs(b.mean))) << r << " " << tau2;
      EXPECT_NEAR(a.var, b.var, 1e-8 * std::max(1.0, b.var)) << r << " " << tau2;
    }
}

TEST(Denoiser, DenseGaussianLimit) {
  const SignalPrior p{1.0, 4.0};
  const Posterior q = bg_mmse_denoiser(2.0, 1.0, p);
  EXPECT_NEAR(q.mean, 1.6, 1e-15);
  EXPECT_NEAR(q.var, 0.8, 1e-15);
}

TEST(Denoiser, ExtremeInputsStayFinite) {
  const SignalPrior p{0.1, 1e-6};
  for (double r : {0.0, 1e-3, 1.0, 1e3}) {
    const Posterior q = bg_mmse_denoiser(r, 1e-12, p);
    EXPECT_TRUE(std::isfinite(q.mean) && std::isfinite(q.var));
  }
  EXPECT_THROW(bg_mmse_denoiser(1.0, 0.0, p), ConfigError);
}

TEST(Mmse, MatchesIndependentReference) {
  const double d = 25818, P = 2e-5 * d;
  const SignalPrior p{0.1, P / d};
  for (std::size_t i = 0; i < std::size(golden::kMmseTau2); ++i)
    EXPECT_NEAR(bg_mmse(golden::kMmseTau2[i], p), golden::kMmseValue[i], 1e-9 * golden::kMmseValue[i]);
}

TEST(Mmse, MonotoneAndBounded) {
  const SignalPrior p{0.2, 1.0};
  double prev = 0.0;
  for (double tau2 = 1e-4; tau2 < 1e3; tau2 *= 3) {
    const double m = bg_mmse(tau2, p);
    EXPECT_GE(m, prev - 1e-14);
    EXPECT_LE(m, std::min(tau2, p.second_moment()) + 1e-12);
    prev = m;
  }
}

TEST(StateEvolution, MatchesIndependentReference) {
  const double d = 25818, P = 2e-5 * d;
  const double sigma2 = P / d / 1000.0;
  const SignalPrior p{0.1, P / d};
  for (std::size_t i = 0; i < std::size(golden::kSweepMd); ++i) {
    const double v = state_evolution(golden::kSweepMd[i], sigma2, p, 20).final_v();
    EXPECT_NEAR(v, golden::kSweepSeV[i], 1e-7 * golden::kSweepSeV[i]) << golden::kSweepMd[i];
  }
}

TEST(StateEvolution, NoiselessFullMeasurementIsExact) {
  const auto tr = state_evolution(1.0, 0.0, SignalPrior{0.1, 1.0}, 5);
  EXPECT_EQ(tr.final_v(), 0.0);
}

TEST(StateEvolution, MoreMeasurementsNeverHurt) {
  const SignalPrior p{0.1, 1.0};
  double prev = INFINITY;
  for (double delta : {0.2, 0.3, 0.45, 0.6, 0.8, 1.0}) {
    const double v = state_evolution(delta, 1e-3, p, 30).final_v();
    EXPECT_LE(v, prev * (1 + 1e-9));
    prev = v;
  }
}

TEST(StateEvolution, RejectsBadArguments) {
  const SignalPrior p;
  EXPECT_THROW(state_evolution(0.0, 0.1, p, 5), ConfigError);
  EXPECT_THROW(state_evolution(1.5, 0.1, p, 5), ConfigError);
  EXPECT_THROW(state_evolution(0.5, -1.0, p, 5), ConfigError);
  EXPECT_THROW(state_evolution(0.5, 0.1, p, 0), ConfigError);
}

TEST(Oamp, TracksStateEvolutionAtModerateSize) {
  const Eigen::Index d = 1024, M = 614;
  const SignalPrior p{0.1, 1.0};
  const double sigma2 = 1e-3;
  EstimatorConfig cfg{EstimatorKind::oamp, p, 20, 1.0};
  double mse = 0;
  const int trials = 4;
  for (int s = 0; s < trials; ++s) {
    Rng rng = make_rng(s, Stream::probe);
    const Vector x = bg_signal(rng, d, p);
    const ProjectionMatrix A = gen_projection(M, d, ProjectionKind::dct, s);
    const Vector y = A.apply(x) + gaussian_vector(rng, M, std::sqrt(sigma2));
    const RecoveryResult r = estimate(y, A, cfg, sigma2);
    mse += (r.x_hat - x).squaredNorm() / d;
  }
  mse /= trials;
  const double se = debiased_variance(state_evolution(static_cast<double>(M) / d, sigma2, p, 20).final_v(),
                                      p.second_moment());
  EXPECT_NEAR(mse / se, 1.0, 0.25);
}

TEST(Oamp, DebiasRemovesErrorSignalCorrelation) {
  const Eigen::Index d = 1024, M = 410;
  const SignalPrior p{0.1, 1.0};
  const double sigma2 = 1e-2;
  EstimatorConfig cfg{EstimatorKind::oamp, p, 20, 1.0};
  Rng rng = make_rng(7, Stream::probe);
  const Vector x = bg_signal(rng, d, p);
  const ProjectionMatrix A = gen_projection(M, d, ProjectionKind::dct, 7);
  const Vector y = A.apply(x) + gaussian_vector(rng, M, std::sqrt(sigma2));
  auto corr = [&](const Vector& xh) {
    const Vector e = xh - x;
    return e.dot(x) / (e.norm() * x.norm());
  };
  const RecoveryResult deb = estimate(y, A, cfg, sigma2);
  cfg.debias = false;
  const RecoveryResult post = estimate(y, A, cfg, sigma2);
  EXPECT_LT(corr(post.x_hat), -0.1);
  EXPECT_LT(std::abs(corr(deb.x_hat)), 0.1);
  const double c = 1.0 + post.v_hat * d / post.x_hat.squaredNorm();
  EXPECT_LT((deb.x_hat - c * post.x_hat).norm(), 1e-12 * deb.x_hat.norm());
  EXPECT_DOUBLE_EQ(deb.v_hat, c * post.v_hat);
}

TEST(Oamp, DebiasedVariance) {
  EXPECT_DOUBLE_EQ(debiased_variance(0.25, 1.0), 0.25 / 0.75);
  EXPECT_EQ(debiased_variance(0.0, 1.0), 0.0);
  EXPECT_EQ(debiased_variance(2.0, 1.0), 2.0);
}

TEST(Oamp, NoiselessSquareSystemRecoversExactly) {
  const Eigen::Index d = 64;
  Rng rng(3);
  const Vector x = gaussian_vector(rng, d);
  const ProjectionMatrix A = gen_projection(d, d, ProjectionKind::random_orthonormal, 1);
  const RecoveryResult r = estimate(A.apply(x), A, EstimatorConfig{EstimatorKind::oamp, {0.1, 1.0}, 20, 1.0}, 0.0);
  EXPECT_LT((r.x_hat - x).norm(), 1e-10);
}

TEST(Estimators, IdentityAndLmmseClosedForms) {
  const ProjectionMatrix A = ProjectionMatrix::identity(4);
  Vector y(4);
  y << 1, 2, 3, 4;
  const RecoveryResult id = estimate(y, A, EstimatorConfig{EstimatorKind::identity, {}, 1, 1.0}, 0.5);
  EXPECT_EQ(id.x_hat, y);
  EXPECT_EQ(id.v_hat, 0.5);
  const SignalPrior p{0.5, 2.0};  // second moment 1
  const RecoveryResult lm = estimate(y, A, EstimatorConfig{EstimatorKind::lmmse, p, 1, 1.0}, 1.0);
  EXPECT_LT((lm.x_hat - 0.5 * y).norm(), 1e-15);
  EXPECT_NEAR(lm.v_hat, 0.5, 1e-15);
}

TEST(Estimators, ShapeErrors) {
  const ProjectionMatrix A = gen_projection(3, 4, ProjectionKind::dct, 0);
  EXPECT_THROW(estimate(Vector::Zero(4), A, EstimatorConfig{}, 0.1), ConfigError);
  EXPECT_THROW(estimate(Vector::Zero(3), A, EstimatorConfig{EstimatorKind::identity, {}, 1, 1.0}, 0.1), ConfigError);
}

TEST(Estimators, VseqForBound) {
  EstimatorConfig cfg{EstimatorKind::identity, {0.1, 1.0}, 20, 1.0};
  EXPECT_EQ(vseq_for_bound(3, 0.2, 1.0, cfg), (std::vector<double>{0.2, 0.2, 0.2}));
  cfg.kind = EstimatorKind::oamp;
  const auto v = vseq_for_bound(2, 1e-3, 0.5, cfg);
  const double vp = state_evolution(0.5, 1e-3, cfg.prior, 20).final_v();
  EXPECT_DOUBLE_EQ(v[0], debiased_variance(vp, cfg.prior.second_moment()));
  cfg.debias = false;
  EXPECT_DOUBLE_EQ(vseq_for_bound(2, 1e-3, 0.5, cfg)[1], vp);
}

TEST(SETrace, CsvHeader) {
  const auto tr = state_evolution(0.5, 1e-2, SignalPrior{0.1, 1.0}, 3);
  const auto path = std::string(::testing::TempDir()) + "se.csv";
  tr.write_csv(path);
  std::ifstream in(path);
  std::string header;
  std::getline(in, header);
  EXPECT_EQ(header, "iteration,v");
}
