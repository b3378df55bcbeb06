// Randomized invariant checks. Each property draws its cases from a seeded
// generator and reports the failing case index, so failures reproduce.

#include <gtest/gtest.h>

#include "airfl/bound.hpp"
#include "airfl/channel.hpp"
#include "airfl/compression.hpp"
#include "airfl/protocol.hpp"
#include "airfl/recovery.hpp"

using namespace airfl;

namespace {

struct Gen {
  Rng rng;
  explicit Gen(std::uint64_t seed) : rng(make_rng(seed, Stream::probe, 0xBEEF)) {}

  int integer(int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); }
  double uniform(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); }
  double log_uniform(double lo, double hi) { return std::exp(uniform(std::log(lo), std::log(hi))); }

  // Mix of shapes: gaussian, heavy-tailed, sparse, quantized (many ties), constant.
  Vector vector(Eigen::Index d) {
    Vector v(d);
    const int shape = integer(0, 4);
    std::normal_distribution<double> nd;
    std::cauchy_distribution<double> cd;
    for (Eigen::Index i = 0; i < d; ++i) {
      switch (shape) {
        case 0: v[i] = nd(rng); break;
        case 1: v[i] = cd(rng); break;
        case 2: v[i] = uniform(0, 1) < 0.1 ? nd(rng) : 0.0; break;
        case 3: v[i] = std::round(2 * nd(rng)); break;
        default: v[i] = uniform(0, 1) < 0.5 ? 1.0 : -1.0; break;
      }
    }
    return v * log_uniform(1e-6, 1e6);
  }
};

constexpr int kCases = 300;

}  // namespace

TEST(Property, TopKContraction) {
  Gen g(1);
  for (int c = 0; c < kCases; ++c) {
    const Eigen::Index d = g.integer(1, 300);
    const Eigen::Index k = g.integer(1, static_cast<int>(d));
    const Vector x = g.vector(d);
    const Vector t = top_k(x, k);
    const double lambda = static_cast<double>(k) / d;
    ASSERT_LE((x - t).squaredNorm(), (1 - lambda) * x.squaredNorm() * (1 + 1e-12) + 1e-300) << "case " << c;
  }
}

TEST(Property, TopKSupportIsLargestMagnitudes) {
  Gen g(2);
  for (int c = 0; c < kCases; ++c) {
    const Eigen::Index d = g.integer(1, 200);
    const Eigen::Index k = g.integer(1, static_cast<int>(d));
    const Vector x = g.vector(d);
    const Vector t = top_k(x, k);
    double min_kept = INFINITY, max_dropped = 0;
    int kept = 0;
    for (Eigen::Index i = 0; i < d; ++i) {
      if (t[i] != 0.0) {
        ASSERT_EQ(t[i], x[i]);
        min_kept = std::min(min_kept, std::abs(x[i]));
        ++kept;
      } else {
        max_dropped = std::max(max_dropped, std::abs(x[i]));
      }
    }
    ASSERT_LE(kept, k);
    if (kept > 0) ASSERT_GE(min_kept, max_dropped) << "case " << c;
  }
}

TEST(Property, ClipRespectsBudgetAndDirection) {
  Gen g(3);
  for (int c = 0; c < kCases; ++c) {
    const Vector x = g.vector(g.integer(1, 100));
    const double sqrtP = g.log_uniform(1e-4, 1e4);
    const Vector y = clip(x, sqrtP);
    ASSERT_LE(y.norm(), sqrtP * (1 + 1e-12)) << "case " << c;
    const double a = clip_scale(x, sqrtP);
    ASSERT_GT(a, 0.0);
    ASSERT_LE(a, 1.0);
    ASSERT_LT((y - a * x).norm(), 1e-12 * std::max(1.0, y.norm()));
    ASSERT_LT((clip(y, sqrtP) - y).norm(), 1e-12 * std::max(1.0, y.norm()));  // idempotent
  }
}

TEST(Property, ErrorFeedbackTelescopes) {
  Gen g(4);
  for (int c = 0; c < 50; ++c) {
    const Eigen::Index d = g.integer(2, 64);
    const Eigen::Index k = g.integer(1, static_cast<int>(d));
    Vector m = Vector::Zero(d), sum_g = Vector::Zero(d), sum_delta = Vector::Zero(d);
    for (int t = 0; t < 20; ++t) {
      const Vector delta = g.vector(d) / std::max(1.0, g.vector(d).norm());
      const Vector gt = top_k(m + delta, k);
      m = memory_update(m, delta, gt);
      sum_g += gt;
      sum_delta += delta;
    }
    ASSERT_LT((sum_g + m - sum_delta).norm(), 1e-9 * std::max(1.0, sum_delta.norm())) << "case " << c;
  }
}

TEST(Property, ProjectionsArePartialOrthogonal) {
  Gen g(5);
  for (int c = 0; c < 40; ++c) {
    const int kind = g.integer(0, 2);
    Eigen::Index d = g.integer(2, 96);
    ProjectionKind pk = ProjectionKind::random_orthonormal;
    if (kind == 1) pk = ProjectionKind::dct;
    if (kind == 2) pk = ProjectionKind::hadamard, d = Eigen::Index{1} << g.integer(1, 6);
    const Eigen::Index M = g.integer(1, static_cast<int>(d));
    const Matrix A = gen_projection(M, d, pk, static_cast<std::uint64_t>(c)).dense();
    ASSERT_LT((A * A.transpose() - Matrix::Identity(M, M)).cwiseAbs().maxCoeff(), 1e-10)
        << "case " << c << " " << to_string(pk) << " M=" << M << " d=" << d;
  }
}

TEST(Property, NoiselessChannelIsLinear) {
  Gen g(6);
  for (int c = 0; c < 100; ++c) {
    const Eigen::Index M = g.integer(1, 50);
    const int R = g.integer(1, 8);
    std::vector<Vector> xs;
    Vector sum = Vector::Zero(M);
    double maxp = 0;
    for (int i = 0; i < R; ++i) {
      xs.push_back(g.vector(M));
      sum += xs.back();
      maxp = std::max(maxp, xs.back().squaredNorm());
    }
    ChannelConfig cfg{M, 0.0, std::max(maxp, 1e-300), M};
    ASSERT_LT((mac_transmit(xs, cfg, NoiseSource{1}, 0) - sum).norm(), 1e-9 * std::max(1.0, sum.norm()));
  }
}

TEST(Property, DenoiserShrinksAndIsOdd) {
  Gen g(7);
  for (int c = 0; c < 2000; ++c) {
    const SignalPrior p{g.uniform(0.01, 1.0), g.log_uniform(1e-6, 1e3)};
    const double tau2 = g.log_uniform(1e-8, 1e3);
    const double r = g.uniform(-10, 10) * std::sqrt(p.var + tau2);
    const Posterior a = bg_mmse_denoiser(r, tau2, p);
    const Posterior b = bg_mmse_denoiser(-r, tau2, p);
    ASSERT_NEAR(a.mean, -b.mean, 1e-12 * std::abs(r) + 1e-300);
    ASSERT_GE(a.var, 0.0);
    ASSERT_LE(std::abs(a.mean), std::abs(r) * (1 + 1e-12));
    ASSERT_LE(a.var, std::max(tau2, p.var) * (1 + 1e-9) + p.var) << "case " << c;
  }
}

TEST(Property, DenoiserMeanMonotoneInObservation) {
  Gen g(8);
  for (int c = 0; c < 200; ++c) {
    const SignalPrior p{g.uniform(0.01, 1.0), g.log_uniform(1e-3, 1e3)};
    const double tau2 = g.log_uniform(1e-4, 1e2);
    double prev = -INFINITY;
    for (double z = -8; z <= 8; z += 0.05) {
      const double m = bg_mmse_denoiser(z * std::sqrt(p.var + tau2), tau2, p).mean;
      ASSERT_GE(m, prev - 1e-12 * std::abs(prev)) << "case " << c;
      prev = m;
    }
  }
}

TEST(Property, StateEvolutionMonotoneInNoise) {
  Gen g(9);
  for (int c = 0; c < 30; ++c) {
    const SignalPrior p{g.uniform(0.05, 0.3), 1.0};
    const double delta = g.uniform(0.2, 1.0);
    const double s1 = g.log_uniform(1e-5, 1e-1);
    const double s2 = s1 * g.uniform(1.5, 10);
    ASSERT_LE(state_evolution(delta, s1, p, 30).final_v(), state_evolution(delta, s2, p, 30).final_v() * (1 + 1e-9))
        << "case " << c;
  }
}

TEST(Property, ScheduleSumInequalities) {
  Gen g(10);
  for (int c = 0; c < 200; ++c) {
    const double xi = g.log_uniform(1e-3, 1e3);
    const double a = g.uniform(1.01, 1e4);
    const int T = g.integer(1, 5000);
    const auto r = check_schedule(xi, a, 1, 1.0, 0.0, T);
    ASSERT_TRUE(r.sums_ok) << "case " << c;
    const auto pt = compute_PT(xi, a, T);
    ASSERT_GE(pt.sum, pt.lower * (1 - 1e-12)) << "case " << c;
  }
}

TEST(Property, BoundMonotoneInInputs) {
  Gen g(11);
  for (int c = 0; c < 200; ++c) {
    BoundInputs in;
    in.L = g.log_uniform(0.1, 100);
    in.G = g.log_uniform(0.1, 100);
    in.sigma_l2 = g.log_uniform(1e-3, 10);
    in.sigma_g2 = g.log_uniform(1e-3, 10);
    in.f0_minus_fstar = g.log_uniform(1e-2, 10);
    in.xi = g.log_uniform(1e-2, 10);
    in.Q = g.integer(1, 4);
    in.lambda = g.uniform(0.05, 1.0);
    in.a = 4.0 * in.Q / in.lambda * g.uniform(1.01, 10) + 1.0;
    in.T = g.integer(1, 200);
    in.R = g.integer(1, 30);
    in.d = g.integer(1, 10000);
    in.P = g.log_uniform(1e-3, 10);
    in.vseq.assign(static_cast<std::size_t>(in.T), g.log_uniform(1e-9, 1e-2));
    const double base = eval_bound(in).total;
    ASSERT_TRUE(std::isfinite(base) && base > 0) << "case " << c;
    BoundInputs more = in;
    for (double& v : more.vseq) v *= 2;
    ASSERT_GE(eval_bound(more).total, base) << "case " << c;
    more = in;
    more.G *= 1.5;
    ASSERT_GE(eval_bound(more).total, base) << "case " << c;
    more = in;
    more.T += 50;
    more.vseq.assign(static_cast<std::size_t>(more.T), in.vseq.front());
    ASSERT_LE(eval_bound(more).total, base * (1 + 1e-12)) << "case " << c;
  }
}

TEST(Property, ClipFactorsAboveGammaForBoundedGradients) {
  // With G_emp measured over the run, every per-device factor should sit above
  // Gamma_emp in almost all rounds of a small clip_comp run.
  Gen g(12);
  for (int c = 0; c < 5; ++c) {
    const int p = 16;
    const LossModel model(ModelKind::quadratic, p, 0);
    std::vector<Dataset> data;
    for (int i = 0; i < 4; ++i) {
      Dataset ds;
      ds.num_classes = 1;
      ds.features = Matrix::Random(8, p) * g.uniform(0.5, 2.0);
      ds.labels.assign(8, 0);
      data.push_back(ds);
    }
    ExperimentSetup s;
    s.scheme = Scheme::clip_comp;
    s.model = &model;
    s.device_data = data;
    s.schedule = {0.05, 200.0, 1, 40};
    s.batch_size = 4;
    s.k = 8;
    s.M = 12;
    s.channel.power = g.log_uniform(1e-3, 1.0);
    s.channel.sigma2 = 1e-6;
    s.estimator = {EstimatorKind::lmmse, {0.5, 0.1}, 1, 1.0};
    s.seed = static_cast<std::uint64_t>(c);
    s.evaluate_metrics = false;
    const auto res = run_experiment(s);
    int below = 0, total = 0;
    for (const auto& r : res.records) {
      ASSERT_EQ(r.memory_bound_violations, 0) << "case " << c << " t " << r.t;
      for (double a : r.alpha) {
        ++total;
        if (a < res.records.back().gamma_emp) ++below;
      }
    }
    ASSERT_LE(below, total / 100) << "case " << c;
  }
}

namespace {

struct RecoveryCase {
  Vector x, x_hat;
  double v_hat;
};

RecoveryCase recover_bg(Gen& g, Eigen::Index d, double delta, std::uint64_t seed) {
  const double P = 2e-5 * d;
  const SignalPrior prior{0.1, P / d};
  const double sigma2 = ChannelConfig::sigma2_from_snr(P, d, 30.0);
  const auto M = static_cast<Eigen::Index>(std::lround(delta * d));
  std::bernoulli_distribution active(prior.rho);
  std::normal_distribution<double> nd(0.0, std::sqrt(prior.var));
  Vector x(d);
  for (Eigen::Index i = 0; i < d; ++i) x[i] = active(g.rng) ? nd(g.rng) : 0.0;
  const ProjectionMatrix A = gen_projection(M, d, ProjectionKind::dct, seed);
  const Vector y = A.apply(x) + gaussian_vector(g.rng, M, std::sqrt(sigma2));
  const RecoveryResult r = estimate(y, A, EstimatorConfig{EstimatorKind::oamp, prior, 20, 1.0}, sigma2);
  return {x, r.x_hat, r.v_hat};
}

}  // namespace

TEST(Property, RecoveryErrorUncorrelatedAndZeroMean) {
  Gen g(12);
  const Eigen::Index d = 2048;
  double sxy = 0, sxx = 0, syy = 0;
  int mean_ok = 0;
  const int cases = 100;
  for (int c = 0; c < cases; ++c) {
    const RecoveryCase rc = recover_bg(g, d, 0.6, static_cast<std::uint64_t>(c));
    const Vector e = rc.x_hat - rc.x;
    sxy += e.dot(rc.x);
    sxx += rc.x.squaredNorm();
    syy += e.squaredNorm();
    const double mean = e.mean();
    const double sd = std::sqrt((e.array() - mean).square().sum() / (d - 1));
    if (std::abs(mean) < 3 * sd / std::sqrt(static_cast<double>(d))) ++mean_ok;
  }
  EXPECT_LT(std::abs(sxy / std::sqrt(sxx * syy)), 0.05);
  // A 3-sigma band admits the occasional excursion.
  EXPECT_GE(mean_ok, 97);
}

TEST(Property, PredictedVarianceCalibrated) {
  Gen g(13);
  for (double delta : {0.4, 0.6, 0.8}) {
    int ok = 0;
    const int cases = 100;
    for (int c = 0; c < cases; ++c) {
      const RecoveryCase rc = recover_bg(g, 2048, delta, static_cast<std::uint64_t>(100 + c));
      const double emp = (rc.x_hat - rc.x).squaredNorm() / 2048.0;
      if (std::abs(emp / rc.v_hat - 1) <= 0.2) ++ok;
    }
    EXPECT_GE(ok, 90) << "delta " << delta;
  }
}
