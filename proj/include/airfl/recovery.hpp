#pragma once

// Estimators for the aggregated signal from y = A x + n, and the scalar
// state-evolution recursion that predicts their per-entry error offline.

#include <algorithm>
#include <cmath>
#include <fstream>
#include <string>
#include <vector>

#include <boost/math/quadrature/gauss_kronrod.hpp>

#include "airfl/common.hpp"
#include "airfl/compression.hpp"

namespace airfl {

/// p(x) = (1 - rho) delta(x) + rho N(0, var).
struct SignalPrior {
  double rho = 0.1;
  double var = 1.0;

  double second_moment() const { return rho * var; }

  void validate() const {
    require(rho > 0.0 && rho <= 1.0, "prior: sparsity rho must be in (0, 1]");
    require(var > 0.0 && std::isfinite(var), "prior: component variance must be positive");
  }
};

enum class EstimatorKind { identity, lmmse, oamp };

inline std::string to_string(EstimatorKind k) {
  switch (k) {
    case EstimatorKind::identity: return "identity";
    case EstimatorKind::lmmse: return "lmmse";
    case EstimatorKind::oamp: return "oamp";
  }
  return "?";
}

inline EstimatorKind parse_estimator_kind(const std::string& s) {
  if (s == "identity") return EstimatorKind::identity;
  if (s == "lmmse") return EstimatorKind::lmmse;
  if (s == "oamp") return EstimatorKind::oamp;
  throw ConfigError("unknown estimator kind '" + s + "'");
}

struct EstimatorConfig {
  EstimatorKind kind = EstimatorKind::oamp;
  SignalPrior prior;
  int iterations = 20;
  double damping = 1.0;
  /// Rescale the final OAMP estimate so its error is uncorrelated with the
  /// signal (the posterior mean's error is anti-correlated with it).
  bool debias = true;

  void validate() const {
    prior.validate();
    require(iterations >= 1, "estimator: iterations must be >= 1");
    require(damping > 0.0 && damping <= 1.0, "estimator: damping must be in (0, 1]");
  }
};

struct RecoveryResult {
  Vector x_hat;
  double v_hat = 0.0;           // predicted per-entry error variance
  std::vector<double> v_trace;  // per-iteration prediction (oamp)
};

// ---------------------------------------------------------------------------
// Scalar Bernoulli-Gaussian denoiser

struct Posterior {
  double mean = 0.0;
  double var = 0.0;
};

/// Posterior mean/variance of x given r = x + N(0, tau2) under the BG prior.
inline Posterior bg_mmse_denoiser(double r, double tau2, const SignalPrior& prior) {
  if (!(tau2 > 0.0)) throw ConfigError("bg_mmse_denoiser: tau2 must be positive");
  const double s = prior.var + tau2;
  const double gain = prior.var / s;
  const double m1 = gain * r;
  const double v1 = gain * tau2;
  double pi = 1.0;
  if (prior.rho < 1.0) {
    // log-odds of "active" vs "inactive" given r
    const double llr = std::log(prior.rho / (1.0 - prior.rho)) + 0.5 * std::log(tau2 / s) +
                       0.5 * r * r * (1.0 / tau2 - 1.0 / s);
    pi = llr > 0.0 ? 1.0 / (1.0 + std::exp(-llr)) : std::exp(llr) / (1.0 + std::exp(llr));
  }
  return {pi * m1, pi * v1 + pi * (1.0 - pi) * m1 * m1};
}

namespace detail {

// 2 * int_0^inf phi(z) f(c z) dz, split at the denoiser's transition region.
template <typename F>
double gaussian_expectation_even(F&& f, double c, double transition) {
  using boost::math::quadrature::gauss_kronrod;
  auto integrand = [&](double z) { return std::exp(-0.5 * z * z) * f(c * z); };
  constexpr double zmax = 12.0;
  const double zt = std::clamp(transition / c, 1e-3, zmax / 2);
  double total = 0.0;
  total += gauss_kronrod<double, 61>::integrate(integrand, 0.0, zt, 12, 1e-13);
  total += gauss_kronrod<double, 61>::integrate(integrand, zt, 4.0 * zt < zmax ? 4.0 * zt : zmax, 12, 1e-13);
  if (4.0 * zt < zmax) total += gauss_kronrod<double, 61>::integrate(integrand, 4.0 * zt, zmax, 12, 1e-13);
  return 2.0 * total / std::sqrt(2.0 * M_PI);
}

}  // namespace detail

/// E[(x - E[x|r])^2] for r = x + N(0, tau2), x ~ prior.
inline double bg_mmse(double tau2, const SignalPrior& prior) {
  const double s = prior.var + tau2;
  auto pv = [&](double r) { return bg_mmse_denoiser(r, tau2, prior).var; };
  // Active/inactive decision boundary is a few tau from the origin.
  const double transition = 6.0 * std::sqrt(tau2);
  double mmse = prior.rho * detail::gaussian_expectation_even(pv, std::sqrt(s), transition);
  if (prior.rho < 1.0)
    mmse += (1.0 - prior.rho) * detail::gaussian_expectation_even(pv, std::sqrt(tau2), transition);
  return mmse;
}

// ---------------------------------------------------------------------------
// State evolution

struct SETrace {
  double delta = 1.0;
  double sigma2 = 0.0;
  SignalPrior prior;
  std::vector<double> v;     // predicted per-entry MSE of the estimate after each iteration
  std::vector<double> tau2;  // effective noise at the denoiser input

  double final_v() const { return v.empty() ? prior.second_moment() : v.back(); }

  void write_csv(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw Error("cannot write " + path);
    out.precision(17);
    out << "iteration,v\n";
    for (std::size_t i = 0; i < v.size(); ++i) out << (i + 1) << ',' << v[i] << '\n';
  }
};

/// Error variance after rescaling an MMSE estimate with per-entry error v of
/// a signal with second moment s so that the error is uncorrelated with it.
inline double debiased_variance(double v, double s) {
  if (v <= 0.0 || v >= s) return v;
  return v * s / (s - v);
}

// Below this, the linear stage is treated as exact.
inline constexpr double kTauFloor = 1e-300;

/// Linear-stage error map for the de-correlated matched filter (d/M) A^T
/// with partial-orthogonal A: tau2 = (1 - delta)/delta * v + sigma2/delta.
inline double linear_stage_tau2(double delta, double v_ext, double sigma2) {
  return (1.0 - delta) / delta * v_ext + sigma2 / delta;
}

/// Extrinsic variance from posterior variance: (1/v_post - 1/tau2)^-1.
inline double extrinsic_variance(double v_post, double tau2, double fallback) {
  if (v_post <= 0.0) return 0.0;
  if (v_post >= tau2) return fallback;
  return v_post * tau2 / (tau2 - v_post);
}

inline SETrace state_evolution(double delta, double sigma2, const SignalPrior& prior, int iterations) {
  require(delta > 0.0 && delta <= 1.0, "state_evolution: delta must be in (0, 1]");
  require(sigma2 >= 0.0, "state_evolution: sigma2 must be >= 0");
  require(iterations >= 1, "state_evolution: iterations must be >= 1");
  prior.validate();
  SETrace tr{delta, sigma2, prior, {}, {}};
  double v_ext = prior.second_moment();
  for (int k = 0; k < iterations; ++k) {
    const double tau2 = linear_stage_tau2(delta, v_ext, sigma2);
    double v_post = 0.0;
    if (tau2 > kTauFloor) v_post = bg_mmse(tau2, prior);
    if (!std::isfinite(tau2) || !std::isfinite(v_post))
      throw NumericError("state_evolution: non-finite value at iteration " + std::to_string(k + 1));
    tr.tau2.push_back(tau2);
    tr.v.push_back(v_post);
    v_ext = extrinsic_variance(v_post, tau2, prior.second_moment());
  }
  return tr;
}

// ---------------------------------------------------------------------------
// Estimators

namespace detail {

inline RecoveryResult estimate_oamp(const Vector& y, const ProjectionMatrix& A, const EstimatorConfig& cfg,
                                    double sigma2) {
  const auto M = A.rows();
  const auto d = A.cols();
  const double delta = static_cast<double>(M) / static_cast<double>(d);
  const double scale = 1.0 / delta;
  const double v_floor = 1e-30 * std::max(cfg.prior.second_moment(), y.squaredNorm() / static_cast<double>(M));

  RecoveryResult res;
  Vector x_ext = Vector::Zero(d);
  Vector x_post = Vector::Zero(d);
  for (int k = 0; k < cfg.iterations; ++k) {
    const Vector resid = y - A.apply(x_ext);
    // Residual-based error estimate: ||y - A x||^2 ~ M (v + sigma2) for AA^T = I.
    const double v_ext = std::max((resid.squaredNorm() - static_cast<double>(M) * sigma2) / static_cast<double>(M), v_floor);
    const Vector r = x_ext + scale * A.apply_transpose(resid);
    const double tau2 = linear_stage_tau2(delta, v_ext, sigma2);

    if (!(tau2 > kTauFloor)) {
      x_post = r;
      res.v_trace.push_back(0.0);
      break;
    }
    double v_post = 0.0;
    for (Eigen::Index i = 0; i < d; ++i) {
      const Posterior p = bg_mmse_denoiser(r[i], tau2, cfg.prior);
      x_post[i] = p.mean;
      v_post += p.var;
    }
    v_post /= static_cast<double>(d);
    if (!all_finite(x_post) || !std::isfinite(v_post))
      throw NumericError("oamp: non-finite estimate at iteration " + std::to_string(k + 1));
    res.v_trace.push_back(v_post);
    if (v_post <= 0.0) break;

    // Divergence-free output: (x_post - (v_post/tau2) r) / (1 - v_post/tau2).
    const double v_new = extrinsic_variance(v_post, tau2, cfg.prior.second_moment());
    Vector x_new = v_new * (x_post / v_post - r / tau2);
    x_ext = cfg.damping * x_new + (1.0 - cfg.damping) * x_ext;
  }
  res.x_hat = x_post;
  res.v_hat = res.v_trace.empty() ? 0.0 : res.v_trace.back();
  if (cfg.debias && res.v_hat > 0.0) {
    // E[x_post^2] = E[x^2] - v for the posterior mean, so x_post scaled by
    // (e + v)/e has zero correlation between error and signal.
    const double e = x_post.squaredNorm() / static_cast<double>(d);
    if (e > 0.0) {
      const double c = 1.0 + res.v_hat / e;
      res.x_hat *= c;
      res.v_hat *= c;
    }
  }
  return res;
}

}  // namespace detail

inline RecoveryResult estimate(const Vector& y, const ProjectionMatrix& A, const EstimatorConfig& cfg,
                               double sigma2) {
  cfg.validate();
  if (y.size() != A.rows())
    throw ConfigError("estimate: y has " + std::to_string(y.size()) + " entries, A has " +
                      std::to_string(A.rows()) + " rows");
  const auto M = A.rows();
  const auto d = A.cols();
  switch (cfg.kind) {
    case EstimatorKind::identity: {
      if (M != d) throw ConfigError("estimate: identity estimator needs M == d");
      return {A.apply_transpose(y), sigma2, {sigma2}};
    }
    case EstimatorKind::lmmse: {
      // Gaussian-matched prior with variance s; for A A^T = I the LMMSE
      // solution is s/(s + sigma2) A^T y.
      const double s = cfg.prior.second_moment();
      const double gain = s / (s + sigma2);
      const double v = s - gain * s * static_cast<double>(M) / static_cast<double>(d);
      return {gain * A.apply_transpose(y), v, {v}};
    }
    case EstimatorKind::oamp:
      return detail::estimate_oamp(y, A, cfg, sigma2);
  }
  throw ConfigError("estimate: invalid estimator kind");
}

/// Per-round v^(t) fed into the bound.
inline std::vector<double> vseq_for_bound(int T, double sigma2, double delta, const EstimatorConfig& cfg) {
  require(T >= 0, "vseq_for_bound: T must be >= 0");
  double v = sigma2;
  switch (cfg.kind) {
    case EstimatorKind::identity: v = sigma2; break;
    case EstimatorKind::lmmse: {
      const double s = cfg.prior.second_moment();
      v = s - s * s / (s + sigma2) * delta;
      break;
    }
    case EstimatorKind::oamp:
      v = state_evolution(delta, sigma2, cfg.prior, cfg.iterations).final_v();
      if (cfg.debias) v = debiased_variance(v, cfg.prior.second_moment());
      break;
  }
  return std::vector<double>(static_cast<std::size_t>(T), v);
}

}  // namespace airfl
