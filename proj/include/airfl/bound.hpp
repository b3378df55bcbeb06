#pragma once

// Convergence bound for clipped, compressed over-the-air FL with learning rate
// eta_t = xi / (a + t), with its four annotated error terms.

#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <string>
#include <vector>

#include "airfl/common.hpp"

namespace airfl {

/// Minimal admissible memory constant C = 4 a lambda (1 - lambda^2) / (a lambda - 4Q).
inline double compute_C(double a, double lambda, int Q) {
  require(lambda > 0.0 && lambda <= 1.0, "compute_C: lambda must be in (0, 1]");
  require(Q >= 1, "compute_C: Q must be >= 1");
  const double al = a * lambda;
  if (!(al > 4.0 * Q)) {
    char buf[160];
    std::snprintf(buf, sizeof buf, "compute_C: requires a*lambda > 4Q, got a*lambda = %.6g <= 4Q = %d", al,
                  4 * Q);
    throw ConfigError(buf);
  }
  return 4.0 * al * (1.0 - lambda * lambda) / (al - 4.0 * Q);
}

/// sqrt(8C/lambda^2 + 2), the growth factor of ||g|| relative to eta Q G.
inline double sparsification_factor(double C, double lambda) {
  return std::sqrt(8.0 * C / (lambda * lambda) + 2.0);
}

/// Lower bound on every per-device clipping factor.
inline double compute_gamma(double P, double C, double lambda, int Q, double G) {
  require(P > 0.0, "compute_gamma: P must be positive");
  require(G >= 0.0, "compute_gamma: G must be >= 0");
  const double sp = std::sqrt(P);
  return sp / (sp + sparsification_factor(C, lambda) * Q * G);
}

inline double learning_rate(double xi, double a, int t) { return xi / (a + t); }

struct CumulativeRate {
  double sum = 0.0;    // P_T = sum_t eta_t
  double lower = 0.0;  // xi ln((T + a - 1)/a)
};

inline CumulativeRate compute_PT(double xi, double a, int T) {
  require(T >= 1, "compute_PT: T must be >= 1");
  CumulativeRate r;
  for (int t = 0; t < T; ++t) r.sum += learning_rate(xi, a, t);
  r.lower = xi * std::log((T + a - 1.0) / a);
  return r;
}

struct ScheduleReport {
  double memory_threshold = 0.0;  // 4Q/lambda
  double rate_threshold = 0.0;    // sqrt(120) xi Q L
  bool memory_ok = false;
  bool rate_ok = false;
  double sum_sq = 0.0, sum_sq_bound = 0.0;
  double sum_cube = 0.0, sum_cube_bound = 0.0;
  bool sums_ok = false;

  bool conformant() const { return memory_ok && rate_ok; }
};

/// Checks a >= max{4Q/lambda, sqrt(120) xi Q L} and the two learning-rate
/// sum inequalities used in the bound, for the first T rounds.
inline ScheduleReport check_schedule(double xi, double a, int Q, double lambda, double L, int T) {
  require(Q >= 1, "check_schedule: Q must be >= 1");
  require(lambda > 0.0 && lambda <= 1.0, "check_schedule: lambda must be in (0, 1]");
  ScheduleReport r;
  r.memory_threshold = 4.0 * Q / lambda;
  r.rate_threshold = std::sqrt(120.0) * xi * Q * L;
  r.memory_ok = a > r.memory_threshold;
  r.rate_ok = a >= r.rate_threshold;
  for (int t = 0; t < T; ++t) {
    const double e = learning_rate(xi, a, t);
    r.sum_sq += e * e;
    r.sum_cube += e * e * e;
  }
  if (a > 1.0) {
    r.sum_sq_bound = xi * xi / (a - 1.0);
    r.sum_cube_bound = xi * xi * xi / (2.0 * (a - 1.0) * (a - 1.0));
    r.sums_ok = r.sum_sq <= r.sum_sq_bound && r.sum_cube <= r.sum_cube_bound;
  } else {
    r.sum_sq_bound = r.sum_cube_bound = std::numeric_limits<double>::infinity();
  }
  return r;
}

inline std::string describe(const ScheduleReport& r, double a) {
  char buf[512];
  std::snprintf(buf, sizeof buf,
                "a = %.6g\n"
                "memory constraint a > 4Q/lambda = %.6g: %s (margin %.6g)\n"
                "rate constraint a >= sqrt(120) xi Q L = %.6g: %s (margin %.6g)\n"
                "sum eta^2 = %.6g <= xi^2/(a-1) = %.6g\n"
                "sum eta^3 = %.6g <= xi^3/(2(a-1)^2) = %.6g\n"
                "conformant: %s\n",
                a, r.memory_threshold, r.memory_ok ? "pass" : "FAIL", a - r.memory_threshold, r.rate_threshold,
                r.rate_ok ? "pass" : "FAIL", a - r.rate_threshold, r.sum_sq, r.sum_sq_bound, r.sum_cube,
                r.sum_cube_bound, r.conformant() ? "yes" : "no");
  return buf;
}

struct BoundInputs {
  double L = 1.0;               // smoothness
  double G = 1.0;               // mini-batch gradient norm bound
  double sigma_l2 = 0.0;        // mini-batch gradient variance
  double sigma_g2 = 0.0;        // data heterogeneity
  double f0_minus_fstar = 0.0;  // f(theta_0) - f*
  double xi = 1.0;
  double a = 1.0;
  int Q = 1;
  int T = 1;
  int R = 1;
  double d = 1.0;
  double lambda = 1.0;  // k/d
  double P = 1.0;
  std::vector<double> vseq;  // per-round estimation error variance, length T
  /// Memory constant; NaN selects the minimal admissible value.
  double C = std::numeric_limits<double>::quiet_NaN();

  void validate() const {
    require(L >= 0 && G >= 0 && sigma_l2 >= 0 && sigma_g2 >= 0 && f0_minus_fstar >= 0,
            "bound inputs: L, G, sigma_l2, sigma_g2, f0 - f* must be >= 0");
    require(T >= 1 && Q >= 1 && R >= 1 && d >= 1, "bound inputs: T, Q, R, d must be >= 1");
    require(lambda > 0.0 && lambda <= 1.0, "bound inputs: lambda must be in (0, 1]");
    require(P > 0.0, "bound inputs: P must be positive");
    require(a > 1.0, "bound inputs: a must exceed 1");
    require(static_cast<int>(vseq.size()) == T, "bound inputs: vseq must have T entries");
    for (double v : vseq) require(v >= 0.0, "bound inputs: vseq entries must be >= 0");
  }
};

struct BoundBreakdown {
  double init = 0.0;
  double local = 0.0;
  double recovery = 0.0;
  double sparsclip = 0.0;
  double total = 0.0;
  double C = 0.0;
  double gamma = 0.0;
  double PT = 0.0;
  /// P_T-free part of the sparsification/clipping term (the error floor).
  double floor = 0.0;
};

inline BoundBreakdown eval_bound(const BoundInputs& in) {
  in.validate();
  BoundBreakdown b;
  b.C = std::isnan(in.C) ? compute_C(in.a, in.lambda, in.Q) : in.C;
  b.gamma = compute_gamma(in.P, b.C, in.lambda, in.Q, in.G);
  b.PT = compute_PT(in.xi, in.a, in.T).sum;

  const double Gam = b.gamma;
  const double Q = in.Q;
  const double l2 = in.lambda * in.lambda;
  const double G2 = in.G * in.G;
  const double spf2 = 8.0 * b.C / l2 + 2.0;

  b.init = 4.0 * in.f0_minus_fstar / (Gam * Q * b.PT);
  b.local = 20.0 * in.L * in.L * Q * (in.sigma_l2 + 6.0 * Q * in.sigma_g2) / (Gam * b.PT) * std::pow(in.xi, 3) /
            (2.0 * (in.a - 1.0) * (in.a - 1.0));

  double weighted = 0.0;
  for (int t = 0; t < in.T; ++t) {
    const double e = learning_rate(in.xi, in.a, t);
    weighted += e * e * in.vseq[static_cast<std::size_t>(t)];
  }
  b.recovery = 2.0 * in.d * in.L / (Gam * Q * in.R * in.R * b.PT) * weighted;

  const double floor_memory = 64.0 * b.C * G2 / (Gam * l2);
  const double floor_clip = 8.0 * G2 / Gam * std::sqrt(spf2);
  const double transient = 18.0 * in.L * spf2 * Q * G2 / (Gam * b.PT) * in.xi * in.xi / (in.a - 1.0);
  b.floor = floor_memory + floor_clip;
  b.sparsclip = floor_memory + transient + floor_clip;
  b.total = b.init + b.local + b.recovery + b.sparsclip;
  return b;
}

/// Presentation used when overlaying the bound on empirical loss versus M/d:
/// the terms that do not depend on the compression ratio are offset (only the
/// recovery term remains) and the result is divided by the full bound
/// evaluated after a single round.
inline double rescaled_bound(const BoundInputs& in) {
  const BoundBreakdown full = eval_bound(in);
  BoundInputs first = in;
  first.T = 1;
  first.vseq.assign(1, in.vseq.empty() ? 0.0 : in.vseq.front());
  return full.recovery / eval_bound(first).total;
}

inline const char* kBoundCsvHeader = "parameter,init,local,recovery,sparsclip,total,C,Gamma,P_T,conformant";

inline std::string bound_csv_row(double parameter, const BoundBreakdown& b, bool conformant) {
  char buf[512];
  std::snprintf(buf, sizeof buf, "%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%d", parameter, b.init,
                b.local, b.recovery, b.sparsclip, b.total, b.C, b.gamma, b.PT, conformant ? 1 : 0);
  return buf;
}

}  // namespace airfl
