#pragma once

// Round orchestration for vanilla FL and the over-the-air schemes with
// clipping- or scaling-based power control, with or without compression.

#include <chrono>
#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "airfl/bound.hpp"
#include "airfl/channel.hpp"
#include "airfl/common.hpp"
#include "airfl/compression.hpp"
#include "airfl/learning.hpp"
#include "airfl/recovery.hpp"

namespace airfl {

enum class Scheme { vanilla, clip, clip_comp, scale, scale_comp };

inline std::string to_string(Scheme s) {
  switch (s) {
    case Scheme::vanilla: return "vanilla";
    case Scheme::clip: return "clip";
    case Scheme::clip_comp: return "clip_comp";
    case Scheme::scale: return "scale";
    case Scheme::scale_comp: return "scale_comp";
  }
  return "?";
}

inline Scheme parse_scheme(const std::string& s) {
  if (s == "vanilla") return Scheme::vanilla;
  if (s == "clip") return Scheme::clip;
  if (s == "clip_comp" || s == "clip-comp") return Scheme::clip_comp;
  if (s == "scale") return Scheme::scale;
  if (s == "scale_comp" || s == "scale-comp") return Scheme::scale_comp;
  throw ConfigError("unknown scheme '" + s + "'");
}

inline bool is_compressed(Scheme s) { return s == Scheme::clip_comp || s == Scheme::scale_comp; }

/// eta_t = xi / (a + t).
struct Schedule {
  double xi = 1.0;
  double a = 1.0;
  int Q = 1;
  int T = 0;

  double eta(int t) const { return learning_rate(xi, a, t); }

  void validate() const {
    require(xi > 0.0, "schedule: xi must be positive");
    require(a > 0.0, "schedule: a must be positive");
    require(Q >= 1, "schedule: Q must be >= 1");
    require(T >= 0, "schedule: T must be >= 0");
  }
};

struct DeviceState {
  int id = 0;
  Dataset data;
  Vector memory;  // error-feedback accumulator, zero at t = 0
  MiniBatchSampler sampler;
};

inline std::vector<DeviceState> make_devices(std::vector<Dataset> datasets, Eigen::Index d, int batch_size,
                                             std::uint64_t seed) {
  std::vector<DeviceState> devs;
  devs.reserve(datasets.size());
  for (std::size_t i = 0; i < datasets.size(); ++i) {
    const int id = static_cast<int>(i);
    devs.push_back({id, std::move(datasets[i]), Vector::Zero(d), MiniBatchSampler{seed, id, batch_size}});
  }
  return devs;
}

struct RoundRecord {
  int t = 0;
  double eta = 0.0;
  double train_loss = std::numeric_limits<double>::quiet_NaN();
  double test_acc = std::numeric_limits<double>::quiet_NaN();
  /// Per-device power-control factor. Clip schemes: the clipping factor in
  /// (0, 1]. Scale schemes: the common amplitude sqrt(alpha_t), may exceed 1.
  std::vector<double> alpha;
  std::vector<double> mem_sq;  // ||m_i^(t+1)||^2
  std::vector<double> power;   // ||x_i^(t)||^2
  double v_hat = 0.0;
  double round_grad_max = 0.0;  // max mini-batch gradient norm this round
  double G_emp = 0.0;           // running max up to and including this round
  double gamma_emp = std::numeric_limits<double>::quiet_NaN();
  int memory_bound_violations = 0;
  bool skipped = false;
  double wall_ms = 0.0;

  double max_power() const { return power.empty() ? 0.0 : *std::max_element(power.begin(), power.end()); }
  double max_mem_sq() const { return mem_sq.empty() ? 0.0 : *std::max_element(mem_sq.begin(), mem_sq.end()); }
  double mean_alpha() const {
    if (alpha.empty()) return 1.0;
    double s = 0.0;
    for (double a : alpha) s += a;
    return s / static_cast<double>(alpha.size());
  }
  double max_alpha() const { return alpha.empty() ? 1.0 : *std::max_element(alpha.begin(), alpha.end()); }
  double min_alpha() const { return alpha.empty() ? 1.0 : *std::min_element(alpha.begin(), alpha.end()); }
};

struct RoundResult {
  Vector theta;
  RoundRecord record;
};

/// Compression stage shared by the *_comp schemes.
struct Compression {
  Eigen::Index k = 0;
  const ProjectionMatrix* A = nullptr;
  EstimatorConfig estimator;
};

namespace detail {

inline double local_update(const LossModel& model, const Vector& theta, DeviceState& dev, const Schedule& sched,
                           int t, Vector& delta) {
  LocalSgdStats stats;
  const Vector end = local_sgd(model, theta, sched.Q, sched.eta(t), dev.data, dev.sampler, t, &stats);
  delta = model_diff(theta, end);
  return stats.max_grad_norm;
}

}  // namespace detail

/// theta' = theta - (1/R) sum_i Delta_i. Noiseless and lossless.
inline RoundResult run_round_vanilla(const LossModel& model, const Vector& theta, std::vector<DeviceState>& devices,
                                     const Schedule& sched, int t) {
  require(!devices.empty(), "run_round_vanilla: no devices");
  RoundResult out;
  out.record.t = t;
  out.record.eta = sched.eta(t);
  Vector sum = Vector::Zero(theta.size());
  Vector delta;
  for (auto& dev : devices) {
    out.record.round_grad_max = std::max(out.record.round_grad_max, detail::local_update(model, theta, dev, sched, t, delta));
    sum += delta;
    out.record.alpha.push_back(1.0);
    out.record.power.push_back(0.0);
    out.record.mem_sq.push_back(0.0);
  }
  out.theta = theta - sum / static_cast<double>(devices.size());
  return out;
}

/// One round of top-k + error feedback + clipping + projection over the MAC,
/// followed by sparse recovery and the global update.
inline RoundResult run_round_clip_comp(const LossModel& model, const Vector& theta, std::vector<DeviceState>& devices,
                                       const Schedule& sched, const ChannelConfig& channel, const NoiseSource& noise,
                                       const ProjectionMatrix& A, const EstimatorConfig& est, Eigen::Index k, int t) {
  require(!devices.empty(), "run_round_clip_comp: no devices");
  const Eigen::Index d = theta.size();
  require(A.cols() == d, "run_round_clip_comp: projection width != model dimension");
  require(A.rows() == channel.M, "run_round_clip_comp: projection height != channel uses");
  const double eta = sched.eta(t);
  const double sqrtP = std::sqrt(channel.power);

  RoundResult out;
  out.record.t = t;
  out.record.eta = eta;
  Vector x_tilde_sum = Vector::Zero(d);
  std::vector<Vector> signals;
  signals.reserve(devices.size());
  Vector delta;
  for (auto& dev : devices) {
    out.record.round_grad_max = std::max(out.record.round_grad_max, detail::local_update(model, theta, dev, sched, t, delta));
    const Vector g = top_k(dev.memory + delta, k);
    dev.memory = memory_update(dev.memory, delta, g);
    const Vector u = g / eta;
    const double alpha = clip_scale(u, sqrtP);
    const Vector x_tilde = alpha * u;
    Vector x = project(A, x_tilde);
    out.record.alpha.push_back(alpha);
    out.record.power.push_back(x.squaredNorm());
    out.record.mem_sq.push_back(dev.memory.squaredNorm());
    signals.push_back(std::move(x));
  }
  const Vector y = mac_transmit(signals, channel, noise, t);
  const RecoveryResult rec = estimate(y, A, est, channel.sigma2);
  out.record.v_hat = rec.v_hat;
  out.theta = theta - eta * rec.x_hat / static_cast<double>(devices.size());
  return out;
}

/// Scaling-based power control: every device transmits sqrt(alpha_t) u_i with
/// the round-common alpha_t = min_i P/||u_i||^2, where u_i is Delta_i/eta (or
/// its sparsified version when `comp` is given). With `descale`, the server
/// divides the estimate by sqrt(alpha_t).
inline RoundResult run_round_scale(const LossModel& model, const Vector& theta, std::vector<DeviceState>& devices,
                                   const Schedule& sched, const ChannelConfig& channel, const NoiseSource& noise, int t,
                                   const std::optional<Compression>& comp, bool descale = true) {
  require(!devices.empty(), "run_round_scale: no devices");
  const Eigen::Index d = theta.size();
  const double eta = sched.eta(t);
  const ProjectionMatrix identity = ProjectionMatrix::identity(d);
  const ProjectionMatrix& A = comp ? *comp->A : identity;
  EstimatorConfig est;
  est.kind = EstimatorKind::identity;
  if (comp) est = comp->estimator;
  require(A.cols() == d && A.rows() == channel.M, "run_round_scale: projection/channel dimension mismatch");

  RoundResult out;
  out.record.t = t;
  out.record.eta = eta;
  std::vector<Vector> u(devices.size());
  Vector delta;
  double max_sq = 0.0;
  for (std::size_t i = 0; i < devices.size(); ++i) {
    auto& dev = devices[i];
    out.record.round_grad_max = std::max(out.record.round_grad_max, detail::local_update(model, theta, dev, sched, t, delta));
    if (comp) {
      const Vector g = top_k(dev.memory + delta, comp->k);
      dev.memory = memory_update(dev.memory, delta, g);
      u[i] = g / eta;
    } else {
      u[i] = delta / eta;
    }
    if (!all_finite(u[i])) throw NumericError("run_round_scale: non-finite update on device " + std::to_string(i));
    max_sq = std::max(max_sq, u[i].squaredNorm());
    out.record.mem_sq.push_back(dev.memory.squaredNorm());
  }
  if (max_sq == 0.0) {
    // No device has anything to send.
    out.record.skipped = true;
    out.record.alpha.assign(devices.size(), 0.0);
    out.record.power.assign(devices.size(), 0.0);
    out.theta = theta;
    return out;
  }
  const double alpha = channel.power / max_sq;
  const double amp = std::sqrt(alpha);
  std::vector<Vector> signals;
  signals.reserve(devices.size());
  for (auto& ui : u) {
    Vector x = project(A, amp * ui);
    out.record.alpha.push_back(amp);
    out.record.power.push_back(x.squaredNorm());
    signals.push_back(std::move(x));
  }
  const Vector y = mac_transmit(signals, channel, noise, t);
  const RecoveryResult rec = estimate(y, A, est, channel.sigma2);
  out.record.v_hat = rec.v_hat;
  const double R = static_cast<double>(devices.size());
  out.theta = theta - eta * rec.x_hat / (descale ? R * amp : R);
  return out;
}

// ---------------------------------------------------------------------------
// Full runs

struct ExperimentSetup {
  Scheme scheme = Scheme::vanilla;
  const LossModel* model = nullptr;
  const Dataset* train = nullptr;  // global training set (for the reported loss)
  const Dataset* test = nullptr;   // optional
  std::vector<Dataset> device_data;
  Schedule schedule;
  int batch_size = 128;
  Eigen::Index k = 0;  // 0 -> d
  Eigen::Index M = 0;  // 0 -> d
  ProjectionKind projection = ProjectionKind::random_orthonormal;
  bool fixed_projection = false;
  ChannelConfig channel;  // channel.M is overwritten from M
  EstimatorConfig estimator;
  bool descale = true;
  std::uint64_t seed = 0;
  Vector theta0;  // empty -> model.initial_parameters(seed)
  bool record_wall_clock = false;
  bool evaluate_metrics = true;
  /// Called with (t, theta_t) before round t, and with (T, theta_T) at the end.
  std::function<void(int, const Vector&)> on_iterate;
};

struct ExperimentResult {
  std::vector<RoundRecord> records;
  Vector theta;
};

inline ExperimentResult run_experiment(const ExperimentSetup& s) {
  require(s.model != nullptr, "run_experiment: no model");
  s.schedule.validate();
  require(!s.device_data.empty(), "run_experiment: no devices");
  const LossModel& model = *s.model;
  const Eigen::Index d = model.dim();
  const Scheme scheme = s.scheme;
  const bool comp = is_compressed(scheme);

  const Eigen::Index k = comp ? (s.k == 0 ? d : s.k) : d;
  const Eigen::Index M = comp ? (s.M == 0 ? d : s.M) : d;
  require(k >= 1 && k <= d, "run_experiment: k must be in [1, d]");
  require(M >= 1 && M <= d, "run_experiment: M must be in [1, d]");

  ChannelConfig channel = s.channel;
  channel.M = M;
  channel.d = d;
  if (scheme != Scheme::vanilla) channel.validate();
  const NoiseSource noise{derive_seed(s.seed, static_cast<std::uint64_t>(Stream::channel_noise))};

  EstimatorConfig est = s.estimator;
  if (!comp) est.kind = EstimatorKind::identity;

  std::vector<DeviceState> devices = make_devices(s.device_data, d, s.batch_size, s.seed);
  Vector theta = s.theta0.size() == 0 ? model.initial_parameters(s.seed) : s.theta0;
  require(theta.size() == d, "run_experiment: theta0 dimension mismatch");

  // Bound diagnostics need a schedule satisfying a*lambda > 4Q.
  const double lambda = static_cast<double>(k) / static_cast<double>(d);
  double C = std::numeric_limits<double>::quiet_NaN();
  if (s.schedule.a * lambda > 4.0 * s.schedule.Q) C = compute_C(s.schedule.a, lambda, s.schedule.Q);

  const ProjectionMatrix identity = ProjectionMatrix::identity(d);
  ProjectionMatrix fixedA;
  const bool use_identity = !comp || s.projection == ProjectionKind::identity;
  if (comp && !use_identity && s.fixed_projection) fixedA = gen_projection(M, d, s.projection, derive_seed(s.seed, 0));
  if (use_identity) require(M == d, "run_experiment: identity projection requires M == d");

  ExperimentResult res;
  res.records.reserve(static_cast<std::size_t>(s.schedule.T));
  double G_emp = 0.0;
  for (int t = 0; t < s.schedule.T; ++t) {
    if (s.on_iterate) s.on_iterate(t, theta);
    const auto start = std::chrono::steady_clock::now();

    ProjectionMatrix roundA;
    const ProjectionMatrix* A = &identity;
    if (comp && !use_identity) {
      if (s.fixed_projection) {
        A = &fixedA;
      } else {
        roundA = gen_projection(M, d, s.projection, derive_seed(s.seed, static_cast<std::uint64_t>(t) + 1));
        A = &roundA;
      }
    }

    RoundResult r;
    switch (scheme) {
      case Scheme::vanilla: r = run_round_vanilla(model, theta, devices, s.schedule, t); break;
      case Scheme::clip:
      case Scheme::clip_comp: r = run_round_clip_comp(model, theta, devices, s.schedule, channel, noise, *A, est, k, t); break;
      case Scheme::scale: r = run_round_scale(model, theta, devices, s.schedule, channel, noise, t, std::nullopt, s.descale); break;
      case Scheme::scale_comp:
        r = run_round_scale(model, theta, devices, s.schedule, channel, noise, t, Compression{k, A, est}, s.descale);
        break;
    }
    theta = std::move(r.theta);
    if (!all_finite(theta)) throw NumericError("run_experiment: non-finite model after round " + std::to_string(t));

    RoundRecord& rec = r.record;
    G_emp = std::max(G_emp, rec.round_grad_max);
    rec.G_emp = G_emp;
    if (!std::isnan(C) && scheme != Scheme::vanilla) {
      rec.gamma_emp = compute_gamma(channel.power, C, lambda, s.schedule.Q, G_emp);
      // Memory contraction: ||m^(t+1)||^2 <= 4 eta_{t+1}^2 C Q^2 G^2 / lambda^2.
      const double e1 = s.schedule.eta(t + 1);
      const double limit = 4.0 * e1 * e1 * C * s.schedule.Q * s.schedule.Q * G_emp * G_emp / (lambda * lambda);
      for (double m : rec.mem_sq)
        if (m > limit * (1.0 + 1e-12)) ++rec.memory_bound_violations;
    }
    if (s.evaluate_metrics && s.train) rec.train_loss = model.loss(theta, *s.train);
    if (s.evaluate_metrics && s.test) rec.test_acc = model.accuracy(theta, *s.test);
    if (s.record_wall_clock)
      rec.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
    res.records.push_back(std::move(rec));
  }
  if (s.on_iterate) s.on_iterate(s.schedule.T, theta);
  res.theta = theta;
  return res;
}

}  // namespace airfl
