#pragma once

// Real-valued Gaussian multiple-access channel with per-device power checks.

#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "airfl/common.hpp"

namespace airfl {

/// Relative slack on the power budget, for round-off in ||A x||^2.
inline constexpr double kPowerTolerance = 1e-9;

struct ChannelConfig {
  Eigen::Index M = 1;    // channel uses per round
  double sigma2 = 0.0;   // per-entry noise variance
  double power = 1.0;    // per-device budget P
  Eigen::Index d = 1;    // model dimension (only enters the SNR definition)

  /// SNR = P / (d sigma^2), in dB. +inf when noiseless.
  double snr_db() const {
    if (sigma2 == 0.0) return std::numeric_limits<double>::infinity();
    return 10.0 * std::log10(power / (static_cast<double>(d) * sigma2));
  }

  static double sigma2_from_snr(double power, Eigen::Index d, double snr_db) {
    return power / (static_cast<double>(d) * db_to_linear(snr_db));
  }

  void validate() const {
    require(M >= 1, "channel: M must be >= 1");
    require(sigma2 >= 0.0 && std::isfinite(sigma2), "channel: sigma2 must be finite and >= 0");
    require(power > 0.0, "channel: power budget must be positive");
  }
};

/// Channel noise keyed by (seed, round).
struct NoiseSource {
  std::uint64_t seed = 0;

  Vector draw(int t, Eigen::Index M, double sigma2) const {
    if (sigma2 == 0.0) return Vector::Zero(M);
    Rng rng = make_rng(seed, Stream::channel_noise, t);
    return gaussian_vector(rng, M, std::sqrt(sigma2));
  }
};

/// y = sum_i x_i + n, summed in ascending device order.
inline Vector mac_transmit(const std::vector<Vector>& signals, const ChannelConfig& cfg,
                           const NoiseSource& noise, int t) {
  cfg.validate();
  Vector y = Vector::Zero(cfg.M);
  for (std::size_t i = 0; i < signals.size(); ++i) {
    const Vector& x = signals[i];
    if (x.size() != cfg.M)
      throw ConfigError("mac_transmit: device " + std::to_string(i) + " sends " +
                        std::to_string(x.size()) + " symbols, channel has M=" + std::to_string(cfg.M));
    const double p = x.squaredNorm();
    if (!(p <= cfg.power * (1.0 + kPowerTolerance)))
      throw PowerViolation(static_cast<int>(i), p, cfg.power);
    y += x;
  }
  if (cfg.sigma2 > 0.0) y += noise.draw(t, cfg.M, cfg.sigma2);
  return y;
}

}  // namespace airfl
