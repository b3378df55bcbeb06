#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>

#include <Eigen/Dense>

namespace airfl {

/// Dense parameter-space vector (model, model difference, memory, ...).
using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

// Error hierarchy. Everything derives from std::runtime_error so callers that
// only care about "something failed" can catch a single type.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Invalid configuration or inconsistent dimensions.
struct ConfigError : Error {
  using Error::Error;
};

/// A non-finite value appeared during an iterative computation.
struct NumericError : Error {
  using Error::Error;
};

/// A device attempted to transmit above its power budget.
struct PowerViolation : Error {
  PowerViolation(int device, double power, double budget)
      : Error("power violation: device " + std::to_string(device) + " transmits " +
              std::to_string(power) + " > budget " + std::to_string(budget) +
              " (excess " + std::to_string(power - budget) + ")"),
        device(device),
        excess(power - budget) {}
  int device;
  double excess;
};

inline void require(bool cond, const std::string& msg) {
  if (!cond) throw ConfigError(msg);
}

inline void require_same_dim(const Vector& a, const Vector& b, const char* what) {
  if (a.size() != b.size())
    throw ConfigError(std::string(what) + ": dimension mismatch (" + std::to_string(a.size()) +
                      " vs " + std::to_string(b.size()) + ")");
}

inline bool all_finite(const Vector& v) { return v.allFinite(); }

// ---------------------------------------------------------------------------
// Seed derivation. Every random stream in a run is keyed by a tuple of
// integers hashed through splitmix64, so the draw for (seed, device, t, q)
// does not depend on evaluation order.

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

template <typename... Ts>
std::uint64_t derive_seed(std::uint64_t seed, Ts... keys) {
  std::uint64_t h = splitmix64(seed);
  ((h = splitmix64(h ^ static_cast<std::uint64_t>(keys))), ...);
  return h;
}

/// Stream tags, so that different subsystems never share a stream.
enum class Stream : std::uint64_t {
  minibatch = 1,
  partition = 2,
  dataset = 3,
  projection = 4,
  channel_noise = 5,
  model_init = 6,
  probe = 7,
};

using Rng = std::mt19937_64;

template <typename... Ts>
Rng make_rng(std::uint64_t seed, Stream s, Ts... keys) {
  return Rng(derive_seed(seed, static_cast<std::uint64_t>(s), keys...));
}

inline Vector gaussian_vector(Rng& rng, Eigen::Index n, double stddev = 1.0) {
  std::normal_distribution<double> nd(0.0, 1.0);
  Vector v(n);
  for (Eigen::Index i = 0; i < n; ++i) v[i] = stddev * nd(rng);
  return v;
}

inline double db_to_linear(double db) { return std::pow(10.0, db / 10.0); }

}  // namespace airfl
