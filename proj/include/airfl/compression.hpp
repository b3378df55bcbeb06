#pragma once

// Top-k sparsification, error-feedback memory, norm clipping and the
// partial-orthogonal projection used before analog transmission.

#include <algorithm>
#include <cstdint>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

#include "airfl/common.hpp"

namespace airfl {

/// Keeps the k largest-magnitude entries; ties go to the lowest index.
inline Vector top_k(const Vector& x, Eigen::Index k) {
  const Eigen::Index d = x.size();
  if (k < 1 || k > d)
    throw ConfigError("top_k: k=" + std::to_string(k) + " outside [1, " + std::to_string(d) + "]");
  if (k == d) return x;
  std::vector<Eigen::Index> idx(static_cast<std::size_t>(d));
  std::iota(idx.begin(), idx.end(), Eigen::Index{0});
  auto before = [&x](Eigen::Index a, Eigen::Index b) {
    const double fa = std::abs(x[a]);
    const double fb = std::abs(x[b]);
    return fa > fb || (fa == fb && a < b);
  };
  std::nth_element(idx.begin(), idx.begin() + k, idx.end(), before);
  Vector out = Vector::Zero(d);
  for (Eigen::Index i = 0; i < k; ++i) out[idx[static_cast<std::size_t>(i)]] = x[idx[static_cast<std::size_t>(i)]];
  return out;
}

/// m' = m + delta - g.
inline Vector memory_update(const Vector& m, const Vector& delta, const Vector& g) {
  require_same_dim(m, delta, "memory_update");
  require_same_dim(m, g, "memory_update");
  return m + delta - g;
}

/// min{1, sqrtP / ||x||}. Zero input gives 1.
inline double clip_scale(const Vector& x, double sqrtP) {
  if (!(sqrtP > 0.0)) throw ConfigError("clip: sqrtP must be positive");
  if (!all_finite(x)) throw NumericError("clip: non-finite input");
  const double n = x.norm();
  return n <= sqrtP ? 1.0 : sqrtP / n;
}

inline Vector clip(const Vector& x, double sqrtP) {
  const double s = clip_scale(x, sqrtP);
  return s == 1.0 ? Vector(x) : Vector(s * x);
}

/// Clipping factor alpha applied to g / eta, so clip(g/eta, sqrtP) = alpha * g/eta.
inline double clip_factor(const Vector& g, double eta, double sqrtP) {
  if (!(eta > 0.0)) throw ConfigError("clip_factor: eta must be positive");
  return clip_scale(g / eta, sqrtP);
}

// ---------------------------------------------------------------------------
// Projection matrices

enum class ProjectionKind { identity, hadamard, dct, random_orthonormal };

inline std::string to_string(ProjectionKind k) {
  switch (k) {
    case ProjectionKind::identity: return "identity";
    case ProjectionKind::hadamard: return "subsampled-hadamard";
    case ProjectionKind::dct: return "subsampled-dct";
    case ProjectionKind::random_orthonormal: return "subsampled-random-orthonormal";
  }
  return "?";
}

inline ProjectionKind parse_projection_kind(const std::string& s) {
  if (s == "identity") return ProjectionKind::identity;
  if (s == "hadamard" || s == "subsampled-hadamard") return ProjectionKind::hadamard;
  if (s == "dct" || s == "subsampled-dct") return ProjectionKind::dct;
  if (s == "random" || s == "random-orthonormal" || s == "subsampled-random-orthonormal")
    return ProjectionKind::random_orthonormal;
  throw ConfigError("unknown projection kind '" + s + "'");
}

/// M x d matrix made of M rows of a d x d orthonormal transform, so
/// A A^T = I_M and ||A||_2 <= 1. Reconstructable from (kind, M, d, seed).
class ProjectionMatrix {
 public:
  ProjectionMatrix() = default;

  ProjectionMatrix(ProjectionKind kind, Eigen::Index M, Eigen::Index d, std::uint64_t seed, Matrix dense)
      : kind_(kind), rows_(M), cols_(d), seed_(seed), dense_(std::move(dense)) {}

  static ProjectionMatrix identity(Eigen::Index d) {
    return ProjectionMatrix(ProjectionKind::identity, d, d, 0, Matrix());
  }

  ProjectionKind kind() const { return kind_; }
  Eigen::Index rows() const { return rows_; }
  Eigen::Index cols() const { return cols_; }
  std::uint64_t seed() const { return seed_; }
  bool is_identity() const { return kind_ == ProjectionKind::identity; }

  Vector apply(const Vector& x) const {
    if (x.size() != cols_)
      throw ConfigError("project: input dimension " + std::to_string(x.size()) + " != " +
                        std::to_string(cols_));
    if (is_identity()) return x.head(rows_);
    return dense_ * x;
  }

  Vector apply_transpose(const Vector& y) const {
    if (y.size() != rows_)
      throw ConfigError("project^T: input dimension " + std::to_string(y.size()) + " != " +
                        std::to_string(rows_));
    if (is_identity()) {
      Vector x = Vector::Zero(cols_);
      x.head(rows_) = y;
      return x;
    }
    return dense_.transpose() * y;
  }

  Matrix dense() const {
    if (is_identity()) return Matrix::Identity(rows_, cols_);
    return dense_;
  }

 private:
  ProjectionKind kind_ = ProjectionKind::identity;
  Eigen::Index rows_ = 0;
  Eigen::Index cols_ = 0;
  std::uint64_t seed_ = 0;
  Matrix dense_;
};

namespace detail {

inline bool is_power_of_two(Eigen::Index n) { return n > 0 && (n & (n - 1)) == 0; }

// Row indices drawn without replacement, kept in ascending order.
inline std::vector<Eigen::Index> random_rows(Rng& rng, Eigen::Index M, Eigen::Index d) {
  std::vector<Eigen::Index> all(static_cast<std::size_t>(d));
  std::iota(all.begin(), all.end(), Eigen::Index{0});
  std::shuffle(all.begin(), all.end(), rng);
  all.resize(static_cast<std::size_t>(M));
  std::sort(all.begin(), all.end());
  return all;
}

inline Vector random_signs(Rng& rng, Eigen::Index d) {
  std::bernoulli_distribution coin(0.5);
  Vector s(d);
  for (Eigen::Index i = 0; i < d; ++i) s[i] = coin(rng) ? 1.0 : -1.0;
  return s;
}

}  // namespace detail

inline ProjectionMatrix gen_projection(Eigen::Index M, Eigen::Index d, ProjectionKind kind,
                                       std::uint64_t seed) {
  require(M >= 1 && d >= 1, "gen_projection: dimensions must be positive");
  if (M > d)
    throw ConfigError("gen_projection: M=" + std::to_string(M) + " exceeds d=" + std::to_string(d));

  switch (kind) {
    case ProjectionKind::identity:
      return ProjectionMatrix(ProjectionKind::identity, M, d, seed, Matrix());

    case ProjectionKind::random_orthonormal: {
      // The first M columns of Q from the QR of a d x M Gaussian matrix are
      // the first M columns of a Haar-distributed orthogonal matrix.
      Rng rng = make_rng(seed, Stream::projection, 0);
      std::normal_distribution<double> nd(0.0, 1.0);
      Matrix G(d, M);
      for (Eigen::Index j = 0; j < M; ++j)
        for (Eigen::Index i = 0; i < d; ++i) G(i, j) = nd(rng);
      Eigen::HouseholderQR<Matrix> qr(G);
      Matrix Q = qr.householderQ() * Matrix::Identity(d, M);
      return ProjectionMatrix(kind, M, d, seed, Q.transpose());
    }

    case ProjectionKind::hadamard: {
      if (!detail::is_power_of_two(d))
        throw ConfigError("gen_projection: hadamard needs d a power of two (d=" + std::to_string(d) +
                          "); use dct or random kinds");
      Rng rng = make_rng(seed, Stream::projection, 1);
      const Vector signs = detail::random_signs(rng, d);
      const auto rows = detail::random_rows(rng, M, d);
      const double scale = 1.0 / std::sqrt(static_cast<double>(d));
      Matrix A(M, d);
      for (Eigen::Index r = 0; r < M; ++r) {
        const auto i = static_cast<unsigned long long>(rows[static_cast<std::size_t>(r)]);
        for (Eigen::Index j = 0; j < d; ++j) {
          const int parity = __builtin_popcountll(i & static_cast<unsigned long long>(j)) & 1;
          A(r, j) = (parity ? -scale : scale) * signs[j];
        }
      }
      return ProjectionMatrix(kind, M, d, seed, std::move(A));
    }

    case ProjectionKind::dct: {
      Rng rng = make_rng(seed, Stream::projection, 2);
      const Vector signs = detail::random_signs(rng, d);
      const auto rows = detail::random_rows(rng, M, d);
      const double dd = static_cast<double>(d);
      Matrix A(M, d);
      for (Eigen::Index r = 0; r < M; ++r) {
        const auto k = static_cast<double>(rows[static_cast<std::size_t>(r)]);
        const double s = k == 0.0 ? std::sqrt(1.0 / dd) : std::sqrt(2.0 / dd);
        for (Eigen::Index n = 0; n < d; ++n)
          A(r, n) = s * std::cos(M_PI * (static_cast<double>(n) + 0.5) * k / dd) * signs[n];
      }
      return ProjectionMatrix(kind, M, d, seed, std::move(A));
    }
  }
  throw ConfigError("gen_projection: invalid kind");
}

/// x = A * x_tilde.
inline Vector project(const ProjectionMatrix& A, const Vector& x_tilde) { return A.apply(x_tilde); }

/// Power-iteration estimate of ||A||_2.
inline double spectral_norm_estimate(const ProjectionMatrix& A, int iterations = 100,
                                     std::uint64_t seed = 0) {
  Rng rng(seed);
  Vector v = gaussian_vector(rng, A.cols());
  v.normalize();
  double sigma = 0.0;
  for (int it = 0; it < iterations; ++it) {
    Vector w = A.apply_transpose(A.apply(v));
    const double n = w.norm();
    if (n == 0.0) return 0.0;
    sigma = std::sqrt(n);
    v = w / n;
  }
  return sigma;
}

}  // namespace airfl
