#pragma once

// Loss models, mini-batch gradients, local SGD and dataset handling.

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "airfl/common.hpp"

namespace airfl {

// ---------------------------------------------------------------------------
// Datasets

struct Dataset {
  Matrix features;          // n x p, one sample per row
  std::vector<int> labels;  // n
  int num_classes = 0;

  Eigen::Index size() const { return features.rows(); }
  Eigen::Index dim() const { return features.cols(); }

  /// Sample indices grouped by class.
  std::vector<std::vector<int>> class_index() const {
    std::vector<std::vector<int>> idx(static_cast<std::size_t>(num_classes));
    for (int i = 0; i < static_cast<int>(labels.size()); ++i)
      idx[static_cast<std::size_t>(labels[static_cast<std::size_t>(i)])].push_back(i);
    return idx;
  }

  std::vector<int> distinct_labels() const {
    std::vector<int> l = labels;
    std::sort(l.begin(), l.end());
    l.erase(std::unique(l.begin(), l.end()), l.end());
    return l;
  }

  void validate() const {
    require(size() > 0, "dataset: empty");
    require(static_cast<Eigen::Index>(labels.size()) == size(), "dataset: label count mismatch");
    for (int l : labels) require(l >= 0 && l < num_classes, "dataset: label out of range");
  }
};

inline std::vector<int> all_indices(const Dataset& data) {
  std::vector<int> idx(static_cast<std::size_t>(data.size()));
  std::iota(idx.begin(), idx.end(), 0);
  return idx;
}

/// Gaussian class-conditional clusters. Class means depend only on `seed`;
/// `split` selects an independent sample stream (0 = train, 1 = test, ...)
/// drawn around the same means.
inline Dataset synth_dataset(int num_classes, int p, int n, double separation, std::uint64_t seed,
                             std::uint64_t split = 0) {
  require(num_classes > 0 && p > 0 && n > 0, "synth_dataset: non-positive dimension");
  require(n >= num_classes, "synth_dataset: need n >= num_classes");
  Rng mean_rng = make_rng(seed, Stream::dataset, 0xFFFF);
  Matrix means(num_classes, p);
  for (int c = 0; c < num_classes; ++c)
    means.row(c) = gaussian_vector(mean_rng, p, separation / std::sqrt(static_cast<double>(p)));

  Rng rng = make_rng(seed, Stream::dataset, split);
  Dataset ds;
  ds.num_classes = num_classes;
  ds.features.resize(n, p);
  ds.labels.resize(static_cast<std::size_t>(n));
  std::normal_distribution<double> nd(0.0, 1.0);
  for (int i = 0; i < n; ++i) {
    const int c = i % num_classes;
    ds.labels[static_cast<std::size_t>(i)] = c;
    for (int j = 0; j < p; ++j) ds.features(i, j) = means(c, j) + nd(rng);
  }
  return ds;
}

/// Non-i.i.d. split: device i sees every class except `excluded_per_device`
/// consecutive classes starting at (offset + i * excluded_per_device) mod C,
/// where offset is drawn from `seed`. Samples are drawn with replacement,
/// equal count per available class.
inline std::vector<Dataset> partition_noniid(const Dataset& data, int R, int excluded_per_device,
                                             int samples_per_device, std::uint64_t seed) {
  require(R >= 1, "partition_noniid: R must be >= 1");
  require(excluded_per_device >= 0 && excluded_per_device < data.num_classes,
          "partition_noniid: excluded_per_device must be in [0, num_classes)");
  const int C = data.num_classes;
  const int available = C - excluded_per_device;
  const int per_class = samples_per_device / available;
  require(per_class >= 1, "partition_noniid: samples_per_device smaller than available classes");

  const auto by_class = data.class_index();
  Rng offset_rng = make_rng(seed, Stream::partition, 0xFFFF);
  const int offset = static_cast<int>(std::uniform_int_distribution<int>(0, C - 1)(offset_rng));

  std::vector<Dataset> out;
  out.reserve(static_cast<std::size_t>(R));
  for (int dev = 0; dev < R; ++dev) {
    std::vector<bool> excluded(static_cast<std::size_t>(C), false);
    for (int j = 0; j < excluded_per_device; ++j)
      excluded[static_cast<std::size_t>((offset + dev * excluded_per_device + j) % C)] = true;

    Rng rng = make_rng(seed, Stream::partition, dev);
    Dataset ds;
    ds.num_classes = C;
    ds.features.resize(static_cast<Eigen::Index>(per_class) * available, data.dim());
    Eigen::Index row = 0;
    for (int c = 0; c < C; ++c) {
      if (excluded[static_cast<std::size_t>(c)]) continue;
      const auto& pool = by_class[static_cast<std::size_t>(c)];
      require(!pool.empty(), "partition_noniid: class " + std::to_string(c) + " has no samples");
      std::uniform_int_distribution<std::size_t> pick(0, pool.size() - 1);
      for (int s = 0; s < per_class; ++s) {
        const int src = pool[pick(rng)];
        ds.features.row(row++) = data.features.row(src);
        ds.labels.push_back(c);
      }
    }
    out.push_back(std::move(ds));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Loss models

enum class ModelKind { logistic, mlp, quadratic };

inline std::string to_string(ModelKind k) {
  switch (k) {
    case ModelKind::logistic: return "logistic";
    case ModelKind::mlp: return "mlp";
    case ModelKind::quadratic: return "quadratic";
  }
  return "?";
}

inline ModelKind parse_model_kind(const std::string& s) {
  if (s == "logistic" || s == "multinomial-logistic") return ModelKind::logistic;
  if (s == "mlp" || s == "one-hidden-layer-mlp") return ModelKind::mlp;
  if (s == "quadratic") return ModelKind::quadratic;
  throw ConfigError("unknown model kind '" + s + "'");
}

/// Per-sample loss L(theta; xi) averaged over a set of samples.
///
/// - logistic: softmax cross-entropy, theta = [W (c x p, row-major), b (c)]
/// - mlp: tanh hidden layer of width h, theta = [W1 (h x p), b1 (h), W2 (c x h), b2 (c)]
/// - quadratic: 0.5 * ||theta - x||^2, labels ignored, d = p
class LossModel {
 public:
  LossModel(ModelKind kind, int p, int classes, int hidden = 0)
      : kind_(kind), p_(p), c_(classes), h_(hidden) {
    require(p > 0, "LossModel: p must be positive");
    if (kind != ModelKind::quadratic) require(classes >= 2, "LossModel: need >= 2 classes");
    if (kind == ModelKind::mlp) require(hidden > 0, "LossModel: mlp needs hidden > 0");
  }

  ModelKind kind() const { return kind_; }
  int features() const { return p_; }
  int classes() const { return c_; }
  int hidden() const { return h_; }

  Eigen::Index dim() const {
    switch (kind_) {
      case ModelKind::logistic: return static_cast<Eigen::Index>(c_) * (p_ + 1);
      case ModelKind::mlp:
        return static_cast<Eigen::Index>(h_) * (p_ + 1) + static_cast<Eigen::Index>(c_) * (h_ + 1);
      case ModelKind::quadratic: return p_;
    }
    return 0;
  }

  double loss(const Vector& theta, const Dataset& data, std::span<const int> idx) const {
    return eval(theta, data, idx, nullptr);
  }
  double loss(const Vector& theta, const Dataset& data) const {
    const auto idx = all_indices(data);
    return loss(theta, data, idx);
  }

  /// (1/|batch|) sum of per-sample gradients.
  Vector grad(const Vector& theta, const Dataset& data, std::span<const int> idx) const {
    Vector g;
    eval(theta, data, idx, &g);
    return g;
  }
  Vector grad(const Vector& theta, const Dataset& data) const {
    const auto idx = all_indices(data);
    return grad(theta, data, idx);
  }

  double accuracy(const Vector& theta, const Dataset& data) const {
    if (kind_ == ModelKind::quadratic || data.size() == 0) return 0.0;
    check_dims(theta, data);
    const Matrix logits = forward(theta, data.features);
    int correct = 0;
    for (Eigen::Index i = 0; i < logits.rows(); ++i) {
      Eigen::Index arg = 0;
      logits.row(i).maxCoeff(&arg);
      if (arg == data.labels[static_cast<std::size_t>(i)]) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(data.size());
  }

  /// Small seeded initialization for the MLP (symmetry breaking); zero otherwise.
  Vector initial_parameters(std::uint64_t seed, double scale = 0.1) const {
    Vector theta = Vector::Zero(dim());
    if (kind_ == ModelKind::mlp) {
      Rng rng = make_rng(seed, Stream::model_init);
      theta = gaussian_vector(rng, dim(), scale);
    }
    return theta;
  }

 private:
  using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

  void check_dims(const Vector& theta, const Dataset& data) const {
    if (theta.size() != dim())
      throw ConfigError("LossModel: parameter dimension " + std::to_string(theta.size()) +
                        " != model dimension " + std::to_string(dim()));
    if (data.dim() != p_)
      throw ConfigError("LossModel: feature dimension " + std::to_string(data.dim()) +
                        " != model input " + std::to_string(p_));
  }

  Matrix forward(const Vector& theta, const Matrix& X) const {
    if (kind_ == ModelKind::logistic) {
      Eigen::Map<const RowMat> W(theta.data(), c_, p_);
      Eigen::Map<const Vector> b(theta.data() + c_ * p_, c_);
      Matrix z = X * W.transpose();
      z.rowwise() += b.transpose();
      return z;
    }
    Eigen::Map<const RowMat> W1(theta.data(), h_, p_);
    Eigen::Map<const Vector> b1(theta.data() + h_ * p_, h_);
    const double* rest = theta.data() + h_ * (p_ + 1);
    Eigen::Map<const RowMat> W2(rest, c_, h_);
    Eigen::Map<const Vector> b2(rest + c_ * h_, c_);
    Matrix a = X * W1.transpose();
    a.rowwise() += b1.transpose();
    a = a.array().tanh().matrix();
    Matrix z = a * W2.transpose();
    z.rowwise() += b2.transpose();
    return z;
  }

  double eval(const Vector& theta, const Dataset& data, std::span<const int> idx, Vector* g) const {
    if (idx.empty()) throw ConfigError("LossModel: empty batch");
    check_dims(theta, data);
    const auto B = static_cast<Eigen::Index>(idx.size());
    Matrix X(B, p_);
    for (Eigen::Index i = 0; i < B; ++i) X.row(i) = data.features.row(idx[static_cast<std::size_t>(i)]);

    if (kind_ == ModelKind::quadratic) {
      Matrix diff = (-X).rowwise() + theta.transpose();
      if (g) *g = diff.colwise().mean().transpose();
      return 0.5 * diff.rowwise().squaredNorm().mean();
    }

    // Hidden activations are needed for both the mlp forward and backward pass.
    Matrix hidden;
    Matrix logits;
    if (kind_ == ModelKind::logistic) {
      logits = forward(theta, X);
    } else {
      Eigen::Map<const RowMat> W1(theta.data(), h_, p_);
      Eigen::Map<const Vector> b1(theta.data() + h_ * p_, h_);
      const double* rest = theta.data() + h_ * (p_ + 1);
      Eigen::Map<const RowMat> W2(rest, c_, h_);
      Eigen::Map<const Vector> b2(rest + c_ * h_, c_);
      hidden = X * W1.transpose();
      hidden.rowwise() += b1.transpose();
      hidden = hidden.array().tanh().matrix();
      logits = hidden * W2.transpose();
      logits.rowwise() += b2.transpose();
    }

    // Stable log-softmax.
    double total = 0.0;
    Matrix probs(B, c_);
    for (Eigen::Index i = 0; i < B; ++i) {
      const double mx = logits.row(i).maxCoeff();
      const Eigen::RowVectorXd e = (logits.row(i).array() - mx).exp().matrix();
      const double s = e.sum();
      const int y = data.labels[static_cast<std::size_t>(idx[static_cast<std::size_t>(i)])];
      total += -(logits(i, y) - mx - std::log(s));
      probs.row(i) = e / s;
      probs(i, y) -= 1.0;  // dL/dlogits
    }
    const double invB = 1.0 / static_cast<double>(B);

    if (g) {
      g->resize(dim());
      if (kind_ == ModelKind::logistic) {
        Eigen::Map<RowMat> gW(g->data(), c_, p_);
        Eigen::Map<Vector> gb(g->data() + c_ * p_, c_);
        gW = invB * probs.transpose() * X;
        gb = invB * probs.colwise().sum().transpose();
      } else {
        const double* rest = theta.data() + h_ * (p_ + 1);
        Eigen::Map<const RowMat> W2(rest, c_, h_);
        Eigen::Map<RowMat> gW1(g->data(), h_, p_);
        Eigen::Map<Vector> gb1(g->data() + h_ * p_, h_);
        double* grest = g->data() + h_ * (p_ + 1);
        Eigen::Map<RowMat> gW2(grest, c_, h_);
        Eigen::Map<Vector> gb2(grest + c_ * h_, c_);
        gW2 = invB * probs.transpose() * hidden;
        gb2 = invB * probs.colwise().sum().transpose();
        Matrix dh = probs * W2;
        dh = (dh.array() * (1.0 - hidden.array().square())).matrix();
        gW1 = invB * dh.transpose() * X;
        gb1 = invB * dh.colwise().sum().transpose();
      }
    }
    return total * invB;
  }

  ModelKind kind_;
  int p_;
  int c_;
  int h_;
};

// ---------------------------------------------------------------------------
// Sampling and local SGD

/// With-replacement mini-batch sampler. Draws are keyed by
/// (seed, device, round, local step), so there is no hidden stream state.
struct MiniBatchSampler {
  std::uint64_t seed = 0;
  int device = 0;
  int batch_size = 1;

  std::vector<int> draw(const Dataset& data, int t, int q) const {
    require(batch_size >= 1, "MiniBatchSampler: batch_size must be >= 1");
    require(data.size() > 0, "MiniBatchSampler: empty dataset");
    Rng rng = make_rng(seed, Stream::minibatch, device, t, q);
    std::uniform_int_distribution<int> pick(0, static_cast<int>(data.size()) - 1);
    std::vector<int> idx(static_cast<std::size_t>(batch_size));
    for (auto& i : idx) i = pick(rng);
    return idx;
  }
};

struct LocalSgdStats {
  double max_grad_norm = 0.0;
};

/// Q sequential steps theta <- theta - eta * grad_minibatch(theta), for round t.
inline Vector local_sgd(const LossModel& model, const Vector& theta_init, int Q, double eta,
                        const Dataset& data, const MiniBatchSampler& sampler, int t,
                        LocalSgdStats* stats = nullptr) {
  require(Q >= 1, "local_sgd: Q must be >= 1");
  require(eta >= 0.0, "local_sgd: eta must be non-negative");
  Vector theta = theta_init;
  for (int q = 0; q < Q; ++q) {
    const auto idx = sampler.draw(data, t, q);
    const Vector g = model.grad(theta, data, idx);
    if (stats) stats->max_grad_norm = std::max(stats->max_grad_norm, g.norm());
    theta -= eta * g;
    if (!all_finite(theta))
      throw NumericError("local_sgd: non-finite parameters at round " + std::to_string(t) +
                         ", local step q=" + std::to_string(q));
  }
  return theta;
}

/// Delta = theta_start - theta_end.
inline Vector model_diff(const Vector& theta_start, const Vector& theta_end) {
  require_same_dim(theta_start, theta_end, "model_diff");
  return theta_start - theta_end;
}

// ---------------------------------------------------------------------------
// IDX (MNIST-style) and CSV I/O

namespace detail {
inline std::uint32_t read_be32(std::istream& in) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  if (!in) throw Error("idx: truncated header");
  return (std::uint32_t{b[0]} << 24) | (std::uint32_t{b[1]} << 16) | (std::uint32_t{b[2]} << 8) |
         std::uint32_t{b[3]};
}
}  // namespace detail

inline constexpr std::uint32_t kIdxImagesMagic = 0x00000803;
inline constexpr std::uint32_t kIdxLabelsMagic = 0x00000801;

/// Pixels scaled to [0, 1]; `limit` < 0 reads all images.
inline Matrix read_idx_images(const std::string& path, long limit = -1) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("idx: cannot open " + path);
  const auto magic = detail::read_be32(in);
  if (magic != kIdxImagesMagic) throw Error("idx: bad image magic in " + path);
  const auto n = detail::read_be32(in);
  const auto rows = detail::read_be32(in);
  const auto cols = detail::read_be32(in);
  const long count = limit < 0 ? static_cast<long>(n) : std::min<long>(limit, n);
  const long p = static_cast<long>(rows) * static_cast<long>(cols);
  Matrix X(count, p);
  std::vector<unsigned char> buf(static_cast<std::size_t>(p));
  for (long i = 0; i < count; ++i) {
    in.read(reinterpret_cast<char*>(buf.data()), p);
    if (!in) throw Error("idx: truncated image data in " + path);
    for (long j = 0; j < p; ++j) X(i, j) = buf[static_cast<std::size_t>(j)] / 255.0;
  }
  return X;
}

inline std::vector<int> read_idx_labels(const std::string& path, long limit = -1) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("idx: cannot open " + path);
  if (detail::read_be32(in) != kIdxLabelsMagic) throw Error("idx: bad label magic in " + path);
  const auto n = detail::read_be32(in);
  const long count = limit < 0 ? static_cast<long>(n) : std::min<long>(limit, n);
  std::vector<int> y(static_cast<std::size_t>(count));
  for (auto& v : y) {
    const int c = in.get();
    if (c == EOF) throw Error("idx: truncated label data in " + path);
    v = c;
  }
  return y;
}

inline Dataset load_idx_dataset(const std::string& images, const std::string& labels, long limit = -1,
                                int num_classes = 10) {
  Dataset ds;
  ds.features = read_idx_images(images, limit);
  ds.labels = read_idx_labels(labels, limit);
  ds.num_classes = num_classes;
  ds.validate();
  return ds;
}

inline void write_dataset_csv(const Dataset& data, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path);
  for (Eigen::Index j = 0; j < data.dim(); ++j) out << "feature_" << j << ',';
  out << "label\n";
  out.precision(17);
  for (Eigen::Index i = 0; i < data.size(); ++i) {
    for (Eigen::Index j = 0; j < data.dim(); ++j) out << data.features(i, j) << ',';
    out << data.labels[static_cast<std::size_t>(i)] << '\n';
  }
}

inline Dataset read_dataset_csv(const std::string& path, int num_classes) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path);
  std::string line;
  std::getline(in, line);
  const auto p = static_cast<Eigen::Index>(std::count(line.begin(), line.end(), ','));
  std::vector<double> vals;
  Dataset ds;
  ds.num_classes = num_classes;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    for (Eigen::Index j = 0; j < p; ++j) {
      std::getline(ss, cell, ',');
      vals.push_back(std::stod(cell));
    }
    std::getline(ss, cell, ',');
    ds.labels.push_back(std::stoi(cell));
  }
  ds.features.resize(static_cast<Eigen::Index>(ds.labels.size()), p);
  for (Eigen::Index i = 0; i < ds.features.rows(); ++i)
    for (Eigen::Index j = 0; j < p; ++j)
      ds.features(i, j) = vals[static_cast<std::size_t>(i * p + j)];
  ds.validate();
  return ds;
}

}  // namespace airfl
