#pragma once

// Flat key=value configuration with dotted keys, e.g.
//
//   # comment
//   channel.snr_db = 30
//   compression.k_over_d = 0.1
//   schemes = vanilla,clip,scale

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "airfl/channel.hpp"
#include "airfl/common.hpp"
#include "airfl/compression.hpp"
#include "airfl/learning.hpp"
#include "airfl/protocol.hpp"
#include "airfl/recovery.hpp"

namespace airfl::harness {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

inline std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, sep)) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

class KeyValues {
 public:
  static KeyValues parse(std::istream& in, const std::string& origin = "<config>") {
    KeyValues kv;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      const auto hash = line.find('#');
      if (hash != std::string::npos) line = line.substr(0, hash);
      line = trim(line);
      if (line.empty()) continue;
      const auto eq = line.find('=');
      if (eq == std::string::npos)
        throw ConfigError(origin + ":" + std::to_string(lineno) + ": expected key = value");
      kv.set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    }
    return kv;
  }

  static KeyValues load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file '" + path + "'");
    return parse(in, path);
  }

  static KeyValues from_string(const std::string& text) {
    std::istringstream in(text);
    return parse(in);
  }

  void set(const std::string& key, const std::string& value) { values_[key] = value; }
  bool has(const std::string& key) const { return values_.count(key) > 0; }

  std::string str(const std::string& key, const std::string& def) const {
    used_.insert(key);
    const auto it = values_.find(key);
    return it == values_.end() ? def : it->second;
  }

  double real(const std::string& key, double def) const {
    used_.insert(key);
    const auto it = values_.find(key);
    if (it == values_.end()) return def;
    try {
      std::size_t pos = 0;
      const double v = std::stod(it->second, &pos);
      if (pos != it->second.size()) throw std::invalid_argument("trailing");
      return v;
    } catch (const std::exception&) {
      throw ConfigError("config key '" + key + "': expected a number, got '" + it->second + "'");
    }
  }

  long integer(const std::string& key, long def) const {
    const double v = real(key, static_cast<double>(def));
    if (v != std::floor(v)) throw ConfigError("config key '" + key + "': expected an integer");
    return static_cast<long>(v);
  }

  bool boolean(const std::string& key, bool def) const {
    const std::string v = str(key, def ? "true" : "false");
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    throw ConfigError("config key '" + key + "': expected true/false, got '" + v + "'");
  }

  std::vector<double> reals(const std::string& key, const std::vector<double>& def) const {
    used_.insert(key);
    if (!has(key)) return def;
    std::vector<double> out;
    for (const auto& item : split(values_.at(key), ',')) {
      try {
        out.push_back(std::stod(item));
      } catch (const std::exception&) {
        throw ConfigError("config key '" + key + "': bad number '" + item + "'");
      }
    }
    return out;
  }

  /// Keys present in the document but never read.
  std::vector<std::string> unused() const {
    std::vector<std::string> out;
    for (const auto& [k, v] : values_)
      if (!used_.count(k)) out.push_back(k);
    return out;
  }

  const std::map<std::string, std::string>& values() const { return values_; }

 private:
  std::map<std::string, std::string> values_;
  mutable std::set<std::string> used_;
};

/// Everything a run needs, with defaults matching the reference experiment
/// where one exists (R = 20, batch 128, Q = 1, k/d = 0.1, SNR 30 dB, 20
/// estimator iterations, P = 2e-5 d).
struct ExperimentConfig {
  std::vector<Scheme> schemes{Scheme::clip_comp};
  std::vector<std::uint64_t> seeds{0};

  // data
  std::string data_source = "synthetic";
  int num_classes = 10;
  int features = 32;
  int train_size = 6000;
  int test_size = 1000;
  double separation = 3.0;
  std::uint64_t data_seed = 0;
  int excluded_per_device = 4;
  int samples_per_device = 300;
  std::string idx_train_images, idx_train_labels, idx_test_images, idx_test_labels;
  long subset = 6000;

  // model
  ModelKind model_kind = ModelKind::logistic;
  int hidden = 32;
  double init_scale = 0.1;

  // federation
  int devices = 20;
  int batch = 128;
  Schedule schedule{120.0, 300.0, 1, 300};

  // compression
  double k_over_d = 0.1;
  double m_over_d = 0.6;
  ProjectionKind projection = ProjectionKind::random_orthonormal;
  bool fixed_projection = false;

  // channel
  bool snr_given = true;
  double snr_db = 30.0;
  double sigma2 = 0.0;
  double power_per_dim = 2e-5;
  double power = -1.0;  // absolute P; < 0 means power_per_dim * d

  // recovery
  EstimatorKind estimator = EstimatorKind::oamp;
  int est_iterations = 20;
  double sparsity = 0.1;
  double prior_var = -1.0;  // < 0 means P/d
  double damping = 1.0;
  bool debias = true;

  bool descale = true;

  // bound
  double bound_L = 100.0;
  double bound_G = 100.0;
  double bound_sigma_l2 = 1.0;
  double bound_sigma_g2 = 1.0;
  double bound_f_star = 0.0;
  double bound_f0 = -1.0;  // < 0 means measured initial global loss
  double bound_a = -1.0;   // < 0 means schedule.a

  std::vector<double> md_grid{0.2, 0.4, 0.6, 0.8};

  std::string output_dir;
  bool wall_clock = false;

  // probe
  int probe_points = 10;
  int probe_batches = 100;

  // ----- derived quantities for a model of dimension d
  Eigen::Index k_for(Eigen::Index d) const {
    return std::clamp<Eigen::Index>(static_cast<Eigen::Index>(std::llround(k_over_d * static_cast<double>(d))), 1, d);
  }
  Eigen::Index m_for(Eigen::Index d, double md) const {
    return std::clamp<Eigen::Index>(static_cast<Eigen::Index>(std::llround(md * static_cast<double>(d))), 1, d);
  }
  double power_for(Eigen::Index d) const { return power > 0.0 ? power : power_per_dim * static_cast<double>(d); }
  double sigma2_for(Eigen::Index d) const {
    return snr_given ? ChannelConfig::sigma2_from_snr(power_for(d), d, snr_db) : sigma2;
  }
  EstimatorConfig estimator_for(Eigen::Index d) const {
    EstimatorConfig e;
    e.kind = estimator;
    e.iterations = est_iterations;
    e.damping = damping;
    e.debias = debias;
    e.prior.rho = sparsity;
    e.prior.var = prior_var > 0.0 ? prior_var : power_for(d) / static_cast<double>(d);
    return e;
  }
  double bound_a_value() const { return bound_a > 0.0 ? bound_a : schedule.a; }
};

inline std::string default_output_dir() {
  const char* env = std::getenv("AIRFL_OUT");
  return env && *env ? env : "airfl_out";
}

inline ExperimentConfig parse_experiment_config(const KeyValues& kv, bool reject_unknown = true) {
  ExperimentConfig c;
  if (kv.has("schemes")) {
    c.schemes.clear();
    for (const auto& s : split(kv.str("schemes", ""), ',')) {
      try {
        c.schemes.push_back(parse_scheme(s));
      } catch (const ConfigError& e) {
        throw ConfigError("config key 'schemes': " + std::string(e.what()));
      }
    }
  }
  if (kv.has("seeds")) {
    c.seeds.clear();
    for (double s : kv.reals("seeds", {})) c.seeds.push_back(static_cast<std::uint64_t>(s));
  }

  c.data_source = kv.str("data.source", c.data_source);
  c.num_classes = static_cast<int>(kv.integer("data.num_classes", c.num_classes));
  c.features = static_cast<int>(kv.integer("data.features", c.features));
  c.train_size = static_cast<int>(kv.integer("data.train_size", c.train_size));
  c.test_size = static_cast<int>(kv.integer("data.test_size", c.test_size));
  c.separation = kv.real("data.separation", c.separation);
  c.data_seed = static_cast<std::uint64_t>(kv.integer("data.seed", static_cast<long>(c.data_seed)));
  c.excluded_per_device = static_cast<int>(kv.integer("data.excluded_per_device", c.excluded_per_device));
  c.samples_per_device = static_cast<int>(kv.integer("data.samples_per_device", c.samples_per_device));
  c.idx_train_images = kv.str("data.idx.train_images", "");
  c.idx_train_labels = kv.str("data.idx.train_labels", "");
  c.idx_test_images = kv.str("data.idx.test_images", "");
  c.idx_test_labels = kv.str("data.idx.test_labels", "");
  c.subset = kv.integer("data.subset", c.subset);

  try {
    c.model_kind = parse_model_kind(kv.str("model.kind", to_string(c.model_kind)));
  } catch (const ConfigError& e) {
    throw ConfigError("config key 'model.kind': " + std::string(e.what()));
  }
  c.hidden = static_cast<int>(kv.integer("model.hidden", c.hidden));
  c.init_scale = kv.real("model.init_scale", c.init_scale);

  c.devices = static_cast<int>(kv.integer("fl.devices", c.devices));
  c.batch = static_cast<int>(kv.integer("fl.batch", c.batch));
  c.schedule.xi = kv.real("schedule.xi", c.schedule.xi);
  c.schedule.a = kv.real("schedule.a", c.schedule.a);
  c.schedule.Q = static_cast<int>(kv.integer("schedule.Q", c.schedule.Q));
  c.schedule.T = static_cast<int>(kv.integer("schedule.T", c.schedule.T));

  c.k_over_d = kv.real("compression.k_over_d", c.k_over_d);
  c.m_over_d = kv.real("compression.m_over_d", c.m_over_d);
  try {
    c.projection = parse_projection_kind(kv.str("compression.projection", "random"));
  } catch (const ConfigError& e) {
    throw ConfigError("config key 'compression.projection': " + std::string(e.what()));
  }
  c.fixed_projection = kv.boolean("compression.fixed_projection", c.fixed_projection);

  if (kv.has("channel.snr_db") && kv.has("channel.sigma2"))
    throw ConfigError("config keys 'channel.snr_db' and 'channel.sigma2' are mutually exclusive");
  if (kv.has("channel.sigma2")) {
    c.snr_given = false;
    c.sigma2 = kv.real("channel.sigma2", 0.0);
  } else {
    c.snr_db = kv.real("channel.snr_db", c.snr_db);
  }
  c.power_per_dim = kv.real("channel.power_per_dim", c.power_per_dim);
  c.power = kv.real("channel.power", c.power);

  try {
    c.estimator = parse_estimator_kind(kv.str("recovery.kind", to_string(c.estimator)));
  } catch (const ConfigError& e) {
    throw ConfigError("config key 'recovery.kind': " + std::string(e.what()));
  }
  c.est_iterations = static_cast<int>(kv.integer("recovery.iterations", c.est_iterations));
  c.sparsity = kv.real("recovery.sparsity", c.sparsity);
  c.prior_var = kv.real("recovery.prior_var", c.prior_var);
  c.damping = kv.real("recovery.damping", c.damping);
  c.debias = kv.boolean("recovery.debias", c.debias);

  c.descale = kv.boolean("scale.descale", c.descale);

  c.bound_L = kv.real("bound.L", c.bound_L);
  c.bound_G = kv.real("bound.G", c.bound_G);
  c.bound_sigma_l2 = kv.real("bound.sigma_l2", c.bound_sigma_l2);
  c.bound_sigma_g2 = kv.real("bound.sigma_g2", c.bound_sigma_g2);
  c.bound_f_star = kv.real("bound.f_star", c.bound_f_star);
  c.bound_f0 = kv.real("bound.f0", c.bound_f0);
  c.bound_a = kv.real("bound.a", c.bound_a);

  c.md_grid = kv.reals("sweep.md_grid", c.md_grid);
  c.output_dir = kv.str("output.dir", "");
  c.wall_clock = kv.boolean("output.wall_clock", c.wall_clock);
  c.probe_points = static_cast<int>(kv.integer("probe.points", c.probe_points));
  c.probe_batches = static_cast<int>(kv.integer("probe.batches", c.probe_batches));

  // Validation, naming the offending key.
  auto check = [](bool ok, const std::string& key, const std::string& what) {
    if (!ok) throw ConfigError("config key '" + key + "': " + what);
  };
  check(!c.schemes.empty(), "schemes", "at least one scheme required");
  check(!c.seeds.empty(), "seeds", "at least one seed required");
  check(c.data_source == "synthetic" || c.data_source == "idx", "data.source", "must be synthetic or idx");
  check(c.num_classes >= 2, "data.num_classes", "must be >= 2");
  check(c.features >= 1, "data.features", "must be >= 1");
  check(c.train_size >= c.num_classes, "data.train_size", "must be >= num_classes");
  check(c.test_size >= 0, "data.test_size", "must be >= 0");
  check(c.excluded_per_device >= 0 && c.excluded_per_device < c.num_classes, "data.excluded_per_device",
        "must be in [0, num_classes)");
  check(c.samples_per_device >= c.num_classes - c.excluded_per_device, "data.samples_per_device",
        "must cover every available class");
  check(c.hidden >= 1, "model.hidden", "must be >= 1");
  check(c.devices >= 1, "fl.devices", "must be >= 1");
  check(c.batch >= 1, "fl.batch", "must be >= 1");
  check(c.schedule.xi > 0.0, "schedule.xi", "must be positive");
  check(c.schedule.a > 0.0, "schedule.a", "must be positive");
  check(c.schedule.Q >= 1, "schedule.Q", "must be >= 1");
  check(c.schedule.T >= 0, "schedule.T", "must be >= 0");
  check(c.k_over_d > 0.0 && c.k_over_d <= 1.0, "compression.k_over_d", "must be in (0, 1]");
  check(c.m_over_d > 0.0 && c.m_over_d <= 1.0, "compression.m_over_d", "must be in (0, 1]");
  check(c.snr_given || c.sigma2 >= 0.0, "channel.sigma2", "must be >= 0");
  check(c.power_per_dim > 0.0, "channel.power_per_dim", "must be positive");
  check(c.est_iterations >= 1, "recovery.iterations", "must be >= 1");
  check(c.sparsity > 0.0 && c.sparsity <= 1.0, "recovery.sparsity", "must be in (0, 1]");
  check(c.damping > 0.0 && c.damping <= 1.0, "recovery.damping", "must be in (0, 1]");
  for (double md : c.md_grid) check(md > 0.0 && md <= 1.0, "sweep.md_grid", "values must be in (0, 1]");
  if (c.data_source == "idx")
    check(!c.idx_train_images.empty() && !c.idx_train_labels.empty(), "data.idx.train_images",
          "idx source needs train image and label paths");

  if (reject_unknown) {
    const auto unknown = kv.unused();
    if (!unknown.empty()) throw ConfigError("unknown config key '" + unknown.front() + "'");
  }
  return c;
}

}  // namespace airfl::harness
