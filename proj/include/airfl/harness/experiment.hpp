#pragma once

// Experiment orchestration: task construction, per-(scheme, seed) runs,
// CSV/manifest export, assumption probing and bound evaluation.

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "airfl/bound.hpp"
#include "airfl/bound_sweep.hpp"
#include "airfl/harness/config.hpp"
#include "airfl/harness/svg.hpp"
#include "airfl/learning.hpp"
#include "airfl/protocol.hpp"
#include "airfl/recovery.hpp"

namespace airfl::harness {

inline const char* kMetricsHeader =
    "seed,scheme,t,eta,train_loss,test_acc,mean_alpha,max_alpha,max_mem_sq,max_power,v_hat,wall_ms";
inline const char* kSummaryHeader = "scheme,seeds,final_loss_mean,final_loss_std,final_loss_se";
inline const char* kSweepHeader = "m_over_d,loss_mean,loss_std,bound_total,bound_rescaled,recovery_term";

inline std::string fmt17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

struct Task {
  LossModel model;
  Dataset train;
  Dataset test;
};

inline Task build_task(const ExperimentConfig& c) {
  Dataset train, test;
  if (c.data_source == "idx") {
    train = load_idx_dataset(c.idx_train_images, c.idx_train_labels, c.subset, c.num_classes);
    if (!c.idx_test_images.empty())
      test = load_idx_dataset(c.idx_test_images, c.idx_test_labels, c.test_size, c.num_classes);
  } else {
    train = synth_dataset(c.num_classes, c.features, c.train_size, c.separation, c.data_seed, 0);
    if (c.test_size > 0) test = synth_dataset(c.num_classes, c.features, c.test_size, c.separation, c.data_seed, 1);
  }
  LossModel model(c.model_kind, static_cast<int>(train.dim()), c.num_classes, c.hidden);
  return {model, std::move(train), std::move(test)};
}

/// ExperimentSetup for one (scheme, seed) with compression ratio `md`.
inline ExperimentSetup make_setup(const ExperimentConfig& c, const Task& task, Scheme scheme, std::uint64_t seed,
                                  double md) {
  const Eigen::Index d = task.model.dim();
  ExperimentSetup s;
  s.scheme = scheme;
  s.model = &task.model;
  s.train = &task.train;
  s.test = task.test.size() > 0 ? &task.test : nullptr;
  s.device_data = partition_noniid(task.train, c.devices, c.excluded_per_device, c.samples_per_device, seed);
  s.schedule = c.schedule;
  s.batch_size = c.batch;
  s.k = c.k_for(d);
  s.M = c.m_for(d, md);
  s.projection = c.projection;
  s.fixed_projection = c.fixed_projection;
  s.channel.power = c.power_for(d);
  s.channel.sigma2 = c.sigma2_for(d);
  s.channel.d = d;
  s.estimator = c.estimator_for(d);
  s.descale = c.descale;
  s.seed = seed;
  s.theta0 = task.model.initial_parameters(seed, c.init_scale);
  s.record_wall_clock = c.wall_clock;
  return s;
}

inline std::string metrics_row(std::uint64_t seed, Scheme scheme, const RoundRecord& r) {
  std::string o = std::to_string(seed) + "," + to_string(scheme) + "," + std::to_string(r.t);
  for (double v : {r.eta, r.train_loss, r.test_acc, r.mean_alpha(), r.max_alpha(), r.max_mem_sq(), r.max_power(),
                   r.v_hat, r.wall_ms})
    o += "," + fmt17(v);
  return o;
}

inline void write_metrics_csv(const std::string& path, std::uint64_t seed, Scheme scheme,
                              const std::vector<RoundRecord>& records) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path);
  out << kMetricsHeader << '\n';
  for (const auto& r : records) out << metrics_row(seed, scheme, r) << '\n';
}

struct MeanStd {
  double mean = std::numeric_limits<double>::quiet_NaN();
  double std = std::numeric_limits<double>::quiet_NaN();  // sample (n - 1) standard deviation
  double se = std::numeric_limits<double>::quiet_NaN();
  std::size_t n = 0;
};

inline MeanStd mean_std(const std::vector<double>& v) {
  MeanStd m;
  m.n = v.size();
  if (v.empty()) return m;
  double s = 0.0;
  for (double x : v) s += x;
  m.mean = s / static_cast<double>(v.size());
  double ss = 0.0;
  for (double x : v) ss += (x - m.mean) * (x - m.mean);
  m.std = v.size() > 1 ? std::sqrt(ss / static_cast<double>(v.size() - 1)) : 0.0;
  m.se = m.std / std::sqrt(static_cast<double>(v.size()));
  return m;
}

inline void write_manifest(const std::string& path, const KeyValues& kv, const ExperimentConfig& c, const Task& task,
                           const std::string& command) {
  const Eigen::Index d = task.model.dim();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path);
  out << "# airfl run manifest\n";
  out << "command = " << command << '\n';
  out << "# configuration as given\n";
  for (const auto& [k, v] : kv.values()) out << k << " = " << v << '\n';
  out << "# resolved values\n";
  out << "resolved.d = " << d << '\n';
  out << "resolved.k = " << c.k_for(d) << '\n';
  out << "resolved.M = " << c.m_for(d, c.m_over_d) << '\n';
  out << "resolved.power = " << fmt17(c.power_for(d)) << '\n';
  out << "resolved.sigma2 = " << fmt17(c.sigma2_for(d)) << '\n';
  out << "resolved.prior_var = " << fmt17(c.estimator_for(d).prior.var) << '\n';
  out << "resolved.seeds = ";
  for (std::size_t i = 0; i < c.seeds.size(); ++i) out << (i ? "," : "") << c.seeds[i];
  out << '\n';
  out << "resolved.projection = " << to_string(c.projection) << (c.fixed_projection ? " (fixed)" : " (per round)")
      << '\n';
  out << "# modeling choices\n";
  out << "model.oamp_linear_stage = decorrelated matched filter (d/M) A^T, residual-based variance estimate\n";
  out << "model.oamp_damping = " << fmt17(c.damping) << '\n';
  out << "model.oamp_debias = " << (c.debias ? "true (estimate rescaled so its error is uncorrelated with the signal)" : "false (posterior mean)") << '\n';
  out << "model.scale_alignment = round-common alpha_t = min_i P/||u_i||^2\n";
  out << "model.scale_descale = " << (c.descale ? "true" : "false") << '\n';
  out << "model.partition = seeded round-robin class exclusion, sampling with replacement\n";
  out << "model.minibatch_rng = keyed by (seed, device, round, local step)\n";
  out << "model.projection_rng = keyed by (seed, round)\n";
  out << "model.noise_rng = keyed by (seed, round)\n";
  out << "model.train_loss = global training set\n";
}

inline void ensure_dir(const std::string& dir) { std::filesystem::create_directories(dir); }

// ---------------------------------------------------------------------------
// Commands. Each returns a process exit code: 0 ok, 1 runtime failure,
// 2 invalid configuration.

struct CommandOptions {
  std::string config_path;
  std::string out_dir;                 // overrides output.dir
  std::vector<std::uint64_t> seeds;    // overrides seeds
  std::string scheme;                  // overrides schemes
  std::vector<double> grid;            // overrides sweep.md_grid
};

inline KeyValues load_with_overrides(const CommandOptions& opt) {
  KeyValues kv = opt.config_path.empty() ? KeyValues{} : KeyValues::load(opt.config_path);
  if (!opt.seeds.empty()) {
    std::string s;
    for (std::size_t i = 0; i < opt.seeds.size(); ++i) s += (i ? "," : "") + std::to_string(opt.seeds[i]);
    kv.set("seeds", s);
  }
  if (!opt.scheme.empty()) kv.set("schemes", opt.scheme);
  if (!opt.out_dir.empty()) kv.set("output.dir", opt.out_dir);
  if (!opt.grid.empty()) {
    std::string s;
    for (std::size_t i = 0; i < opt.grid.size(); ++i) s += (i ? "," : "") + fmt17(opt.grid[i]);
    kv.set("sweep.md_grid", s);
  }
  return kv;
}

inline std::string resolve_out(const ExperimentConfig& c) {
  return c.output_dir.empty() ? default_output_dir() : c.output_dir;
}

/// Runs every (scheme, seed); returns the final training losses per scheme.
inline std::map<Scheme, std::vector<double>> run_all(const ExperimentConfig& c, const Task& task,
                                                     const std::string& out_dir, std::ostream& log) {
  std::map<Scheme, std::vector<double>> finals;
  for (Scheme scheme : c.schemes) {
    for (std::uint64_t seed : c.seeds) {
      ExperimentSetup s = make_setup(c, task, scheme, seed, c.m_over_d);
      const ExperimentResult res = run_experiment(s);
      const std::string path = out_dir + "/metrics_" + to_string(scheme) + "_seed" + std::to_string(seed) + ".csv";
      write_metrics_csv(path, seed, scheme, res.records);
      if (!res.records.empty()) finals[scheme].push_back(res.records.back().train_loss);
      log << to_string(scheme) << " seed " << seed << ": "
          << (res.records.empty() ? std::string("no rounds") : "final loss " + fmt17(res.records.back().train_loss))
          << '\n';
    }
  }
  return finals;
}

inline int cmd_run(const CommandOptions& opt, std::ostream& log = std::cout, std::ostream& err = std::cerr) {
  KeyValues kv;
  ExperimentConfig c;
  try {
    kv = load_with_overrides(opt);
    c = parse_experiment_config(kv);
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << '\n';
    return 2;
  }
  try {
    const Task task = build_task(c);
    const std::string out = resolve_out(c);
    ensure_dir(out);
    write_manifest(out + "/manifest.txt", kv, c, task, "run");
    const auto finals = run_all(c, task, out, log);
    std::ofstream sum(out + "/summary.csv", std::ios::binary);
    sum << kSummaryHeader << '\n';
    for (Scheme scheme : c.schemes) {
      const auto it = finals.find(scheme);
      const MeanStd m = mean_std(it == finals.end() ? std::vector<double>{} : it->second);
      sum << to_string(scheme) << ',' << m.n << ',' << fmt17(m.mean) << ',' << fmt17(m.std) << ',' << fmt17(m.se)
          << '\n';
    }
    return 0;
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    err << "runtime failure: " << e.what() << '\n';
    return 1;
  }
}

/// Bound template for a task (f0 measured at theta_0 unless configured).
inline BoundInputs bound_template(const ExperimentConfig& c, const Task& task) {
  const Eigen::Index d = task.model.dim();
  BoundInputs in;
  in.L = c.bound_L;
  in.G = c.bound_G;
  in.sigma_l2 = c.bound_sigma_l2;
  in.sigma_g2 = c.bound_sigma_g2;
  double f0 = c.bound_f0;
  if (f0 < 0.0) {
    const std::uint64_t seed = c.seeds.empty() ? 0 : c.seeds.front();
    f0 = task.model.loss(task.model.initial_parameters(seed, c.init_scale), task.train);
  }
  in.f0_minus_fstar = std::max(0.0, f0 - c.bound_f_star);
  in.xi = c.schedule.xi;
  in.a = c.bound_a_value();
  in.Q = c.schedule.Q;
  in.T = std::max(1, c.schedule.T);
  in.R = c.devices;
  in.d = static_cast<double>(d);
  in.lambda = static_cast<double>(c.k_for(d)) / static_cast<double>(d);
  in.P = c.power_for(d);
  return in;
}

struct SweepResult {
  std::vector<double> md;
  std::vector<MeanStd> loss;
  std::vector<SweepRow> bound;
};

inline int cmd_sweep_md(const CommandOptions& opt, std::ostream& log = std::cout, std::ostream& err = std::cerr,
                        SweepResult* result = nullptr) {
  KeyValues kv;
  ExperimentConfig c;
  try {
    kv = load_with_overrides(opt);
    c = parse_experiment_config(kv);
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << '\n';
    return 2;
  }
  try {
    const Task task = build_task(c);
    const Eigen::Index d = task.model.dim();
    const std::string out = resolve_out(c);
    ensure_dir(out);
    write_manifest(out + "/manifest.txt", kv, c, task, "sweep-md");

    const BoundInputs tmpl = bound_template(c, task);
    const auto rows = bound_sweep_md(tmpl, c.md_grid, c.estimator_for(d), c.sigma2_for(d));
    const ScheduleReport sched = check_schedule(tmpl.xi, tmpl.a, tmpl.Q, tmpl.lambda, tmpl.L, tmpl.T);

    SweepResult sr;
    for (double md : c.md_grid) {
      std::vector<double> finals;
      for (std::uint64_t seed : c.seeds) {
        ExperimentSetup s = make_setup(c, task, Scheme::clip_comp, seed, md);
        const ExperimentResult res = run_experiment(s);
        const double final_loss =
            res.records.empty() ? task.model.loss(s.theta0, task.train) : res.records.back().train_loss;
        finals.push_back(final_loss);
        const std::string path = out + "/metrics_clip_comp_md" + fmt17(md) + "_seed" + std::to_string(seed) + ".csv";
        write_metrics_csv(path, seed, Scheme::clip_comp, res.records);
      }
      sr.md.push_back(md);
      sr.loss.push_back(mean_std(finals));
      log << "M/d " << md << ": final loss " << fmt17(sr.loss.back().mean) << " +- " << fmt17(sr.loss.back().std)
          << '\n';
    }
    sr.bound = rows;

    std::ofstream csv(out + "/sweep_md.csv", std::ios::binary);
    csv << kSweepHeader << '\n';
    for (std::size_t i = 0; i < sr.md.size(); ++i)
      csv << fmt17(sr.md[i]) << ',' << fmt17(sr.loss[i].mean) << ',' << fmt17(sr.loss[i].std) << ','
          << fmt17(rows[i].breakdown.total) << ',' << fmt17(rows[i].rescaled) << ','
          << fmt17(rows[i].breakdown.recovery) << '\n';
    std::ofstream bcsv(out + "/sweep_md_bound.csv", std::ios::binary);
    bcsv << kBoundCsvHeader << '\n';
    for (const auto& r : rows) bcsv << bound_csv_row(r.m_over_d, r.breakdown, sched.conformant()) << '\n';

    Series emp{"empirical final loss (clip_comp)", sr.md, {}, "#1f77b4", false};
    for (const auto& m : sr.loss) emp.y.push_back(m.mean);
    Series bnd{"rescaled bound", sr.md, {}, "#d62728", true};
    for (const auto& r : rows) bnd.y.push_back(r.rescaled);
    write_text(out + "/sweep_md.svg",
               render_line_chart("Final loss and bound versus M/d", "M/d", "training loss", "rescaled bound", {emp, bnd}));
    if (result) *result = std::move(sr);
    return 0;
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    err << "runtime failure: " << e.what() << '\n';
    return 1;
  }
}

// ---------------------------------------------------------------------------
// Assumption probe

struct ProbeReport {
  double L = 0.0;
  double G = 0.0;
  double sigma_l2 = 0.0;
  double sigma_g2 = 0.0;
  double f0 = 0.0;
};

/// Empirical smoothness, gradient-norm, variance and heterogeneity constants
/// at the given iterates. f is the device average of the local losses.
inline ProbeReport probe_assumptions(const LossModel& model, const std::vector<Dataset>& devices,
                                     const std::vector<Vector>& points, int batch_size, int batches,
                                     std::uint64_t seed) {
  require(!devices.empty() && !points.empty(), "probe: need devices and points");
  ProbeReport rep;
  const double R = static_cast<double>(devices.size());
  std::vector<std::vector<Vector>> full(points.size());
  for (std::size_t p = 0; p < points.size(); ++p) {
    Vector global = Vector::Zero(model.dim());
    for (std::size_t i = 0; i < devices.size(); ++i) {
      full[p].push_back(model.grad(points[p], devices[i]));
      global += full[p].back();
    }
    global /= R;
    for (std::size_t i = 0; i < devices.size(); ++i) {
      rep.sigma_g2 = std::max(rep.sigma_g2, (full[p][i] - global).squaredNorm());
      Rng rng = make_rng(seed, Stream::probe, p, i);
      std::uniform_int_distribution<int> pick(0, static_cast<int>(devices[i].size()) - 1);
      double var = 0.0;
      std::vector<int> idx(static_cast<std::size_t>(batch_size));
      for (int b = 0; b < batches; ++b) {
        for (auto& j : idx) j = pick(rng);
        const Vector g = model.grad(points[p], devices[i], idx);
        rep.G = std::max(rep.G, g.norm());
        var += (g - full[p][i]).squaredNorm();
      }
      rep.sigma_l2 = std::max(rep.sigma_l2, var / std::max(1, batches));
    }
  }
  for (std::size_t a = 0; a < points.size(); ++a)
    for (std::size_t b = a + 1; b < points.size(); ++b) {
      const double dist = (points[a] - points[b]).norm();
      if (dist == 0.0) continue;
      for (std::size_t i = 0; i < devices.size(); ++i)
        rep.L = std::max(rep.L, (full[a][i] - full[b][i]).norm() / dist);
    }
  double f0 = 0.0;
  for (const auto& dev : devices) f0 += model.loss(points.front(), dev);
  rep.f0 = f0 / R;
  return rep;
}

inline int cmd_assumption_probe(const CommandOptions& opt, std::ostream& log = std::cout,
                                std::ostream& err = std::cerr, ProbeReport* result = nullptr) {
  KeyValues kv;
  ExperimentConfig c;
  try {
    kv = load_with_overrides(opt);
    c = parse_experiment_config(kv);
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << '\n';
    return 2;
  }
  try {
    const Task task = build_task(c);
    const Eigen::Index d = task.model.dim();
    const std::string out = resolve_out(c);
    ensure_dir(out);
    write_manifest(out + "/manifest.txt", kv, c, task, "assumption-probe");

    const std::uint64_t seed = c.seeds.front();
    ExperimentSetup s = make_setup(c, task, c.schemes.front(), seed, c.m_over_d);
    s.evaluate_metrics = false;
    std::vector<Vector> snapshots;
    const int T = c.schedule.T;
    const int stride = std::max(1, T / std::max(1, c.probe_points));
    s.on_iterate = [&](int t, const Vector& theta) {
      if (t % stride == 0 || t == T) snapshots.push_back(theta);
    };
    const ExperimentResult res = run_experiment(s);
    ProbeReport rep = probe_assumptions(task.model, s.device_data, snapshots, c.batch, c.probe_batches, seed);
    for (const auto& r : res.records) rep.G = std::max(rep.G, r.G_emp);

    std::ofstream o(out + "/probe_report.txt", std::ios::binary);
    o << "# empirical assumption constants along a " << to_string(c.schemes.front()) << " trajectory (seed " << seed
      << ", " << snapshots.size() << " iterates)\n";
    o << "bound.L = " << fmt17(rep.L) << '\n';
    o << "bound.G = " << fmt17(rep.G) << '\n';
    o << "bound.sigma_l2 = " << fmt17(rep.sigma_l2) << '\n';
    o << "bound.sigma_g2 = " << fmt17(rep.sigma_g2) << '\n';
    o << "bound.f0 = " << fmt17(rep.f0) << '\n';
    o << "bound.f_star = " << fmt17(c.bound_f_star) << "  # assumed, not measured\n";
    o << "bound.d = " << d << '\n';
    if (c.bound_a > 0.0) o << "bound.a = " << fmt17(c.bound_a) << '\n';
    o << "fl.devices = " << c.devices << '\n';
    o << "schedule.xi = " << fmt17(c.schedule.xi) << '\n';
    o << "schedule.a = " << fmt17(c.schedule.a) << '\n';
    o << "schedule.Q = " << c.schedule.Q << '\n';
    o << "schedule.T = " << std::max(1, c.schedule.T) << '\n';
    o << "compression.k_over_d = " << fmt17(static_cast<double>(c.k_for(d)) / static_cast<double>(d)) << '\n';
    o << "compression.m_over_d = " << fmt17(c.m_over_d) << '\n';
    o << "channel.power = " << fmt17(c.power_for(d)) << '\n';
    o << "channel.sigma2 = " << fmt17(c.sigma2_for(d)) << '\n';
    const EstimatorConfig e = c.estimator_for(d);
    o << "recovery.kind = " << to_string(e.kind) << '\n';
    o << "recovery.iterations = " << e.iterations << '\n';
    o << "recovery.sparsity = " << fmt17(e.prior.rho) << '\n';
    o << "recovery.prior_var = " << fmt17(e.prior.var) << '\n';
    o << "recovery.debias = " << (e.debias ? "true" : "false") << '\n';
    log << "L_emp " << rep.L << ", G_emp " << rep.G << ", sigma_l^2 " << rep.sigma_l2 << ", sigma_g^2 "
        << rep.sigma_g2 << '\n';
    if (result) *result = rep;
    return 0;
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    err << "runtime failure: " << e.what() << '\n';
    return 1;
  }
}

// ---------------------------------------------------------------------------
// Bound evaluation from an inputs file

struct BoundRequest {
  BoundInputs tmpl;  // vseq filled per row
  EstimatorConfig estimator;
  double sigma2 = 0.0;
  std::vector<double> md;        // one row per entry
  std::vector<double> vseq;      // explicit v^(t); empty -> predicted from the estimator
  std::string output_dir;
};

inline BoundRequest parse_bound_request(const KeyValues& kv) {
  BoundRequest r;
  BoundInputs& in = r.tmpl;
  auto need = [&](const std::string& key) {
    if (!kv.has(key)) throw ConfigError("config key '" + key + "': required");
  };
  need("bound.d");
  in.d = kv.real("bound.d", 1.0);
  in.L = kv.real("bound.L", 100.0);
  in.G = kv.real("bound.G", 100.0);
  in.sigma_l2 = kv.real("bound.sigma_l2", 1.0);
  in.sigma_g2 = kv.real("bound.sigma_g2", 1.0);
  if (kv.has("bound.f0_minus_fstar")) {
    in.f0_minus_fstar = kv.real("bound.f0_minus_fstar", 0.0);
  } else {
    need("bound.f0");
    in.f0_minus_fstar = kv.real("bound.f0", 0.0) - kv.real("bound.f_star", 0.0);
  }
  in.xi = kv.real("schedule.xi", 120.0);
  in.a = kv.real("bound.a", kv.real("schedule.a", 300.0));
  in.Q = static_cast<int>(kv.integer("schedule.Q", 1));
  in.T = static_cast<int>(kv.integer("schedule.T", 300));
  in.R = static_cast<int>(kv.integer("fl.devices", 20));
  in.lambda = kv.real("compression.k_over_d", 0.1);
  if (kv.has("bound.C")) in.C = kv.real("bound.C", 0.0);
  in.P = kv.has("channel.power") ? kv.real("channel.power", 1.0) : kv.real("channel.power_per_dim", 2e-5) * in.d;

  if (kv.has("channel.snr_db") && kv.has("channel.sigma2"))
    throw ConfigError("config keys 'channel.snr_db' and 'channel.sigma2' are mutually exclusive");
  const auto d = static_cast<Eigen::Index>(in.d);
  r.sigma2 = kv.has("channel.sigma2") ? kv.real("channel.sigma2", 0.0)
                                      : ChannelConfig::sigma2_from_snr(in.P, d, kv.real("channel.snr_db", 30.0));
  r.estimator.kind = parse_estimator_kind(kv.str("recovery.kind", "oamp"));
  r.estimator.iterations = static_cast<int>(kv.integer("recovery.iterations", 20));
  r.estimator.prior.rho = kv.real("recovery.sparsity", 0.1);
  r.estimator.prior.var = kv.real("recovery.prior_var", in.P / in.d);
  r.estimator.damping = kv.real("recovery.damping", 1.0);
  r.estimator.debias = kv.boolean("recovery.debias", true);
  r.md = kv.reals("sweep.md_grid", {kv.real("compression.m_over_d", 0.6)});
  r.vseq = kv.reals("bound.vseq", {});
  if (r.vseq.size() == 1) r.vseq.assign(static_cast<std::size_t>(std::max(in.T, 1)), r.vseq.front());
  r.output_dir = kv.str("output.dir", "");
  const auto unknown = kv.unused();
  // Keys that only matter to experiment runs are tolerated in bound inputs.
  for (const auto& k : unknown)
    if (k.rfind("bound.", 0) == 0) throw ConfigError("unknown config key '" + k + "'");
  return r;
}

inline int cmd_bound(const CommandOptions& opt, std::ostream& log = std::cout, std::ostream& err = std::cerr,
                     std::vector<BoundBreakdown>* result = nullptr) {
  BoundRequest req;
  try {
    KeyValues kv = load_with_overrides(opt);
    req = parse_bound_request(kv);
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << '\n';
    return 2;
  }
  try {
    const std::string out = req.output_dir.empty() ? default_output_dir() : req.output_dir;
    ensure_dir(out);
    const BoundInputs& t = req.tmpl;
    const ScheduleReport sched = check_schedule(t.xi, t.a, t.Q, t.lambda, t.L, t.T);
    std::vector<BoundBreakdown> rows;
    std::ofstream csv(out + "/bound.csv", std::ios::binary);
    csv << kBoundCsvHeader << '\n';
    for (double md : req.md) {
      BoundInputs in = t;
      in.vseq = req.vseq.empty() ? vseq_for_bound(in.T, req.sigma2, md, req.estimator) : req.vseq;
      const BoundBreakdown b = eval_bound(in);
      csv << bound_csv_row(md, b, sched.conformant()) << '\n';
      rows.push_back(b);
      log << "M/d " << md << ": total " << fmt17(b.total) << " (init " << b.init << ", local " << b.local
          << ", recovery " << b.recovery << ", sparsclip " << b.sparsclip << ")\n";
    }
    write_text(out + "/conformance.txt", describe(sched, t.a));
    if (result) *result = rows;
    return 0;
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    err << "runtime failure: " << e.what() << '\n';
    return 1;
  }
}

}  // namespace airfl::harness
