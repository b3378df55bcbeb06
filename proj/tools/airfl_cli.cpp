// Command-line driver: run, sweep-md, assumption-probe, bound.

#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "airfl/harness/experiment.hpp"

int main(int argc, char** argv) {
  using namespace airfl::harness;
  CLI::App app{"Over-the-air federated learning experiments"};
  app.require_subcommand(1);

  CommandOptions opt;
  std::vector<std::uint64_t> seeds;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("-c,--config", opt.config_path, "key = value configuration file");
    sub->add_option("-o,--out", opt.out_dir, "output directory (default: output.dir, $AIRFL_OUT, ./airfl_out)");
    sub->add_option("--seeds", opt.seeds, "override the seed list")->delimiter(',');
  };

  auto* run = app.add_subcommand("run", "train every configured scheme for every seed");
  add_common(run);
  run->add_option("--scheme", opt.scheme, "override the scheme list (comma separated)");

  auto* sweep = app.add_subcommand("sweep-md", "final loss and bound versus M/d");
  add_common(sweep);
  sweep->add_option("--grid", opt.grid, "override the M/d grid")->delimiter(',');

  auto* probe = app.add_subcommand("assumption-probe", "estimate L, G, sigma_l^2, sigma_g^2 along a trajectory");
  add_common(probe);
  probe->add_option("--scheme", opt.scheme, "scheme whose trajectory is probed");

  auto* bound = app.add_subcommand("bound", "evaluate the convergence bound from an inputs file");
  add_common(bound);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 2;
  }

  if (*run) return cmd_run(opt);
  if (*sweep) return cmd_sweep_md(opt);
  if (*probe) return cmd_assumption_probe(opt);
  if (*bound) return cmd_bound(opt);
  return 2;
}
