// Command-line front end for the optdesign library. Each subcommand maps
// onto one cmd_* function in optdesign/cli.hpp; this file only declares
// flags and forwards a RunSpec.

#include <optdesign/cli.hpp>

#include <CLI11.hpp>

#include <iostream>
#include <string>

namespace {

using optdesign::RunSpec;

void add_model(CLI::App& cmd, RunSpec& spec) {
  cmd.add_option("--model", spec.model_path, "model file with a [model] section")
      ->required();
}

void add_theta(CLI::App& cmd, RunSpec& spec) {
  cmd.add_option("--theta", spec.theta_path,
                 "parameter file with a [theta] section (default: the model file)");
}

void add_points(CLI::App& cmd, RunSpec& spec) {
  cmd.add_option("--points", spec.points_arg,
                 "candidate points: a file with a [points] section, or inline numbers")
      ->required();
}

void add_out(CLI::App& cmd, RunSpec& spec) {
  cmd.add_option("--out", spec.out_path, "write a machine-readable [result] file here");
}

void add_tol(CLI::App& cmd, RunSpec& spec) {
  cmd.add_option("--tol", spec.tol, "optimality certification tolerance (default 1e-6)");
}

void add_seed(CLI::App& cmd, RunSpec& spec) {
  cmd.add_option("--seed", spec.seed, "random seed for optimizer sweep order");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"D-optimal designs for multinomial logistic models"};
  app.require_subcommand(1);

  RunSpec spec;
  int code = optdesign::kExitOk;
  const auto dispatch = [&](int (*cmd)(const RunSpec&, std::ostream&, std::ostream&)) {
    return [&, cmd]() { code = cmd(spec, std::cout, std::cerr); };
  };

  CLI::App* analyze =
      app.add_subcommand("analyze", "rank analysis and minimal support size");
  add_model(*analyze, spec);
  analyze->add_option("--points", spec.points_arg,
                      "candidate points: a file with a [points] section, or inline numbers");
  analyze->add_option("--grid", spec.grid_arg,
                      "candidate grid: a file with a [grid] section, or lo:hi:step per axis");
  analyze->callback(dispatch(optdesign::cmd_analyze));

  CLI::App* approx = app.add_subcommand(
      "optimize-approx", "locally D-optimal approximate design on candidate points");
  add_model(*approx, spec);
  add_theta(*approx, spec);
  add_points(*approx, spec);
  add_tol(*approx, spec);
  add_seed(*approx, spec);
  add_out(*approx, spec);
  approx->callback(dispatch(optdesign::cmd_optimize_approx));

  CLI::App* exact =
      app.add_subcommand("optimize-exact", "D-optimal exact design for n runs");
  add_model(*exact, spec);
  add_theta(*exact, spec);
  add_points(*exact, spec);
  exact->add_option("--n", spec.n, "total number of runs")->required();
  add_tol(*exact, spec);
  add_seed(*exact, spec);
  add_out(*exact, spec);
  exact->callback(dispatch(optdesign::cmd_optimize_exact));

  CLI::App* grid = app.add_subcommand(
      "grid", "locally D-optimal approximate design over a rectangular grid");
  add_model(*grid, spec);
  add_theta(*grid, spec);
  grid->add_option("--grid", spec.grid_arg,
                   "candidate grid: a file with a [grid] section, or lo:hi:step per axis")
      ->required();
  add_tol(*grid, spec);
  add_seed(*grid, spec);
  add_out(*grid, spec);
  grid->callback(dispatch(optdesign::cmd_grid));

  CLI::App* ew =
      app.add_subcommand("ew", "EW D-optimal design against a CSV prior sample");
  add_model(*ew, spec);
  ew->add_option("--prior", spec.prior_path, "CSV prior sample, one draw per row")
      ->required();
  add_points(*ew, spec);
  add_tol(*ew, spec);
  add_seed(*ew, spec);
  add_out(*ew, spec);
  ew->callback(dispatch(optdesign::cmd_ew));

  CLI::App* bayes = app.add_subcommand(
      "bayes-eval", "mean log-determinant of a design across a CSV prior sample");
  add_model(*bayes, spec);
  bayes->add_option("--prior", spec.prior_path, "CSV prior sample, one draw per row")
      ->required();
  bayes->add_option("design", spec.design_paths, "design file to evaluate")
      ->expected(1)
      ->required();
  add_out(*bayes, spec);
  bayes->callback(dispatch(optdesign::cmd_bayes_eval));

  CLI::App* eff = app.add_subcommand(
      "efficiency", "relative D-efficiency of a target design against a reference");
  add_model(*eff, spec);
  add_theta(*eff, spec);
  eff->add_option("designs", spec.design_paths, "target design file, reference design file")
      ->expected(2)
      ->required();
  add_out(*eff, spec);
  eff->callback(dispatch(optdesign::cmd_efficiency));

  CLI::App* three = app.add_subcommand(
      "three-point", "closed-form weights for a three-point design of the quadratic/linear model");
  add_model(*three, spec);
  add_theta(*three, spec);
  add_points(*three, spec);
  add_out(*three, spec);
  three->callback(dispatch(optdesign::cmd_three_point));

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int cli_code = app.exit(e);
    return cli_code == 0 ? optdesign::kExitOk : optdesign::kExitUsage;
  }
  return code;
}
