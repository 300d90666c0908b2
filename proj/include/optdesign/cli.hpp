#pragma once

// Subcommand implementations behind the optdesign binary. Each command
// takes a populated RunSpec plus output and error streams and returns a
// process exit code: 0 on success, 1 on parse or usage errors, 2 when the
// problem is infeasible or a reference design is singular. The binary in
// tools/ wires command-line flags into RunSpec and dispatches here; tests
// drive the same functions directly and through the executable.

#include <optdesign/analytic.hpp>
#include <optdesign/io.hpp>

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

namespace optdesign {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;       // parse and usage failures
inline constexpr int kExitInfeasible = 2;  // infeasible or singular problems

// Everything a subcommand can take from the command line. Paths stay as
// strings; loading and validation happen inside the command so failures
// map onto the exit-code contract.
struct RunSpec {
  std::string model_path;
  std::string theta_path;  // optional when the model file carries [theta]
  std::string prior_path;
  std::string points_arg;  // file path, or an inline number list
  std::string grid_arg;    // file path, or inline lo:hi:step[,lo:hi:step...]
  std::string out_path;    // machine-readable record destination; empty = none
  std::vector<std::string> design_paths;  // positional design files
  long n = 0;
  double tol = 1e-6;
  std::uint64_t seed = 0;
};

namespace detail {

// ----- input loading -------------------------------------------------------

[[nodiscard]] inline ModelSpec load_model(const RunSpec& spec, InputFile& model_file) {
  if (spec.model_path.empty()) throw SpecError("--model is required");
  model_file = parse_input_file(spec.model_path);
  if (!model_file.model)
    throw ParseError(spec.model_path, 1, 1, "file has no [model] section");
  return *model_file.model;
}

[[nodiscard]] inline ParameterVector load_theta(const RunSpec& spec, const ModelSpec& model,
                                                const InputFile& model_file) {
  std::optional<ParameterVector> theta = model_file.theta;
  if (!spec.theta_path.empty()) {
    const InputFile file = parse_input_file(spec.theta_path);
    if (!file.theta) throw ParseError(spec.theta_path, 1, 1, "file has no [theta] section");
    theta = file.theta;
  }
  if (!theta)
    throw SpecError("no parameters: pass --theta or add a [theta] section to the model file");
  theta->validate_against(model);
  return *theta;
}

[[nodiscard]] inline std::vector<double> inline_numbers(const std::string& arg,
                                                        const std::string& label) {
  std::vector<double> values;
  std::size_t pos = 0;
  while (pos < arg.size()) {
    if (std::isspace(static_cast<unsigned char>(arg[pos])) || arg[pos] == ',' ||
        arg[pos] == ';') {
      ++pos;
      continue;
    }
    double v = 0.0;
    const auto [ptr, ec] = std::from_chars(arg.data() + pos, arg.data() + arg.size(), v);
    if (ec != std::errc() || ptr == arg.data() + pos)
      throw ParseError(label, 1, static_cast<int>(pos) + 1, "expected a number");
    values.push_back(v);
    pos = static_cast<std::size_t>(ptr - arg.data());
  }
  return values;
}

[[nodiscard]] inline std::vector<Eigen::VectorXd> load_points(const RunSpec& spec,
                                                              const ModelSpec& model) {
  if (spec.points_arg.empty()) throw SpecError("--points is required");
  std::vector<Eigen::VectorXd> points;
  if (std::filesystem::exists(spec.points_arg)) {
    points = parse_input_file(spec.points_arg).points;
    if (points.empty())
      throw ParseError(spec.points_arg, 1, 1, "file has no [points] rows");
  } else {
    const std::vector<double> flat = inline_numbers(spec.points_arg, "--points");
    if (flat.empty() || flat.size() % static_cast<std::size_t>(model.d) != 0)
      throw ParseError("--points", 1, 1,
                       "expected a multiple of " + std::to_string(model.d) + " numbers");
    for (std::size_t i = 0; i < flat.size(); i += static_cast<std::size_t>(model.d)) {
      Eigen::VectorXd x(model.d);
      for (int k = 0; k < model.d; ++k) x(k) = flat[i + static_cast<std::size_t>(k)];
      points.push_back(std::move(x));
    }
  }
  for (const auto& x : points)
    if (x.size() != model.d)
      throw ParseError(spec.points_arg, 1, 1,
                       "points have " + std::to_string(x.size()) +
                           " coordinates, the model has d=" + std::to_string(model.d));
  return points;
}

[[nodiscard]] inline std::vector<GridAxis> load_grid(const RunSpec& spec,
                                                     const ModelSpec& model) {
  if (spec.grid_arg.empty()) throw SpecError("--grid is required");
  std::vector<GridAxis> axes;
  if (std::filesystem::exists(spec.grid_arg)) {
    axes = parse_input_file(spec.grid_arg).grid;
    if (axes.empty()) throw ParseError(spec.grid_arg, 1, 1, "file has no [grid] rows");
  } else {
    // inline form: lo:hi:step per axis, axes separated by commas
    std::size_t start = 0;
    const std::string& arg = spec.grid_arg;
    while (start < arg.size()) {
      std::size_t end = arg.find(',', start);
      if (end == std::string::npos) end = arg.size();
      std::string part = arg.substr(start, end - start);
      for (char& c : part)
        if (c == ':') c = ' ';
      const std::vector<double> v = inline_numbers(part, "--grid");
      if (v.size() != 3)
        throw ParseError("--grid", 1, static_cast<int>(start) + 1,
                         "expected lo:hi:step");
      GridAxis axis{v[0], v[1], v[2]};
      if (!(axis.step > 0.0))
        throw ParseError("--grid", 1, static_cast<int>(start) + 1,
                         "grid step must be positive");
      axes.push_back(axis);
      start = end + 1;
    }
  }
  if (static_cast<int>(axes.size()) != model.d)
    throw SpecError("--grid needs one lo:hi:step axis per factor (d=" +
                    std::to_string(model.d) + ")");
  return axes;
}

[[nodiscard]] inline PriorFile load_prior(const RunSpec& spec, const ModelSpec& model) {
  if (spec.prior_path.empty()) throw SpecError("--prior is required");
  std::ifstream in(spec.prior_path);
  if (!in) throw ParseError(spec.prior_path, 0, 0, "cannot open file");
  return parse_prior_csv(in, spec.prior_path, model);
}

// Loads a design file as an approximate design, normalizing exact counts.
struct LoadedDesign {
  DesignApprox approx;
  std::optional<DesignExact> exact;
};

[[nodiscard]] inline LoadedDesign load_design(const std::string& path, const ModelSpec& model) {
  const InputFile file = parse_input_file(path);
  LoadedDesign out;
  if (file.design_exact) {
    out.exact = *file.design_exact;
    out.approx = normalize(*file.design_exact);
  } else if (file.design_approx) {
    out.approx = *file.design_approx;
    const double total = out.approx.weights.sum();
    if (!(total > 0.0)) throw ParseError(path, 1, 1, "design weights sum to zero");
    out.approx.weights /= total;
  } else {
    throw ParseError(path, 1, 1, "file has no design section");
  }
  for (const auto& x : out.approx.points)
    if (x.size() != model.d)
      throw ParseError(path, 1, 1,
                       "design points have " + std::to_string(x.size()) +
                           " coordinates, the model has d=" + std::to_string(model.d));
  return out;
}

// ----- output helpers ------------------------------------------------------

// Weights print with four decimals in the table style that drops the
// leading zero: 0.3116 renders as ".3116".
[[nodiscard]] inline std::string format_weight(double w) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.4f", w);
  std::string s = buf;
  if (s.size() > 1 && s[0] == '0' && s[1] == '.') s.erase(0, 1);
  return s;
}

[[nodiscard]] inline std::string format_point(const Eigen::VectorXd& x) {
  std::string s;
  char buf[40];
  for (Eigen::Index k = 0; k < x.size(); ++k) {
    std::snprintf(buf, sizeof(buf), "%g", x(k));
    s += (k == 0 ? "" : " ");
    s += buf;
  }
  return s;
}

[[nodiscard]] inline std::string format_short(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.12g", v);
  return buf;
}

inline void print_model_line(std::ostream& out, const ModelSpec& model) {
  out << "model: " << to_string(model.link) << " J=" << model.J << " d=" << model.d
      << " odds=" << to_string(model.odds()) << "\n";
}

inline void print_support(std::ostream& out, const DesignApprox& design) {
  out << "support:\n";
  for (std::size_t i = 0; i < design.points.size(); ++i) {
    const double w = design.weights(static_cast<Eigen::Index>(i));
    if (w > 0.0)
      out << "  " << format_point(design.points[i]) << "  " << format_weight(w) << "\n";
  }
}

inline void print_support(std::ostream& out, const DesignExact& design) {
  out << "support:\n";
  for (std::size_t i = 0; i < design.points.size(); ++i)
    if (design.counts[i] > 0)
      out << "  " << format_point(design.points[i]) << "  " << design.counts[i] << "\n";
}

using Fields = std::vector<std::pair<std::string, std::string>>;

// Writes the machine-readable record when --out was given: a [result]
// section followed by the full design.
inline void write_record(const RunSpec& spec, const std::string& command, Fields fields,
                         const DesignApprox* approx, const DesignExact* exact) {
  if (spec.out_path.empty()) return;
  std::ofstream out(spec.out_path);
  if (!out) throw SpecError("cannot open --out path " + spec.out_path);
  fields.insert(fields.begin(), {"command", command});
  write_result(out, fields);
  if (approx != nullptr) write_design(out, *approx);
  if (exact != nullptr) write_design(out, *exact);
}

// Rank pre-check shared by the optimizing commands.
inline void require_feasible(const ModelSpec& model,
                             const std::vector<Eigen::VectorXd>& points, std::ostream& err) {
  const RankReport rep = analyze_rank(model, points);
  if (rep.pd_possible) return;
  err << "infeasible: " << rep.violated << "\n";
  err << "p = " << rep.p << ", k_min = " << rep.k_min << ", candidates = " << points.size()
      << "\n";
  throw DesignSpaceError("candidate set cannot support a positive definite information matrix");
}

// Maps exceptions onto the exit-code contract. Commands run inside.
[[nodiscard]] inline int run_guarded(std::ostream& err, const std::function<int()>& body) {
  try {
    return body();
  } catch (const ParseError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const DesignSpaceError& e) {
    err << "error: " << e.what() << "\n";
    return kExitInfeasible;
  } catch (const SingularDesignError& e) {
    err << "error: " << e.what() << "\n";
    return kExitInfeasible;
  } catch (const SolverError& e) {
    err << "error: " << e.what() << "\n";
    return kExitInfeasible;
  } catch (const SpecError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  }
}

[[nodiscard]] inline OptimizerConfig make_config(const RunSpec& spec) {
  OptimizerConfig config;
  config.rng_seed = spec.seed;
  // generous pass budget: flat valleys converge slowly but cheaply
  config.max_passes = 20000;
  return config;
}

}  // namespace detail

// ----- commands ------------------------------------------------------------

// Rank analysis of a candidate set: block sizes and ranks, the shared
// subspace dimension, the minimal support size, and whether these points
// can give a positive definite information matrix at all.
[[nodiscard]] inline int cmd_analyze(const RunSpec& spec, std::ostream& out,
                                     std::ostream& err) {
  return detail::run_guarded(err, [&]() {
    InputFile model_file;
    const ModelSpec model = detail::load_model(spec, model_file);
    std::vector<Eigen::VectorXd> points;
    if (!spec.grid_arg.empty() && spec.points_arg.empty())
      points = make_grid(detail::load_grid(spec, model));
    else
      points = detail::load_points(spec, model);

    const RankReport rep = analyze_rank(model, points);
    detail::print_model_line(out, model);
    out << "candidates: " << points.size() << "\n";
    out << "block sizes:";
    for (int pj : rep.p_j) out << ' ' << pj;
    out << " | shared: " << rep.p_c << " | total p = " << rep.p << "\n";
    out << "block ranks:";
    for (int rj : rep.rank_j) out << ' ' << rj;
    out << " | stacked rank: " << rep.rank << "\n";
    out << "p_H = " << rep.p_H << "\n";
    out << "k_min = " << rep.k_min << "\n";
    out << "positive definite achievable: " << (rep.pd_possible ? "yes" : "no") << "\n";
    if (!rep.violated.empty()) out << "violated: " << rep.violated << "\n";
    return rep.pd_possible ? kExitOk : kExitInfeasible;
  });
}

// Locally D-optimal approximate design on an explicit candidate set.
[[nodiscard]] inline int cmd_optimize_approx(const RunSpec& spec, std::ostream& out,
                                             std::ostream& err) {
  return detail::run_guarded(err, [&]() {
    InputFile model_file;
    const ModelSpec model = detail::load_model(spec, model_file);
    const ParameterVector theta = detail::load_theta(spec, model, model_file);
    const std::vector<Eigen::VectorXd> points = detail::load_points(spec, model);
    detail::require_feasible(model, points, err);

    const LiftOneResult res = lift_one(model, theta, points, detail::make_config(spec));

    detail::print_model_line(out, model);
    out << "candidates: " << points.size() << "\n";
    detail::print_support(out, res.design);
    out << "logdet: " << detail::format_short(res.logdet) << "\n";
    out << "slack: " << detail::format_short(res.certificate.max_slack) << "\n";
    out << "optimal within tol " << detail::format_short(spec.tol) << ": "
        << (res.certificate.max_slack <= spec.tol ? "yes" : "no") << "\n";
    out << "passes: " << res.passes << "\n";
    out << "seed: " << spec.seed << "\n";

    detail::write_record(spec, "optimize-approx",
                         {{"logdet", format_full(res.logdet)},
                          {"slack", format_full(res.certificate.max_slack)},
                          {"passes", std::to_string(res.passes)},
                          {"converged", res.converged ? "yes" : "no"},
                          {"seed", std::to_string(spec.seed)}},
                         &res.design, nullptr);
    return kExitOk;
  });
}

// Exact n-run design by pairwise exchange from a rounded start.
[[nodiscard]] inline int cmd_optimize_exact(const RunSpec& spec, std::ostream& out,
                                            std::ostream& err) {
  return detail::run_guarded(err, [&]() {
    if (spec.n <= 0) throw SpecError("--n must be a positive run count");
    InputFile model_file;
    const ModelSpec model = detail::load_model(spec, model_file);
    const ParameterVector theta = detail::load_theta(spec, model, model_file);
    const std::vector<Eigen::VectorXd> points = detail::load_points(spec, model);
    detail::require_feasible(model, points, err);

    const ExchangeResult res =
        exchange(model, theta, points, spec.n, std::nullopt, detail::make_config(spec));
    const DesignApprox proportions = normalize(res.design);
    const EquivalenceReport cert = equivalence_check(model, theta, proportions, spec.tol);

    detail::print_model_line(out, model);
    out << "n: " << spec.n << "\n";
    detail::print_support(out, res.design);
    out << "logdet: " << detail::format_short(res.logdet) << "\n";
    out << "slack: " << detail::format_short(cert.max_slack) << "\n";
    out << "passes: " << res.passes << "\n";
    out << "seed: " << spec.seed << "\n";

    detail::write_record(spec, "optimize-exact",
                         {{"n", std::to_string(spec.n)},
                          {"logdet", format_full(res.logdet)},
                          {"slack", format_full(cert.max_slack)},
                          {"passes", std::to_string(res.passes)},
                          {"converged", res.converged ? "yes" : "no"},
                          {"seed", std::to_string(spec.seed)}},
                         nullptr, &res.design);
    return kExitOk;
  });
}

// Approximate design over a rectangular grid of candidate points.
[[nodiscard]] inline int cmd_grid(const RunSpec& spec, std::ostream& out, std::ostream& err) {
  return detail::run_guarded(err, [&]() {
    InputFile model_file;
    const ModelSpec model = detail::load_model(spec, model_file);
    const ParameterVector theta = detail::load_theta(spec, model, model_file);
    const std::vector<GridAxis> axes = detail::load_grid(spec, model);

    const GridResult res = grid_search(model, theta, axes, detail::make_config(spec));

    detail::print_model_line(out, model);
    out << "candidates: " << res.result.design.points.size() << " (dropped "
        << res.dropped << " infeasible)\n";
    detail::print_support(out, res.result.design);
    out << "logdet: " << detail::format_short(res.result.logdet) << "\n";
    out << "slack: " << detail::format_short(res.result.certificate.max_slack) << "\n";
    out << "optimal within tol " << detail::format_short(spec.tol) << ": "
        << (res.result.certificate.max_slack <= spec.tol ? "yes" : "no") << "\n";
    out << "passes: " << res.result.passes << "\n";
    out << "seed: " << spec.seed << "\n";

    detail::write_record(spec, "grid",
                         {{"logdet", format_full(res.result.logdet)},
                          {"slack", format_full(res.result.certificate.max_slack)},
                          {"passes", std::to_string(res.result.passes)},
                          {"converged", res.result.converged ? "yes" : "no"},
                          {"dropped", std::to_string(res.dropped)},
                          {"seed", std::to_string(spec.seed)}},
                         &res.result.design, nullptr);
    return kExitOk;
  });
}

// EW-optimal design: optimizes the determinant of the prior-averaged
// information.
[[nodiscard]] inline int cmd_ew(const RunSpec& spec, std::ostream& out, std::ostream& err) {
  return detail::run_guarded(err, [&]() {
    InputFile model_file;
    const ModelSpec model = detail::load_model(spec, model_file);
    const PriorFile prior_file = detail::load_prior(spec, model);
    const std::vector<Eigen::VectorXd> points = detail::load_points(spec, model);
    detail::require_feasible(model, points, err);

    const PriorSample prior = filter_prior(model, prior_file.draws, points);
    const LiftOneResult res = ew_lift_one(model, prior, points, detail::make_config(spec));

    detail::print_model_line(out, model);
    out << "prior: " << prior.thetas.size() << " draws used, " << prior_file.skipped
        << " rows skipped, " << prior.dropped << " draws infeasible\n";
    detail::print_support(out, res.design);
    out << "logdet: " << detail::format_short(res.logdet) << "\n";
    out << "slack: " << detail::format_short(res.certificate.max_slack) << "\n";
    out << "passes: " << res.passes << "\n";
    out << "seed: " << spec.seed << "\n";

    detail::write_record(spec, "ew",
                         {{"draws", std::to_string(prior.thetas.size())},
                          {"skipped_rows", std::to_string(prior_file.skipped)},
                          {"infeasible_draws", std::to_string(prior.dropped)},
                          {"logdet", format_full(res.logdet)},
                          {"slack", format_full(res.certificate.max_slack)},
                          {"passes", std::to_string(res.passes)},
                          {"converged", res.converged ? "yes" : "no"},
                          {"seed", std::to_string(spec.seed)}},
                         &res.design, nullptr);
    return kExitOk;
  });
}

// Bayesian evaluation of a fixed design: mean log-determinant across the
// prior draws.
[[nodiscard]] inline int cmd_bayes_eval(const RunSpec& spec, std::ostream& out,
                                        std::ostream& err) {
  return detail::run_guarded(err, [&]() {
    if (spec.design_paths.size() != 1)
      throw SpecError("bayes-eval takes exactly one design file");
    InputFile model_file;
    const ModelSpec model = detail::load_model(spec, model_file);
    const PriorFile prior_file = detail::load_prior(spec, model);
    const detail::LoadedDesign design = detail::load_design(spec.design_paths[0], model);

    const PriorSample prior = filter_prior(model, prior_file.draws, design.approx.points);
    const BayesReport rep = bayesian_objective(model, prior, design.approx);

    detail::print_model_line(out, model);
    out << "prior: " << prior.thetas.size() << " draws used, " << prior_file.skipped
        << " rows skipped, " << prior.dropped << " draws infeasible\n";
    out << "mean logdet: " << detail::format_short(rep.objective) << "\n";
    out << "singular draws: " << rep.singular_draws << "\n";

    detail::write_record(spec, "bayes-eval",
                         {{"draws", std::to_string(prior.thetas.size())},
                          {"mean_logdet", format_full(rep.objective)},
                          {"singular_draws", std::to_string(rep.singular_draws)}},
                         &design.approx, nullptr);
    return kExitOk;
  });
}

// Relative D-efficiency of the first design against the second.
[[nodiscard]] inline int cmd_efficiency(const RunSpec& spec, std::ostream& out,
                                        std::ostream& err) {
  return detail::run_guarded(err, [&]() {
    if (spec.design_paths.size() != 2)
      throw SpecError("efficiency takes exactly two design files: target, reference");
    InputFile model_file;
    const ModelSpec model = detail::load_model(spec, model_file);
    const ParameterVector theta = detail::load_theta(spec, model, model_file);
    const detail::LoadedDesign target = detail::load_design(spec.design_paths[0], model);
    const detail::LoadedDesign reference = detail::load_design(spec.design_paths[1], model);

    const double ld_target = fisher_total(model, theta, target.approx).logdet;
    const double ld_reference = fisher_total(model, theta, reference.approx).logdet;
    const double eff = efficiency(model, theta, target.approx, reference.approx);

    detail::print_model_line(out, model);
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.3f", eff);
    out << "efficiency: " << buf << "\n";
    out << "logdet target: " << detail::format_short(ld_target) << "\n";
    out << "logdet reference: " << detail::format_short(ld_reference) << "\n";

    detail::write_record(spec, "efficiency",
                         {{"efficiency", format_full(eff)},
                          {"logdet_target", format_full(ld_target)},
                          {"logdet_reference", format_full(ld_reference)}},
                         nullptr, nullptr);
    return kExitOk;
  });
}

// Closed-form three-point design: determinant constants, optimal weights,
// and the uniform-allocation verdict for the minimal support.
[[nodiscard]] inline int cmd_three_point(const RunSpec& spec, std::ostream& out,
                                         std::ostream& err) {
  return detail::run_guarded(err, [&]() {
    InputFile model_file;
    const ModelSpec model = detail::load_model(spec, model_file);
    const ParameterVector theta = detail::load_theta(spec, model, model_file);
    const std::vector<Eigen::VectorXd> points = detail::load_points(spec, model);
    if (points.size() != 3) throw SpecError("three-point takes exactly three points");

    const ThreePointCoefficients coef =
        three_point_coefficients(model, theta, points[0](0), points[1](0), points[2](0));

    std::array<int, 3> order = {0, 1, 2};
    const std::array<double, 3> c = {coef.c1, coef.c2, coef.c3};
    std::sort(order.begin(), order.end(), [&](int a, int b) {
      return c[static_cast<std::size_t>(a)] < c[static_cast<std::size_t>(b)];
    });
    ThreePointDiagnostics diag;
    const Eigen::Vector3d sorted_w =
        solve_three_point({c[static_cast<std::size_t>(order[0])],
                           c[static_cast<std::size_t>(order[1])],
                           c[static_cast<std::size_t>(order[2])]},
                          &diag);
    Eigen::Vector3d w;
    for (int i = 0; i < 3; ++i) w(order[static_cast<std::size_t>(i)]) = sorted_w(i);
    DesignApprox design;
    design.points = points;
    design.weights = w;

    const UniformVerdict verdict = uniform_minimal_verdict(model, points);

    detail::print_model_line(out, model);
    out << "C: " << detail::format_short(coef.C) << "\n";
    out << "c: " << detail::format_short(coef.c1) << ' ' << detail::format_short(coef.c2)
        << ' ' << detail::format_short(coef.c3) << "\n";
    detail::print_support(out, design);
    out << "logdet: " << detail::format_short(std::log(three_point_objective(coef, w)))
        << "\n";
    out << "solved by: " << (diag.dispatch_case == 4
                                 ? (diag.radical_path ? "radicals" : "stationarity iteration")
                                 : "tie formulas")
        << "\n";
    out << "uniform allocation: " << to_string(verdict) << "\n";

    detail::write_record(spec, "three-point",
                         {{"C", format_full(coef.C)},
                          {"c1", format_full(coef.c1)},
                          {"c2", format_full(coef.c2)},
                          {"c3", format_full(coef.c3)},
                          {"logdet", format_full(std::log(three_point_objective(coef, w)))},
                          {"verdict", std::string(to_string(verdict))}},
                         &design, nullptr);
    return kExitOk;
  });
}

}  // namespace optdesign
