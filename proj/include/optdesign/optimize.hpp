#pragma once

// D-optimal design optimizers. The approximate-design path is the lift-one
// algorithm: each step reallocates weight between one support point and the
// proportionally shrunk rest, maximizing a one-dimensional profile whose
// polynomial coefficients are recovered from a handful of determinant
// evaluations. The exact-design path is the pairwise exchange algorithm on
// integer allocations. Both are deterministic given the config seed.

#include <optdesign/fisher.hpp>

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdlib>
#include <limits>
#include <optional>
#include <random>
#include <string>
#include <thread>
#include <utility>
#include <vector>

namespace optdesign {

struct OptimizerConfig {
  std::uint64_t rng_seed = 0;
  int max_passes = 100;          // full coordinate (or pair) sweeps
  double rel_tol = 1e-10;        // relative objective gain that counts as progress
  double weight_floor = 1e-8;    // weights below this are zeroed on output
  int grid_fallback_points = 200;  // dense-scan size when root finding degrades
};

// One-coordinate lift profile: f_i(z) = (1-z)^(p-J+1) sum_j b_j z^j (1-z)^(J-1-j).
struct LiftOneProfile {
  Eigen::VectorXd b;  // J coefficients, b(0) = f_i(0)

  [[nodiscard]] double value(double z, int p) const {
    const int J = static_cast<int>(b.size());
    const double omz = 1.0 - z;
    double inner = 0.0;
    for (int j = J - 1; j >= 0; --j) inner = inner * z + b(j) * std::pow(omz, J - 1 - j);
    return std::pow(omz, p - J + 1) * inner;
  }
};

// Pair-exchange profile: f_ij(z) = sum_{s<=q} g_s z^s where z is the count
// moved onto point i out of the pair total c.
struct ExchangeProfile {
  Eigen::VectorXd g;  // q + 1 coefficients, g(0) = f_ij(0)

  [[nodiscard]] double value(double z) const {
    double acc = 0.0;
    for (Eigen::Index s = g.size() - 1; s >= 0; --s) acc = acc * z + g(s);
    return acc;
  }
};

// Parameter draws retained after feasibility screening against a candidate
// point set.
struct PriorSample {
  std::vector<ParameterVector> thetas;
  int dropped = 0;  // draws rejected because some candidate point was infeasible
};

// Per-point optimality slack from the general equivalence theorem: the design
// is D-optimal exactly when no single-coordinate lift can raise f.
struct EquivalenceReport {
  Eigen::VectorXd slack;  // (max_z f_i(z) - f(w)) / f(w), one entry per point
  double max_slack = 0.0;
  double tol = 0.0;
  bool optimal = false;
};

struct LiftOneResult {
  DesignApprox design;       // all candidate points, zero weights kept
  double logdet = -std::numeric_limits<double>::infinity();
  int passes = 0;
  bool converged = false;
  EquivalenceReport certificate;
};

struct ExchangeResult {
  DesignExact design;
  double logdet = -std::numeric_limits<double>::infinity();
  int passes = 0;
  bool converged = false;
};

struct GridAxis {
  double lo = 0.0;
  double hi = 0.0;
  double step = 0.0;
};

struct GridResult {
  LiftOneResult result;
  int dropped = 0;  // infeasible lattice points removed before optimizing
};

struct BayesReport {
  double objective = -std::numeric_limits<double>::infinity();  // mean log det
  int singular_draws = 0;
};

namespace detail {

// Signed determinant; profile nodes need the raw polynomial value, so no
// positivity flooring here.
inline double signed_det(const Eigen::MatrixXd& F) {
  if (F.rows() == 0) return 1.0;
  return F.partialPivLu().determinant();
}

// Objective value of a PSD matrix: determinants that are nonpositive from
// rank loss or roundoff count as zero so boundary moves stay comparable.
inline double objective_det(const Eigen::MatrixXd& F) {
  const double det = signed_det(F);
  return det > 0.0 ? det : 0.0;
}

// Extended-precision determinant for polynomial interpolation nodes, where
// divided differences amplify evaluation roundoff.
inline long double signed_det_ld(const Eigen::MatrixXd& F) {
  if (F.rows() == 0) return 1.0L;
  using LongMat = Eigen::Matrix<long double, Eigen::Dynamic, Eigen::Dynamic>;
  return LongMat(F.cast<long double>()).partialPivLu().determinant();
}

// Candidate-point information matrices scaled to unit magnitude; all
// optimizer arithmetic runs on the scaled copies and log|F| is shifted back
// by p log(scale) at the end.
struct AtomSet {
  std::vector<Eigen::MatrixXd> F;  // scaled atoms
  double log_scale = 0.0;          // p * log(scale)
  int p = 0;
  int J = 0;
};

inline AtomSet scale_atoms(std::vector<Eigen::MatrixXd> atoms, int J) {
  AtomSet set;
  set.J = J;
  set.p = atoms.empty() ? 0 : static_cast<int>(atoms.front().rows());
  double scale = 0.0;
  for (const auto& F : atoms) scale = std::max(scale, F.lpNorm<Eigen::Infinity>());
  if (scale <= 0.0) scale = 1.0;
  for (auto& F : atoms) F /= scale;
  set.F = std::move(atoms);
  set.log_scale = set.p * std::log(scale);
  return set;
}

inline Eigen::MatrixXd mix(const AtomSet& atoms, const Eigen::VectorXd& w) {
  Eigen::MatrixXd F = Eigen::MatrixXd::Zero(atoms.p, atoms.p);
  for (std::size_t i = 0; i < atoms.F.size(); ++i) {
    const double wi = w(static_cast<Eigen::Index>(i));
    if (wi != 0.0) F += wi * atoms.F[i];
  }
  return F;
}

// Coefficients b of the lift profile through determinant evaluations at
// z = 0 and z = 1/(j+1): a (J-1)x(J-1) Vandermonde system recovers
// b_{J-1}..b_1, and b_0 = f_i(0).
inline LiftOneProfile extract_lift_profile(const Eigen::MatrixXd& A, const Eigen::MatrixXd& Fi,
                                           int p, int J) {
  LiftOneProfile prof;
  prof.b = Eigen::VectorXd::Zero(J);
  const double f0 = signed_det(A);
  prof.b(0) = f0;
  if (J == 1) return prof;  // degenerate, never reached for real models

  Eigen::VectorXd c(J - 1);
  for (int j = 1; j <= J - 1; ++j) {
    const double z = 1.0 / (j + 1);
    const double fj = signed_det((1.0 - z) * A + z * Fi);
    // c_j = (j+1)^p j^(J-1-p) f_i(1/(j+1)) - j^(J-1) f_i(0)
    const double lead = std::pow(static_cast<double>(j + 1), p) *
                        std::pow(static_cast<double>(j), J - 1 - p);
    c(j - 1) = lead * fj - std::pow(static_cast<double>(j), J - 1) * f0;
  }
  Eigen::MatrixXd B(J - 1, J - 1);
  for (int s = 1; s <= J - 1; ++s)
    for (int t = 1; t <= J - 1; ++t)
      B(s - 1, t - 1) = std::pow(static_cast<double>(s), t - 1);
  const Eigen::VectorXd u = B.fullPivLu().solve(c);
  for (int t = 1; t <= J - 1; ++t) prof.b(J - t) = u(t - 1);
  return prof;
}

// Monomial coefficients of the stationarity polynomial
// q(z) = (1-z) g'(z) - (p-J+1) g(z), g(z) = sum_j b_j z^j (1-z)^(J-1-j).
inline Eigen::VectorXd stationarity_poly(const LiftOneProfile& prof, int p) {
  const int J = static_cast<int>(prof.b.size());
  Eigen::VectorXd a = Eigen::VectorXd::Zero(J);  // monomials of g
  for (int k = 0; k < J; ++k) {
    const int n = J - 1 - k;
    double binom = 1.0;
    for (int r = 0; r <= n; ++r) {
      a(k + r) += prof.b(k) * binom * ((r % 2 == 0) ? 1.0 : -1.0);
      binom = binom * (n - r) / (r + 1);
    }
  }
  Eigen::VectorXd gp = Eigen::VectorXd::Zero(J);  // g' monomials, degree J-2
  for (int t = 1; t < J; ++t) gp(t - 1) = t * a(t);
  Eigen::VectorXd q = Eigen::VectorXd::Zero(J);
  for (int t = 0; t < J; ++t) {
    double v = gp(t) - (p - J + 1) * a(t);
    if (t > 0) v -= gp(t - 1);
    q(t) = v;
  }
  return q;
}

inline double poly_eval(const Eigen::VectorXd& c, double z) {
  double acc = 0.0;
  for (Eigen::Index t = c.size() - 1; t >= 0; --t) acc = acc * z + c(t);
  return acc;
}

// Real roots of the polynomial with coefficients c (ascending powers) inside
// (0, 1). Closed forms for degree <= 2, companion-matrix eigenvalues above;
// returns false when the eigen solve cannot be trusted.
inline bool poly_roots_unit_interval(const Eigen::VectorXd& c, std::vector<double>& roots) {
  roots.clear();
  int deg = static_cast<int>(c.size()) - 1;
  const double cmax = c.cwiseAbs().maxCoeff();
  if (cmax <= 0.0) return true;  // identically zero: stationary everywhere, no candidates
  while (deg > 0 && std::abs(c(deg)) <= 1e-14 * cmax) --deg;
  if (deg == 0) return true;
  const auto keep = [&](double r) {
    if (r > 1e-14 && r < 1.0 - 1e-14) roots.push_back(r);
  };
  if (deg == 1) {
    keep(-c(0) / c(1));
    return true;
  }
  if (deg == 2) {
    const double a = c(2), b = c(1), d = c(0);
    const double disc = b * b - 4 * a * d;
    if (disc >= 0.0) {
      const double s = std::sqrt(disc);
      // numerically stable pair via the co-root identity
      const double u = (b >= 0.0) ? (-b - s) / 2.0 : (-b + s) / 2.0;
      keep(u / a);
      if (u != 0.0) keep(d / u);
    }
    return true;
  }
  Eigen::MatrixXd comp = Eigen::MatrixXd::Zero(deg, deg);
  for (int r = 1; r < deg; ++r) comp(r, r - 1) = 1.0;
  for (int r = 0; r < deg; ++r) comp(r, deg - 1) = -c(r) / c(deg);
  Eigen::EigenSolver<Eigen::MatrixXd> es(comp);
  if (es.info() != Eigen::Success) return false;
  for (Eigen::Index i = 0; i < es.eigenvalues().size(); ++i) {
    const std::complex<double> ev = es.eigenvalues()(i);
    if (std::abs(ev.imag()) > 1e-8 * std::max(1.0, std::abs(ev.real()))) continue;
    double r = ev.real();
    // Newton polish against the monomial form
    for (int it = 0; it < 3; ++it) {
      double v = 0.0, dv = 0.0;
      for (int t = deg; t >= 0; --t) {
        dv = dv * r + v;
        v = v * r + c(t);
      }
      if (dv == 0.0) break;
      r -= v / dv;
    }
    keep(r);
  }
  std::sort(roots.begin(), roots.end());
  return true;
}

}  // namespace detail

// Global maximizer of the lift profile over [0, 1]. Candidates are z = 0,
// z = 1 and the interior stationary points; exact ties resolve toward the
// smaller z (the more uniform design).
[[nodiscard]] inline double maximize_profile(const LiftOneProfile& profile, int p,
                                             int grid_fallback_points = 200) {
  std::vector<double> cand{0.0, 1.0};
  std::vector<double> roots;
  if (detail::poly_roots_unit_interval(detail::stationarity_poly(profile, p), roots)) {
    cand.insert(cand.end(), roots.begin(), roots.end());
  } else {
    // ill-conditioned eigen solve: dense scan plus golden-section refinement
    const int N = std::max(grid_fallback_points, 8);
    int best_t = 0;
    double best_v = -std::numeric_limits<double>::infinity();
    for (int t = 0; t <= N; ++t) {
      const double v = profile.value(static_cast<double>(t) / N, p);
      if (v > best_v) {
        best_v = v;
        best_t = t;
      }
    }
    double lo = std::max(0.0, (best_t - 1.0) / N);
    double hi = std::min(1.0, (best_t + 1.0) / N);
    const double gr = (std::sqrt(5.0) - 1.0) / 2.0;
    double x1 = hi - gr * (hi - lo), x2 = lo + gr * (hi - lo);
    double f1 = profile.value(x1, p), f2 = profile.value(x2, p);
    for (int it = 0; it < 80; ++it) {
      if (f1 < f2) {
        lo = x1;
        x1 = x2;
        f1 = f2;
        x2 = lo + gr * (hi - lo);
        f2 = profile.value(x2, p);
      } else {
        hi = x2;
        x2 = x1;
        f2 = f1;
        x1 = hi - gr * (hi - lo);
        f1 = profile.value(x1, p);
      }
    }
    cand.push_back((lo + hi) / 2.0);
  }
  std::sort(cand.begin(), cand.end());
  double best_z = 0.0, best_v = -std::numeric_limits<double>::infinity();
  for (double z : cand) {
    const double v = profile.value(z, p);
    if (v > best_v) {
      best_v = v;
      best_z = z;
    }
  }
  return best_z;
}

namespace detail {

struct LiftOneCore {
  Eigen::VectorXd w;
  double det = 0.0;  // det of the scaled mix at w
  int passes = 0;
  bool converged = false;
};

inline void shuffle_indices(std::vector<std::size_t>& idx, std::mt19937_64& rng) {
  for (std::size_t i = idx.size(); i > 1; --i)
    std::swap(idx[i - 1], idx[static_cast<std::size_t>(rng() % i)]);
}

// The lift-one sweep on a prebuilt atom set: repeatedly profile one
// coordinate, jump to the profile maximizer, and rescale the rest.
inline LiftOneCore lift_one_core(const AtomSet& atoms, const OptimizerConfig& config) {
  const std::size_t m = atoms.F.size();
  LiftOneCore st;
  st.w = Eigen::VectorXd::Constant(static_cast<Eigen::Index>(m), 1.0 / static_cast<double>(m));
  Eigen::MatrixXd F = mix(atoms, st.w);
  st.det = objective_det(F);
  if (!(st.det > 0.0)) return st;  // caller reports the singular start

  std::mt19937_64 rng(config.rng_seed);
  std::vector<std::size_t> order(m);
  for (std::size_t i = 0; i < m; ++i) order[i] = i;

  for (int pass = 1; pass <= config.max_passes; ++pass) {
    st.passes = pass;
    shuffle_indices(order, rng);
    bool improved = false;
    for (std::size_t i : order) {
      const double wi = st.w(static_cast<Eigen::Index>(i));
      if (wi >= 1.0 - 1e-15) continue;  // nothing left to rescale against
      const Eigen::MatrixXd A = (F - wi * atoms.F[i]) / (1.0 - wi);
      const LiftOneProfile prof = extract_lift_profile(A, atoms.F[i], atoms.p, atoms.J);
      const double z = maximize_profile(prof, atoms.p, config.grid_fallback_points);
      if (!(prof.value(z, atoms.p) > st.det)) continue;
      // the profile carries determinant roundoff; accept only moves that the
      // recomputed objective confirms, keeping the sweep strictly monotone
      Eigen::VectorXd w_try = st.w * ((1.0 - z) / (1.0 - wi));
      w_try(static_cast<Eigen::Index>(i)) = z;
      Eigen::MatrixXd F_try = mix(atoms, w_try);
      const double det_try = objective_det(F_try);
      if (!(det_try > st.det)) continue;
      if (det_try > st.det * (1.0 + config.rel_tol)) improved = true;
      st.w.swap(w_try);
      F.swap(F_try);
      st.det = det_try;
    }
    if (!improved) {
      st.converged = true;
      break;
    }
  }
  return st;
}

inline EquivalenceReport equivalence_core(const AtomSet& atoms, const Eigen::VectorXd& w,
                                          double tol, int grid_fallback_points) {
  const std::size_t m = atoms.F.size();
  EquivalenceReport rep;
  rep.tol = tol;
  rep.slack = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(m));
  const Eigen::MatrixXd F = mix(atoms, w);
  const double f = objective_det(F);
  if (!(f > 0.0)) throw SingularDesignError("equivalence_check: design has zero determinant");
  for (std::size_t i = 0; i < m; ++i) {
    const double wi = w(static_cast<Eigen::Index>(i));
    if (wi >= 1.0 - 1e-12) continue;  // no mass elsewhere to trade against
    const Eigen::MatrixXd A = (F - wi * atoms.F[i]) / (1.0 - wi);
    const LiftOneProfile prof = extract_lift_profile(A, atoms.F[i], atoms.p, atoms.J);
    const double z = maximize_profile(prof, atoms.p, grid_fallback_points);
    const double best = std::max(prof.value(z, atoms.p), prof.value(wi, atoms.p));
    rep.slack(static_cast<Eigen::Index>(i)) = (best - f) / f;
  }
  rep.max_slack = rep.slack.size() ? rep.slack.maxCoeff() : 0.0;
  rep.optimal = rep.max_slack <= tol;
  return rep;
}

inline void floor_and_normalize(Eigen::VectorXd& w, double floor) {
  for (Eigen::Index i = 0; i < w.size(); ++i)
    if (w(i) < floor) w(i) = 0.0;
  const double s = w.sum();
  if (s <= 0.0) throw SingularDesignError("optimizer produced an empty design");
  w /= s;
}

inline std::vector<Eigen::MatrixXd> point_atoms(const ModelSpec& model,
                                                const ParameterVector& theta,
                                                const std::vector<Eigen::VectorXd>& points) {
  std::vector<Eigen::MatrixXd> atoms;
  atoms.reserve(points.size());
  for (const auto& x : points) atoms.push_back(fisher_at_point(model, theta, x));
  return atoms;
}

inline int thread_budget(std::size_t jobs) {
  unsigned hw = std::thread::hardware_concurrency();
  if (hw == 0) hw = 1;
  if (const char* env = std::getenv("OPTDESIGN_THREADS")) {
    const long cap = std::strtol(env, nullptr, 10);
    if (cap >= 1 && static_cast<unsigned long>(cap) < hw) hw = static_cast<unsigned>(cap);
  }
  return static_cast<int>(std::min<std::size_t>(hw, jobs));
}

// Strided parallel map; fn(k) must only touch slot k of its output. Results
// are combined by the caller in index order, keeping runs deterministic.
template <typename Fn>
inline void parallel_for(std::size_t jobs, Fn&& fn) {
  const int threads = thread_budget(jobs);
  if (threads <= 1) {
    for (std::size_t k = 0; k < jobs; ++k) fn(k);
    return;
  }
  std::vector<std::thread> pool;
  pool.reserve(static_cast<std::size_t>(threads));
  for (int t = 0; t < threads; ++t)
    pool.emplace_back([&, t]() {
      for (std::size_t k = static_cast<std::size_t>(t); k < jobs;
           k += static_cast<std::size_t>(threads))
        fn(k);
    });
  for (auto& th : pool) th.join();
}

inline LiftOneResult finish_lift_one(const AtomSet& atoms,
                                     const std::vector<Eigen::VectorXd>& points,
                                     LiftOneCore st, const OptimizerConfig& config) {
  floor_and_normalize(st.w, config.weight_floor);
  LiftOneResult out;
  out.design.points = points;
  out.design.weights = st.w;
  out.passes = st.passes;
  out.converged = st.converged;
  out.logdet = psd_log_det(mix(atoms, st.w), atoms.log_scale);
  out.certificate = equivalence_core(atoms, st.w, std::max(1e-6, 10.0 * config.rel_tol),
                                     config.grid_fallback_points);
  return out;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Public operations

// Profile of the one-coordinate lift at support point i of the given design,
// in raw determinant units.
[[nodiscard]] inline LiftOneProfile lift_one_profile(const ModelSpec& model,
                                                     const ParameterVector& theta,
                                                     const DesignApprox& design, std::size_t i) {
  if (i >= design.points.size()) throw SpecError("lift_one_profile: index out of range");
  const double wi = design.weights(static_cast<Eigen::Index>(i));
  if (wi < 0.0 || wi >= 1.0)
    throw SpecError("lift_one_profile: weight must lie in [0, 1)");
  const FisherMatrix F = fisher_total(model, theta, design);
  if (!(F.logdet > -std::numeric_limits<double>::infinity()))
    throw SingularDesignError("lift_one_profile: design determinant is zero");
  const Eigen::MatrixXd Fi = fisher_at_point(model, theta, design.points[i]);
  const Eigen::MatrixXd A = (F.F - wi * Fi) / (1.0 - wi);
  return detail::extract_lift_profile(A, Fi, model.param_count(), model.J);
}

// D-optimal approximate design over the candidate points by lift-one sweeps.
[[nodiscard]] inline LiftOneResult lift_one(const ModelSpec& model, const ParameterVector& theta,
                                            const std::vector<Eigen::VectorXd>& points,
                                            const OptimizerConfig& config = {}) {
  model.validate();
  if (points.empty()) throw SpecError("lift_one: no candidate points");
  const detail::AtomSet atoms =
      detail::scale_atoms(detail::point_atoms(model, theta, points), model.J);
  detail::LiftOneCore st = detail::lift_one_core(atoms, config);
  if (!(st.det > 0.0)) {
    const RankReport rep = analyze_rank(model, points);
    throw SingularDesignError("lift_one: uniform start has zero determinant (" +
                              (rep.violated.empty() ? std::string("numerically singular")
                                                    : rep.violated) +
                              ")");
  }
  return detail::finish_lift_one(atoms, points, std::move(st), config);
}

// Equivalence-theorem certificate for an arbitrary design.
[[nodiscard]] inline EquivalenceReport equivalence_check(const ModelSpec& model,
                                                         const ParameterVector& theta,
                                                         const DesignApprox& design, double tol) {
  model.validate();
  const detail::AtomSet atoms =
      detail::scale_atoms(detail::point_atoms(model, theta, design.points), model.J);
  return detail::equivalence_core(atoms, design.weights, tol, OptimizerConfig{}.grid_fallback_points);
}

// Pair-exchange profile f_ij(z) for moving z of the pair total c = n_i + n_j
// onto point i, fitted at z = 0..q; exact for the design polynomial.
[[nodiscard]] inline ExchangeProfile exchange_profile(const ModelSpec& model,
                                                      const ParameterVector& theta,
                                                      const DesignExact& design, std::size_t i,
                                                      std::size_t j) {
  if (i >= design.points.size() || j >= design.points.size() || i == j)
    throw SpecError("exchange_profile: invalid point pair");
  model.validate();
  const RankReport rank = analyze_rank(model, design.points);
  const int p = rank.p;
  const int q = std::min({2 * model.J - 2, p - rank.k_min + 2, p});

  const std::vector<Eigen::MatrixXd> atoms =
      detail::point_atoms(model, theta, design.points);
  Eigen::MatrixXd base = Eigen::MatrixXd::Zero(p, p);
  for (std::size_t k = 0; k < atoms.size(); ++k)
    if (k != i && k != j) base += static_cast<double>(design.counts[k]) * atoms[k];
  const double c = static_cast<double>(design.counts[i] + design.counts[j]);

  {
    const Eigen::MatrixXd now = base + static_cast<double>(design.counts[i]) * atoms[i] +
                                static_cast<double>(design.counts[j]) * atoms[j];
    if (!(detail::objective_det(now) > 0.0))
      throw SingularDesignError("exchange_profile: design determinant is zero");
  }

  using LongVec = Eigen::Matrix<long double, Eigen::Dynamic, 1>;
  using LongMat = Eigen::Matrix<long double, Eigen::Dynamic, Eigen::Dynamic>;
  LongVec f(q + 1);
  for (int z = 0; z <= q; ++z)
    f(z) = detail::signed_det_ld(base + static_cast<double>(z) * atoms[i] + (c - z) * atoms[j]);

  ExchangeProfile prof;
  prof.g = Eigen::VectorXd::Zero(q + 1);
  prof.g(0) = static_cast<double>(f(0));
  if (q >= 1) {
    LongVec d(q);
    LongMat B(q, q);
    for (int s = 1; s <= q; ++s) {
      d(s - 1) = (f(s) - f(0)) / static_cast<long double>(s);
      long double power = 1.0L;
      for (int t = 1; t <= q; ++t) {
        B(s - 1, t - 1) = power;
        power *= static_cast<long double>(s);
      }
    }
    const LongVec g = B.fullPivLu().solve(d);
    for (int t = 1; t <= q; ++t) prof.g(t) = static_cast<double>(g(t - 1));
  }
  return prof;
}

// D-optimal exact design by pairwise exchanges. Starts from `init` when
// given, otherwise from a rounded uniform allocation repaired to a positive
// determinant by greedy support building.
[[nodiscard]] inline ExchangeResult exchange(const ModelSpec& model, const ParameterVector& theta,
                                             const std::vector<Eigen::VectorXd>& points, long n,
                                             const std::optional<DesignExact>& init = std::nullopt,
                                             const OptimizerConfig& config = {}) {
  model.validate();
  const std::size_t m = points.size();
  if (m == 0) throw SpecError("exchange: no candidate points");
  if (n < 1) throw SpecError("exchange: run size must be positive");

  const RankReport rank = analyze_rank(model, points);
  const int p = rank.p;
  const detail::AtomSet atoms =
      detail::scale_atoms(detail::point_atoms(model, theta, points), model.J);

  const auto total_of = [&](const std::vector<long>& counts) {
    Eigen::MatrixXd F = Eigen::MatrixXd::Zero(p, p);
    for (std::size_t k = 0; k < m; ++k)
      if (counts[k] > 0) F += static_cast<double>(counts[k]) * atoms.F[k];
    return F;
  };

  std::vector<long> counts;
  if (init) {
    if (init->points.size() != m || init->counts.size() != m)
      throw SpecError("exchange: init allocation does not match the candidate points");
    long sum = 0;
    for (long cnt : init->counts) {
      if (cnt < 0) throw SpecError("exchange: negative count in init");
      sum += cnt;
    }
    if (sum != n) throw SpecError("exchange: init allocation does not sum to n");
    counts = init->counts;
    if (!(detail::objective_det(total_of(counts)) > 0.0))
      throw SingularDesignError("exchange: init allocation has zero determinant");
  } else {
    counts.assign(m, n / static_cast<long>(m));
    for (std::size_t k = 0; k < static_cast<std::size_t>(n % static_cast<long>(m)); ++k)
      ++counts[k];
    if (!(detail::objective_det(total_of(counts)) > 0.0)) {
      // greedy support building: add the point with the largest rank gain
      const HStack hs = build_h_stack(model, points);
      std::vector<bool> active(m, false);
      int cur = 0;
      std::size_t picked = 0;
      while (cur < p) {
        int best_gain = 0;
        std::size_t best_idx = m;
        for (std::size_t k = 0; k < m; ++k) {
          if (active[k]) continue;
          active[k] = true;
          const int r = detail::matrix_rank(hs.reduced(active));
          active[k] = false;
          if (r - cur > best_gain) {
            best_gain = r - cur;
            best_idx = k;
          }
        }
        if (best_idx == m) break;
        active[best_idx] = true;
        cur += best_gain;
        ++picked;
      }
      if (cur < p)
        throw SingularDesignError(
            "exchange: no subset of the candidate points yields a positive determinant");
      if (n < static_cast<long>(picked))
        throw SingularDesignError("exchange: run size smaller than the minimum support size");
      counts.assign(m, 0);
      long left = n;
      const long each = n / static_cast<long>(picked);
      for (std::size_t k = 0; k < m; ++k)
        if (active[k]) {
          counts[k] = each;
          left -= each;
        }
      for (std::size_t k = 0; k < m && left > 0; ++k)
        if (active[k]) {
          ++counts[k];
          --left;
        }
      if (!(detail::objective_det(total_of(counts)) > 0.0))
        throw SingularDesignError("exchange: could not build a feasible start");
    }
  }

  Eigen::MatrixXd F = total_of(counts);

  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  for (std::size_t i = 0; i + 1 < m; ++i)
    for (std::size_t j = i + 1; j < m; ++j) pairs.emplace_back(i, j);
  std::mt19937_64 rng(config.rng_seed);

  ExchangeResult out;
  for (int pass = 1; pass <= config.max_passes; ++pass) {
    out.passes = pass;
    for (std::size_t k = pairs.size(); k > 1; --k)
      std::swap(pairs[k - 1], pairs[static_cast<std::size_t>(rng() % k)]);
    bool improved = false;

    for (const auto& [i, j] : pairs) {
      const long c = counts[i] + counts[j];
      if (c == 0) continue;
      Eigen::MatrixXd base = F - static_cast<double>(counts[i]) * atoms.F[i] -
                             static_cast<double>(counts[j]) * atoms.F[j];
      const auto direct = [&](long z) {
        return detail::objective_det(base + static_cast<double>(z) * atoms.F[i] +
                                     static_cast<double>(c - z) * atoms.F[j]);
      };

      const double fcur = direct(counts[i]);
      long best_z = counts[i];
      double best_f = fcur;
      const auto consider = [&](long z, double val) {
        if (val > best_f || (val == best_f && z < best_z)) {
          best_f = val;
          best_z = z;
        }
      };

      // The pair matrix base + z A_i + (c-z) A_j is an affine PSD family on
      // [0, c], so det^{1/p} is concave in z by the Minkowski determinant
      // inequality: the maximum over integers is found by ternary search,
      // zeros can only touch the ends, and small ranges are scanned outright.
      if (c <= 64) {
        for (long z = 0; z <= c; ++z) consider(z, direct(z));
      } else {
        consider(0, direct(0));
        consider(c, direct(c));
        long lo = 0, hi = c;
        bool interior_dead = false;
        while (hi - lo > 8) {
          const long m1 = lo + (hi - lo) / 3;
          const long m2 = hi - (hi - lo) / 3;
          const double f1 = direct(m1);
          const double f2 = direct(m2);
          consider(m1, f1);
          consider(m2, f2);
          if (f1 == 0.0 && f2 == 0.0) {
            // two interior zeros of a concave profile: the interior is dead
            interior_dead = true;
            break;
          }
          if (f1 < f2) {
            lo = m1 + 1;
          } else if (f1 > f2) {
            hi = m2 - 1;
          } else {
            lo = m1;
            hi = m2;
          }
        }
        if (!interior_dead)
          for (long z = lo; z <= hi; ++z) consider(z, direct(z));
      }

      if (best_z != counts[i] && best_f > fcur) {
        if (best_f > fcur * (1.0 + config.rel_tol)) improved = true;
        counts[i] = best_z;
        counts[j] = c - best_z;
        F = base + static_cast<double>(counts[i]) * atoms.F[i] +
            static_cast<double>(counts[j]) * atoms.F[j];
      }
    }
    if (!improved) {
      out.converged = true;
      break;
    }
  }

  out.design.points = points;
  out.design.counts = counts;
  out.logdet = fisher_total(model, theta, out.design).logdet;
  return out;
}

// Lattice of candidate points spanned by per-factor ranges.
[[nodiscard]] inline std::vector<Eigen::VectorXd> make_grid(const std::vector<GridAxis>& axes) {
  if (axes.empty()) throw SpecError("make_grid: no axes");
  std::vector<std::vector<double>> levels;
  for (const auto& ax : axes) {
    if (!(ax.step > 0.0)) throw SpecError("make_grid: step must be positive");
    if (ax.hi < ax.lo) throw SpecError("make_grid: empty range");
    std::vector<double> vals;
    const long steps = static_cast<long>(std::floor((ax.hi - ax.lo) / ax.step + 1e-9));
    for (long k = 0; k <= steps; ++k)
      vals.push_back(std::min(ax.lo + static_cast<double>(k) * ax.step, ax.hi));
    levels.push_back(std::move(vals));
  }
  std::vector<Eigen::VectorXd> grid;
  std::vector<std::size_t> idx(axes.size(), 0);
  while (true) {
    Eigen::VectorXd x(static_cast<Eigen::Index>(axes.size()));
    for (std::size_t a = 0; a < axes.size(); ++a)
      x(static_cast<Eigen::Index>(a)) = levels[a][idx[a]];
    grid.push_back(std::move(x));
    std::size_t a = axes.size();
    while (a > 0) {
      --a;
      if (++idx[a] < levels[a].size()) break;
      idx[a] = 0;
      if (a == 0) return grid;
    }
  }
}

// Grid-point search: lift_one over every feasible lattice point.
[[nodiscard]] inline GridResult grid_search(const ModelSpec& model, const ParameterVector& theta,
                                            const std::vector<GridAxis>& axes,
                                            const OptimizerConfig& config = {}) {
  model.validate();
  if (static_cast<int>(axes.size()) != model.d)
    throw SpecError("grid_search: axis count does not match the factor count");
  GridResult out;
  std::vector<Eigen::VectorXd> feasible;
  for (const auto& x : make_grid(axes)) {
    if (validate_design_point(model, theta, x).feasible)
      feasible.push_back(x);
    else
      ++out.dropped;
  }
  if (feasible.empty()) throw DesignSpaceError("grid_search: every grid point is infeasible");
  out.result = lift_one(model, theta, feasible, config);
  return out;
}

// ---------------------------------------------------------------------------
// EW and Bayesian evaluation

// Screens prior draws against the candidate points; a draw survives only if
// every point is feasible under it.
[[nodiscard]] inline PriorSample filter_prior(const ModelSpec& model,
                                              const std::vector<ParameterVector>& draws,
                                              const std::vector<Eigen::VectorXd>& points) {
  PriorSample out;
  for (const auto& t : draws) {
    bool ok = true;
    for (const auto& x : points)
      if (!validate_design_point(model, t, x).feasible) {
        ok = false;
        break;
      }
    if (ok)
      out.thetas.push_back(t);
    else
      ++out.dropped;
  }
  if (out.thetas.empty())
    throw DesignSpaceError("filter_prior: no feasible draws remain for these points");
  return out;
}

// Expected per-point information: X^T E(U) X with the u entries averaged
// across the prior draws.
[[nodiscard]] inline Eigen::MatrixXd ew_information(const ModelSpec& model,
                                                    const PriorSample& prior,
                                                    const Eigen::VectorXd& x) {
  if (prior.thetas.empty()) throw SpecError("ew_information: empty prior");
  const int blocks = model.J - 1;
  Eigen::MatrixXd ubar = Eigen::MatrixXd::Zero(blocks, blocks);
  for (const auto& t : prior.thetas)
    ubar += compute_u(model.link, compute_pi(model, t, x)).u;
  ubar /= static_cast<double>(prior.thetas.size());
  const Eigen::MatrixXd X = build_model_matrix(model, x).X;
  const Eigen::MatrixXd Xtop = X.topRows(blocks);
  return Xtop.transpose() * ubar * Xtop;
}

// Lift-one against the prior-averaged information atoms.
[[nodiscard]] inline LiftOneResult ew_lift_one(const ModelSpec& model, const PriorSample& prior,
                                               const std::vector<Eigen::VectorXd>& points,
                                               const OptimizerConfig& config = {}) {
  model.validate();
  if (points.empty()) throw SpecError("ew_lift_one: no candidate points");
  std::vector<Eigen::MatrixXd> raw(points.size());
  detail::parallel_for(points.size(),
                       [&](std::size_t k) { raw[k] = ew_information(model, prior, points[k]); });
  const detail::AtomSet atoms = detail::scale_atoms(std::move(raw), model.J);
  detail::LiftOneCore st = detail::lift_one_core(atoms, config);
  if (!(st.det > 0.0))
    throw SingularDesignError("ew_lift_one: uniform start has zero determinant");
  return detail::finish_lift_one(atoms, points, std::move(st), config);
}

// Mean log-determinant of the design information across prior draws; draws
// with a singular information matrix push the mean to -inf and are counted.
[[nodiscard]] inline BayesReport bayesian_objective(const ModelSpec& model,
                                                    const PriorSample& prior,
                                                    const DesignApprox& design) {
  if (prior.thetas.empty()) throw SpecError("bayesian_objective: empty prior");
  std::vector<double> ld(prior.thetas.size());
  detail::parallel_for(prior.thetas.size(), [&](std::size_t k) {
    ld[k] = fisher_total(model, prior.thetas[k], design).logdet;
  });
  BayesReport rep;
  double acc = 0.0;
  for (double v : ld) {
    if (!(v > -std::numeric_limits<double>::infinity())) ++rep.singular_draws;
    acc += v;
  }
  rep.objective = acc / static_cast<double>(prior.thetas.size());
  return rep;
}

// ---------------------------------------------------------------------------
// Efficiency

[[nodiscard]] inline DesignApprox normalize(const DesignExact& design) {
  const long n = design.total();
  if (n <= 0) throw SpecError("normalize: design has no observations");
  DesignApprox out;
  out.points = design.points;
  out.weights.resize(static_cast<Eigen::Index>(design.counts.size()));
  for (std::size_t i = 0; i < design.counts.size(); ++i)
    out.weights(static_cast<Eigen::Index>(i)) =
        static_cast<double>(design.counts[i]) / static_cast<double>(n);
  return out;
}

// Relative D-efficiency (det ratio)^(1/p) of target against reference, both
// taken as per-observation designs.
[[nodiscard]] inline double efficiency(const ModelSpec& model, const ParameterVector& theta,
                                       const DesignApprox& target,
                                       const DesignApprox& reference) {
  const double ld_t = fisher_total(model, theta, target).logdet;
  const double ld_r = fisher_total(model, theta, reference).logdet;
  if (!(ld_r > -std::numeric_limits<double>::infinity()))
    throw SingularDesignError("efficiency: reference design is singular");
  if (!(ld_t > -std::numeric_limits<double>::infinity())) return 0.0;
  return std::exp((ld_t - ld_r) / model.param_count());
}

[[nodiscard]] inline double efficiency(const ModelSpec& model, const ParameterVector& theta,
                                       const DesignExact& target,
                                       const DesignExact& reference) {
  return efficiency(model, theta, normalize(target), normalize(reference));
}

}  // namespace optdesign
