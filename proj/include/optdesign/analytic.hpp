#pragma once

// Closed-form results for minimally supported three-point designs of the
// quadratic-by-linear J=3 family. For support points x1, x2, x3 the
// determinant objective collapses to
//
//   det F(w) = C * w1 w2 w3 * (c1 w2 w3 + c2 w1 w3 + c3 w1 w2),
//
// with constants (C, c1, c2, c3) depending only on the points and the
// category probabilities there. With the constants sorted ascending the
// optimal weights follow from the unique root in (1, inf) of an explicit
// quartic, solvable by radicals. Also provides the sufficient conditions
// under which the uniform allocation on a minimal support is optimal
// among minimally supported designs.

#include <optdesign/fisher.hpp>

#include <Eigen/Dense>

#include <cmath>
#include <complex>
#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace optdesign {

// Determinant constants of a three-point design, in input point order:
// det F(w) = C * w1 w2 w3 * (c1 w2 w3 + c2 w1 w3 + c3 w1 w2).
struct ThreePointCoefficients {
  double C = 0.0;
  double c1 = 0.0;
  double c2 = 0.0;
  double c3 = 0.0;
};

// Input to the weight solver: the three determinant constants, sorted
// ascending and strictly positive.
struct ThreePointProblem {
  double c1 = 0.0;
  double c2 = 0.0;
  double c3 = 0.0;
};

// How solve_three_point arrived at its answer, for callers that want to
// report or assert on the path taken.
struct ThreePointDiagnostics {
  int dispatch_case = 0;      // 1 all equal, 2 low pair, 3 high pair, 4 distinct
  bool radical_path = false;  // quartic solved by radicals rather than bisection
  double y1 = 0.0;            // weight ratio w1 / w3 (1 outside case 4)
  double y2 = 0.0;            // weight ratio w2 / w3 (1 outside case 4)
  double residual = 0.0;      // |h(y1)| for the case-4 quartic h
};

enum class UniformVerdict { uniform_optimal, not_guaranteed };

[[nodiscard]] inline std::string_view to_string(UniformVerdict v) {
  switch (v) {
    case UniformVerdict::uniform_optimal: return "uniform-optimal";
    case UniformVerdict::not_guaranteed: return "not-guaranteed";
  }
  return "unknown";
}

// Closed-form determinant constants for a three-point design of the J=3
// model with category blocks (1, x, x^2) and (1, x), no shared block, and
// a continuation-ratio or cumulative link. Coincident points give C = 0.
// Other families have no tabulated constants and are rejected.
[[nodiscard]] inline ThreePointCoefficients three_point_coefficients(
    const ModelSpec& model, const ParameterVector& theta, double x1, double x2,
    double x3) {
  model.validate();
  theta.validate_against(model);
  static const std::vector<std::vector<int>> kQuadratic = {{0}, {1}, {2}};
  static const std::vector<std::vector<int>> kLinear = {{0}, {1}};
  const bool shape_ok = model.J == 3 && model.d == 1 && model.common.empty() &&
                        model.category.size() == 2 &&
                        model.category[0].terms == kQuadratic &&
                        model.category[1].terms == kLinear;
  if (!shape_ok)
    throw SpecError(
        "three_point_coefficients: constants are tabulated only for the J=3 "
        "model with category blocks (1, x, x^2) and (1, x) and no shared block");
  if (model.link != LinkKind::continuation && model.link != LinkKind::cumulative)
    throw SpecError(
        "three_point_coefficients: constants are tabulated only for the "
        "continuation and cumulative links");

  const double xs[3] = {x1, x2, x3};
  Eigen::Matrix3d pi;  // pi(i, j) is the probability of category j+1 at point i+1
  for (int i = 0; i < 3; ++i) {
    Eigen::VectorXd x(1);
    x << xs[i];
    pi.row(i) = compute_pi(model, theta, x).pi.transpose();
  }

  const double d12 = x1 - x2;
  const double d13 = x1 - x3;
  const double d23 = x2 - x3;
  const double spread = d12 * d12 * d13 * d13 * d23 * d23;

  ThreePointCoefficients out;
  if (model.link == LinkKind::continuation) {
    double prod = 1.0;
    for (int i = 0; i < 3; ++i) prod *= pi(i, 0) * pi(i, 1) * pi(i, 2);
    out.C = spread * prod;
    out.c1 = d23 * d23 * (1.0 / pi(0, 1) + 1.0 / pi(0, 2));
    out.c2 = d13 * d13 * (1.0 / pi(1, 1) + 1.0 / pi(1, 2));
    out.c3 = d12 * d12 * (1.0 / pi(2, 1) + 1.0 / pi(2, 2));
  } else {
    double prod = 1.0;
    for (int i = 0; i < 3; ++i) {
      const double g1 = pi(i, 0) + pi(i, 1);
      const double g2 = pi(i, 1) + pi(i, 2);
      prod *= pi(i, 0) * pi(i, 2) * g1 * g1 * g2 * g2 / pi(i, 1);
    }
    out.C = spread * prod;
    out.c1 = d23 * d23 / (pi(0, 2) * (pi(0, 0) + pi(0, 1)));
    out.c2 = d13 * d13 / (pi(1, 2) * (pi(1, 0) + pi(1, 1)));
    out.c3 = d12 * d12 / (pi(2, 2) * (pi(2, 0) + pi(2, 1)));
  }
  return out;
}

// The collapsed determinant form at weights w = (w1, w2, w3).
[[nodiscard]] inline double three_point_objective(const ThreePointCoefficients& coef,
                                                  const Eigen::Vector3d& w) {
  return coef.C * w(0) * w(1) * w(2) *
         (coef.c1 * w(1) * w(2) + coef.c2 * w(0) * w(2) + coef.c3 * w(0) * w(1));
}

namespace detail {

// Monic quartic h(y) = y^4 + a3 y^3 + a2 y^2 + a1 y + a0 in the weight
// ratio y1 = w1 / w3. The coefficients are scale-free in (c1, c2, c3);
// h(0) > 0 > h(1) and h -> inf, so the root in (1, inf) is unique.
struct WeightQuartic {
  double a0 = 0.0;
  double a1 = 0.0;
  double a2 = 0.0;
  double a3 = 0.0;

  [[nodiscard]] double operator()(double y) const {
    return (((y + a3) * y + a2) * y + a1) * y + a0;
  }
  [[nodiscard]] double slope(double y) const {
    return ((4.0 * y + 3.0 * a3) * y + 2.0 * a2) * y + a1;
  }
};

[[nodiscard]] inline WeightQuartic weight_quartic(double c1, double c2, double c3) {
  WeightQuartic q;
  const double c3sq = c3 * c3;
  q.a0 = c1 * c1 / c3sq;
  q.a1 = 4.0 * c1 * (-2.0 * c1 + c2 + 2.0 * c3) / (3.0 * c3sq);
  q.a2 = 2.0 *
         (2.0 * c1 * c1 - 2.0 * c1 * c2 - 7.0 * c1 * c3 - 2.0 * c2 * c3 +
          2.0 * c3sq) /
         (3.0 * c3sq);
  q.a3 = 4.0 * (2.0 * c1 + c2 - 2.0 * c3) / (3.0 * c3);
  return q;
}

// A few guarded Newton steps absorb the rounding of the radical formulas;
// a step is rejected if it leaves (1, inf) or fails to shrink |h|.
inline void polish_root(const WeightQuartic& q, double& y) {
  for (int it = 0; it < 4; ++it) {
    const double hy = q(y);
    const double dy = q.slope(y);
    if (hy == 0.0 || dy == 0.0) return;
    const double next = y - hy / dy;
    if (!(next > 1.0) || !(std::abs(q(next)) < std::abs(hy))) return;
    y = next;
  }
}

// Radical solution of the quartic: the resolvent value G has three cube
// root branches and the two square roots are sign-ambiguous, so every
// combination is generated and the root in (1, inf) with the smallest
// residual wins. Returns nullopt when no branch lands there.
[[nodiscard]] inline std::optional<double> quartic_root_by_radicals(const WeightQuartic& q) {
  using cd = std::complex<double>;
  const double a0 = q.a0, a1 = q.a1, a2 = q.a2, a3 = q.a3;
  const double E = 12.0 * a0 + a2 * a2 - 3.0 * a1 * a3;
  const double F = 27.0 * a1 * a1 - 72.0 * a0 * a2 + 2.0 * a2 * a2 * a2 -
                   9.0 * a1 * a2 * a3 + 27.0 * a0 * a3 * a3;
  const cd disc = std::sqrt(cd(F * F - 4.0 * E * E * E, 0.0));
  const cd base = std::pow(cd(F, 0.0) + disc, 1.0 / 3.0);
  // The two cube roots pair up so that their product is a cube root of
  // (F^2 - disc^2) = 4 E^3; dividing by the chosen branch keeps the pair
  // consistent.
  const double paired = std::cbrt(4.0 * E * E * E);
  const cd omega(-0.5, std::sqrt(3.0) / 2.0);

  std::optional<double> best;
  double best_residual = std::numeric_limits<double>::infinity();
  cd branch = base;
  for (int k = 0; k < 3; ++k, branch *= omega) {
    const cd G = std::abs(branch) > 0.0 ? branch + paired / branch : cd(0.0, 0.0);
    const cd A = -2.0 * a2 / 3.0 + a3 * a3 / 4.0 + G / (3.0 * std::cbrt(2.0));
    for (const double sa : {1.0, -1.0}) {
      const cd sqrtA = sa * std::sqrt(A);
      if (std::abs(sqrtA) < 1e-300) continue;
      const cd C = -4.0 * a2 / 3.0 + a3 * a3 / 2.0 - G / (3.0 * std::cbrt(2.0)) +
                   (-8.0 * a1 + 4.0 * a2 * a3 - a3 * a3 * a3) / (4.0 * sqrtA);
      for (const double sc : {1.0, -1.0}) {
        const cd y = -a3 / 4.0 + sqrtA / 2.0 + sc * std::sqrt(C) / 2.0;
        const double scale = std::max(1.0, std::abs(y));
        if (std::abs(y.imag()) > 1e-9 * scale) continue;
        const double yr = y.real();
        if (!(yr > 1.0) || !std::isfinite(yr)) continue;
        const double residual = std::abs(q(yr));
        if (residual < best_residual) {
          best_residual = residual;
          best = yr;
        }
      }
    }
  }
  return best;
}

// Newton iteration on the stationarity system g1(w) = g2(w) = g3(w) of
// f = w1 w2 w3 (c1 w2 w3 + c2 w1 w3 + c3 w1 w2) over the simplex, with
// w3 = 1 - w1 - w2 eliminated. When the constants nearly tie, the
// objective is too flat to locate the optimum by maximization and the
// quartic coefficients cancel to roundoff, but the stationarity equations
// keep a simple root with a well-conditioned Jacobian; for well-separated
// constants the iteration just confirms the radical solution.
inline void polish_weights(double c1, double c2, double c3, Eigen::Vector3d& w) {
  const auto gradient = [&](const Eigen::Vector3d& v) {
    const double w1 = v(0), w2 = v(1), w3 = v(2);
    Eigen::Vector3d g;
    g << c1 * w2 * w2 * w3 * w3 + 2.0 * c2 * w1 * w2 * w3 * w3 +
             2.0 * c3 * w1 * w2 * w2 * w3,
        2.0 * c1 * w1 * w2 * w3 * w3 + c2 * w1 * w1 * w3 * w3 +
            2.0 * c3 * w1 * w1 * w2 * w3,
        2.0 * c1 * w1 * w2 * w2 * w3 + 2.0 * c2 * w1 * w1 * w2 * w3 +
            c3 * w1 * w1 * w2 * w2;
    return g;
  };
  const auto residual = [&](const Eigen::Vector3d& v) {
    const Eigen::Vector3d g = gradient(v);
    return Eigen::Vector2d(g(0) - g(2), g(1) - g(2));
  };

  Eigen::Vector2d r = residual(w);
  for (int it = 0; it < 40; ++it) {
    const double w1 = w(0), w2 = w(1), w3 = w(2);
    const double h11 = 2.0 * c2 * w2 * w3 * w3 + 2.0 * c3 * w2 * w2 * w3;
    const double h12 = 2.0 * c1 * w2 * w3 * w3 + 2.0 * c2 * w1 * w3 * w3 +
                       4.0 * c3 * w1 * w2 * w3;
    const double h13 = 2.0 * c1 * w2 * w2 * w3 + 4.0 * c2 * w1 * w2 * w3 +
                       2.0 * c3 * w1 * w2 * w2;
    const double h22 = 2.0 * c1 * w1 * w3 * w3 + 2.0 * c3 * w1 * w1 * w3;
    const double h23 = 4.0 * c1 * w1 * w2 * w3 + 2.0 * c2 * w1 * w1 * w3 +
                       2.0 * c3 * w1 * w1 * w2;
    const double h33 = 2.0 * c1 * w1 * w2 * w2 + 2.0 * c2 * w1 * w1 * w2;

    Eigen::Matrix2d jac;
    jac << h11 - 2.0 * h13 + h33, h12 - h23 - h13 + h33,
        h12 - h13 - h23 + h33, h22 - 2.0 * h23 + h33;
    const double det = jac(0, 0) * jac(1, 1) - jac(0, 1) * jac(1, 0);
    if (!(std::abs(det) > 0.0)) return;

    const Eigen::Vector2d step = jac.inverse() * r;
    Eigen::Vector3d next(w(0) - step(0), w(1) - step(1),
                         w(2) + step(0) + step(1));
    if (!(next(0) > 0.0 && next(1) > 0.0 && next(2) > 0.0)) return;
    const Eigen::Vector2d r_next = residual(next);
    if (!(r_next.norm() < r.norm())) return;
    w = next;
    r = r_next;
  }
}

// Safeguarded bisection over (1, inf). Returns nullopt when rounding has
// erased the sign of h(1) = -(c1 - c3)^2 / (3 c3^2), which only happens
// when the three constants agree to within roundoff.
[[nodiscard]] inline std::optional<double> quartic_root_by_bisection(const WeightQuartic& q) {
  double lo = 1.0;
  if (!(q(lo) < 0.0)) return std::nullopt;
  double hi = std::max(2.0, 1.0 - q.a3);
  for (int it = 0; it < 200 && !(q(hi) > 0.0); ++it) hi *= 2.0;
  if (!(q(hi) > 0.0)) return std::nullopt;
  for (int it = 0; it < 200; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (!(lo < mid && mid < hi)) break;
    if (q(mid) < 0.0)
      lo = mid;
    else
      hi = mid;
  }
  return 0.5 * (lo + hi);
}

}  // namespace detail

// Optimal weights (w1, w2, w3) of the collapsed determinant form for
// constants 0 < c1 <= c2 <= c3. Equal constants within a relative 1e-12
// dispatch to the explicit two- and three-way tie solutions; distinct
// constants solve the quartic by radicals, with the root verified against
// its bracket and residual and a bisection fallback when the radical
// branches misbehave. The weights come back sorted descending and sum to 1.
[[nodiscard]] inline Eigen::Vector3d solve_three_point(const ThreePointProblem& prob,
                                                       ThreePointDiagnostics* diag = nullptr) {
  const double c1 = prob.c1, c2 = prob.c2, c3 = prob.c3;
  if (!(c1 > 0.0 && c2 > 0.0 && c3 > 0.0) || !std::isfinite(c1) || !std::isfinite(c3))
    throw SpecError("solve_three_point: constants must be positive and finite");
  if (!(c1 <= c2 && c2 <= c3))
    throw SpecError("solve_three_point: constants must be sorted ascending");

  ThreePointDiagnostics local;
  ThreePointDiagnostics& d = diag != nullptr ? *diag : local;
  d = ThreePointDiagnostics{};
  d.y1 = 1.0;
  d.y2 = 1.0;

  const double tie = 1e-12 * c3;
  const bool low_pair = c2 - c1 <= tie;
  const bool high_pair = c3 - c2 <= tie;

  Eigen::Vector3d w;
  if (low_pair && high_pair) {
    d.dispatch_case = 1;
    w.setConstant(1.0 / 3.0);
    return w;
  }
  if (low_pair) {
    // c1 = c2 < c3
    d.dispatch_case = 2;
    const double delta = std::sqrt(4.0 * c1 * c1 - c1 * c3 + c3 * c3);
    const double den = -4.0 * c1 + 3.0 * c3 + 2.0 * delta;
    const double top = -2.0 * c1 + c3 + delta;
    w << top / den, top / den, c3 / den;
    return w;
  }
  if (high_pair) {
    // c1 < c2 = c3
    d.dispatch_case = 3;
    const double delta = std::sqrt(c1 * c1 - c1 * c3 + 4.0 * c3 * c3);
    const double den = -c1 + 8.0 * c3 + delta;
    w << (-c1 + 2.0 * c3 + delta) / den, 3.0 * c3 / den, 3.0 * c3 / den;
    return w;
  }

  d.dispatch_case = 4;
  const detail::WeightQuartic q = detail::weight_quartic(c1, c2, c3);

  std::optional<double> y1 = detail::quartic_root_by_radicals(q);
  d.radical_path = y1.has_value();
  if (y1) detail::polish_root(q, *y1);

  // Bracket and residual verification: the root must sit in (1, inf) with
  // h negative at the left end and positive beyond it. The left-end value
  // -(c1 - c3)^2 / (3 c3^2) can drown in summation roundoff when the
  // constants nearly tie, so the sign check carries a coefficient-scale
  // allowance.
  const double coeff_scale = 1.0 + std::abs(q.a0) + std::abs(q.a1) +
                             std::abs(q.a2) + std::abs(q.a3);
  const double bracket_slack = 64.0 * std::numeric_limits<double>::epsilon() * coeff_scale;
  const auto verified = [&](double y) {
    if (!(y > 1.0) || !std::isfinite(y)) return false;
    if (!(q(1.0) <= bracket_slack) || !(q(2.0 * y + 1.0) > 0.0)) return false;
    return std::abs(q(y)) <= 1e-8 * std::max(1.0, y * y * y * y);
  };
  if (!y1 || !verified(*y1)) {
    y1 = detail::quartic_root_by_bisection(q);
    d.radical_path = false;
    if (y1) detail::polish_root(q, *y1);
    if (!y1) {
      // The sign of h(1) = -(c1 - c3)^2 / (3 c3^2) was lost to rounding:
      // the quartic coefficients can no longer see the gap between the
      // constants. The stationarity iteration still can, so start it from
      // the uniform weights.
      w.setConstant(1.0 / 3.0);
      detail::polish_weights(c1, c2, c3, w);
      d.y1 = w(0) / w(2);
      d.y2 = w(1) / w(2);
      d.residual = std::abs(q(d.y1));
      return w;
    }
    if (!verified(*y1))
      throw SolverError("solve_three_point: quartic root failed verification");
  }

  const double den2 = c3 * *y1 * *y1 - 2.0 * (c3 - c1) * *y1 - c1;
  const double y2 = 2.0 * c2 * (1.0 - *y1) * *y1 / den2;
  if (!(y2 > 0.0) || !std::isfinite(y2))
    throw SolverError("solve_three_point: weight ratio recovery failed");

  const double total = *y1 + y2 + 1.0;
  w << *y1 / total, y2 / total, 1.0 / total;
  detail::polish_weights(c1, c2, c3, w);
  d.y1 = w(0) / w(2);
  d.y2 = w(1) / w(2);
  d.residual = std::abs(q(d.y1));
  return w;
}

// Whether the uniform allocation on the given minimal support is known to
// be optimal among minimally supported designs: either J = 2 with as many
// points as parameters, or category-only predictors (npo) with equally
// sized blocks that all reach full column rank on these points. Everything
// else is reported as not guaranteed rather than disproved.
[[nodiscard]] inline UniformVerdict uniform_minimal_verdict(
    const ModelSpec& model, const std::vector<Eigen::VectorXd>& points) {
  for (std::size_t i = 0; i < points.size(); ++i)
    for (std::size_t k = i + 1; k < points.size(); ++k)
      if (points[i] == points[k])
        throw SpecError("uniform_minimal_verdict: support points must be distinct");

  const RankReport rep = analyze_rank(model, points);
  if (static_cast<int>(points.size()) != rep.k_min)
    throw SpecError("uniform_minimal_verdict: expected a minimal support of " +
                    std::to_string(rep.k_min) + " points, got " +
                    std::to_string(points.size()));

  if (model.J == 2 && static_cast<int>(points.size()) == rep.p)
    return UniformVerdict::uniform_optimal;

  if (model.odds() == OddsStructure::npo) {
    bool equal_blocks = true;
    bool full_rank = true;
    for (std::size_t j = 0; j < rep.p_j.size(); ++j) {
      equal_blocks = equal_blocks && rep.p_j[j] == rep.p_j[0];
      full_rank = full_rank && rep.rank_j[j] == rep.p_j[j];
    }
    if (equal_blocks && full_rank) return UniformVerdict::uniform_optimal;
  }
  return UniformVerdict::not_guaranteed;
}

}  // namespace optdesign
