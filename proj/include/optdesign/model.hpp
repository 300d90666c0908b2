#pragma once

// Core model family for multinomial logistic regression with J response
// categories: baseline-category, cumulative, adjacent-categories, and
// continuation-ratio logits, each with category-specific and/or shared
// predictor blocks. Provides linear predictors, category probabilities,
// feasibility checks, and the per-point building blocks (model matrix X,
// inverse link-Jacobian columns c_j, and the U matrix) consumed by the
// Fisher-information assembly.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace optdesign {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Malformed model/parameter/design structure (wrong sizes, bad invariants).
struct SpecError : Error {
  using Error::Error;
};

// A design point falls outside the feasible region for the working
// parameter vector (cumulative ordering violated, or a probability
// underflows to numerical zero).
struct DesignSpaceError : Error {
  using Error::Error;
};

// An optimizer was handed a design with zero objective value.
struct SingularDesignError : Error {
  using Error::Error;
};

// A closed-form solver failed its own residual checks.
struct SolverError : Error {
  using Error::Error;
};

enum class LinkKind { baseline, cumulative, adjacent, continuation };

[[nodiscard]] inline std::string_view to_string(LinkKind link) {
  switch (link) {
    case LinkKind::baseline: return "baseline";
    case LinkKind::cumulative: return "cumulative";
    case LinkKind::adjacent: return "adjacent";
    case LinkKind::continuation: return "continuation";
  }
  return "unknown";
}

[[nodiscard]] inline std::optional<LinkKind> link_from_string(std::string_view s) {
  if (s == "baseline") return LinkKind::baseline;
  if (s == "cumulative") return LinkKind::cumulative;
  if (s == "adjacent") return LinkKind::adjacent;
  if (s == "continuation") return LinkKind::continuation;
  return std::nullopt;
}

// A predictor block is an ordered list of monomial terms over the d
// factors; term (e1,...,ed) evaluates to prod_k x_k^{e_k}, and the
// all-zero term is the intercept.
struct PredictorSpec {
  std::vector<std::vector<int>> terms;

  [[nodiscard]] std::size_t size() const noexcept { return terms.size(); }
  [[nodiscard]] bool empty() const noexcept { return terms.empty(); }

  [[nodiscard]] static PredictorSpec intercept_only(int d) {
    PredictorSpec s;
    s.terms.push_back(std::vector<int>(static_cast<std::size_t>(d), 0));
    return s;
  }

  [[nodiscard]] bool intercept_only_block() const {
    if (terms.size() != 1) return false;
    return std::all_of(terms[0].begin(), terms[0].end(), [](int e) { return e == 0; });
  }
};

enum class OddsStructure { po, npo, ppo };

[[nodiscard]] inline std::string_view to_string(OddsStructure o) {
  switch (o) {
    case OddsStructure::po: return "po";
    case OddsStructure::npo: return "npo";
    case OddsStructure::ppo: return "ppo";
  }
  return "unknown";
}

// Full model description: link, J response categories, d factors,
// category-specific predictor blocks h_1..h_{J-1} and a shared block h_c.
// The odds structure is derived, never stored.
struct ModelSpec {
  int d = 1;
  int J = 2;
  LinkKind link = LinkKind::baseline;
  std::vector<PredictorSpec> category;  // J-1 blocks
  PredictorSpec common;                 // may be empty

  [[nodiscard]] int category_param_count(int j) const {
    return static_cast<int>(category.at(static_cast<std::size_t>(j)).size());
  }
  [[nodiscard]] int common_param_count() const { return static_cast<int>(common.size()); }
  [[nodiscard]] int param_count() const {
    int p = common_param_count();
    for (const auto& block : category) p += static_cast<int>(block.size());
    return p;
  }

  [[nodiscard]] OddsStructure odds() const {
    const bool all_intercept = std::all_of(category.begin(), category.end(),
                                           [](const PredictorSpec& b) { return b.intercept_only_block(); });
    if (all_intercept) return OddsStructure::po;
    if (common.empty()) return OddsStructure::npo;
    return OddsStructure::ppo;
  }

  void validate() const {
    if (J < 2) throw SpecError("model: J must be at least 2");
    if (d < 1) throw SpecError("model: factor count d must be at least 1");
    if (static_cast<int>(category.size()) != J - 1)
      throw SpecError("model: expected " + std::to_string(J - 1) + " category predictor blocks");
    if (param_count() < 1) throw SpecError("model: no parameters");
    auto check_block = [this](const PredictorSpec& block, const std::string& name) {
      std::set<std::vector<int>> seen;
      for (const auto& term : block.terms) {
        if (static_cast<int>(term.size()) != d)
          throw SpecError("model: term in " + name + " has wrong factor count");
        if (std::any_of(term.begin(), term.end(), [](int e) { return e < 0; }))
          throw SpecError("model: negative exponent in " + name);
        if (!seen.insert(term).second)
          throw SpecError("model: duplicate term in " + name);
      }
    };
    for (std::size_t j = 0; j < category.size(); ++j)
      check_block(category[j], "h" + std::to_string(j + 1));
    check_block(common, "hc");
  }
};

// Parameter vector theta = (beta_1, ..., beta_{J-1}, zeta), serialized in
// exactly that block order.
struct ParameterVector {
  std::vector<Eigen::VectorXd> beta;  // J-1 blocks
  Eigen::VectorXd zeta;

  [[nodiscard]] Eigen::VectorXd flatten() const {
    Eigen::Index n = zeta.size();
    for (const auto& b : beta) n += b.size();
    Eigen::VectorXd out(n);
    Eigen::Index at = 0;
    for (const auto& b : beta) {
      out.segment(at, b.size()) = b;
      at += b.size();
    }
    out.segment(at, zeta.size()) = zeta;
    return out;
  }

  [[nodiscard]] static ParameterVector from_flat(const ModelSpec& model, const Eigen::VectorXd& flat) {
    if (flat.size() != model.param_count())
      throw SpecError("theta: expected " + std::to_string(model.param_count()) +
                      " parameters, got " + std::to_string(flat.size()));
    ParameterVector theta;
    Eigen::Index at = 0;
    for (int j = 0; j < model.J - 1; ++j) {
      const Eigen::Index pj = model.category_param_count(j);
      theta.beta.push_back(flat.segment(at, pj));
      at += pj;
    }
    theta.zeta = flat.segment(at, model.common_param_count());
    return theta;
  }

  void validate_against(const ModelSpec& model) const {
    if (static_cast<int>(beta.size()) != model.J - 1)
      throw SpecError("theta: wrong number of beta blocks");
    for (int j = 0; j < model.J - 1; ++j)
      if (beta[static_cast<std::size_t>(j)].size() != model.category_param_count(j))
        throw SpecError("theta: beta" + std::to_string(j + 1) + " has wrong length");
    if (zeta.size() != model.common_param_count())
      throw SpecError("theta: zeta has wrong length");
  }
};

struct LinearPredictors {
  Eigen::VectorXd a;  // length J-1; the J-th predictor is identically 0
};

struct CategoryProbabilities {
  Eigen::VectorXd pi;     // length J, strictly positive, sums to 1
  Eigen::VectorXd gamma;  // length J-1, gamma_j = pi_1 + ... + pi_j
};

// Constant matrices of the unified link representation
// C^T log(L pi) = eta. C is J x (2J-1) and shared by all links; L is
// (2J-1) x J and selects the odds numerators (rows 1..J-1), denominators
// (rows J..2J-2), and the normalizing row of ones.
struct LinkConstants {
  Eigen::MatrixXd C;  // (2J-1) x J; C^T log(L pi) = (a, 0)
  Eigen::MatrixXd L;  // (2J-1) x J
};

[[nodiscard]] inline LinkConstants link_constants(LinkKind link, int J) {
  if (J < 2) throw SpecError("link_constants: J must be at least 2");
  LinkConstants k;
  k.C = Eigen::MatrixXd::Zero(2 * J - 1, J);
  for (int j = 0; j < J - 1; ++j) {
    k.C(j, j) = 1.0;
    k.C(J - 1 + j, j) = -1.0;
  }
  k.C(2 * J - 2, J - 1) = 1.0;

  k.L = Eigen::MatrixXd::Zero(2 * J - 1, J);
  k.L.row(2 * J - 2).setOnes();
  for (int j = 0; j < J - 1; ++j) {
    switch (link) {
      case LinkKind::baseline:
        k.L(j, j) = 1.0;
        k.L(J - 1 + j, J - 1) = 1.0;
        break;
      case LinkKind::cumulative:
        k.L.row(j).head(j + 1).setOnes();           // gamma_j
        k.L.row(J - 1 + j).tail(J - j - 1).setOnes();  // 1 - gamma_j
        break;
      case LinkKind::adjacent:
        k.L(j, j) = 1.0;
        k.L(J - 1 + j, j + 1) = 1.0;
        break;
      case LinkKind::continuation:
        k.L(j, j) = 1.0;
        k.L.row(J - 1 + j).tail(J - j - 1).setOnes();  // 1 - gamma_j
        break;
    }
  }
  return k;
}

struct UMatrix {
  Eigen::MatrixXd u;  // (J-1) x (J-1), symmetric, positive definite for pi > 0
};

struct ModelMatrix {
  Eigen::MatrixXd X;  // J x p, last row identically zero
};

// Evaluates a predictor block at x: one monomial value per term.
[[nodiscard]] inline Eigen::VectorXd evaluate_predictors(const PredictorSpec& spec,
                                                         const Eigen::VectorXd& x) {
  Eigen::VectorXd out(static_cast<Eigen::Index>(spec.terms.size()));
  for (std::size_t t = 0; t < spec.terms.size(); ++t) {
    const auto& term = spec.terms[t];
    if (static_cast<Eigen::Index>(term.size()) != x.size())
      throw SpecError("evaluate_predictors: point has wrong factor count");
    double v = 1.0;
    for (std::size_t k = 0; k < term.size(); ++k)
      for (int e = 0; e < term[k]; ++e) v *= x(static_cast<Eigen::Index>(k));
    out(static_cast<Eigen::Index>(t)) = v;
  }
  return out;
}

// Assembles the J x p model matrix: row j carries h_j(x) in its category
// block and h_c(x) in the shared block; row J is zero.
[[nodiscard]] inline ModelMatrix build_model_matrix(const ModelSpec& model, const Eigen::VectorXd& x) {
  if (x.size() != model.d) throw SpecError("build_model_matrix: point has wrong factor count");
  const int p = model.param_count();
  ModelMatrix mm;
  mm.X = Eigen::MatrixXd::Zero(model.J, p);
  int at = 0;
  for (int j = 0; j < model.J - 1; ++j) {
    const Eigen::VectorXd hj = evaluate_predictors(model.category[static_cast<std::size_t>(j)], x);
    mm.X.row(j).segment(at, hj.size()) = hj.transpose();
    at += static_cast<int>(hj.size());
  }
  if (!model.common.empty()) {
    const Eigen::VectorXd hc = evaluate_predictors(model.common, x);
    for (int j = 0; j < model.J - 1; ++j)
      mm.X.row(j).segment(at, hc.size()) = hc.transpose();
  }
  return mm;
}

[[nodiscard]] inline LinearPredictors linear_predictors(const ModelSpec& model,
                                                        const ParameterVector& theta,
                                                        const Eigen::VectorXd& x) {
  theta.validate_against(model);
  LinearPredictors lp;
  lp.a.resize(model.J - 1);
  const Eigen::VectorXd hc =
      model.common.empty() ? Eigen::VectorXd() : evaluate_predictors(model.common, x);
  for (int j = 0; j < model.J - 1; ++j) {
    const Eigen::VectorXd hj = evaluate_predictors(model.category[static_cast<std::size_t>(j)], x);
    double a = hj.dot(theta.beta[static_cast<std::size_t>(j)]);
    if (hc.size() > 0) a += hc.dot(theta.zeta);
    lp.a(j) = a;
  }
  return lp;
}

struct FeasibilityVerdict {
  bool feasible = true;
  // 1-based ordering pair (j, j+1) violated for cumulative links; -1 otherwise.
  int violated_low = -1;
  int violated_high = -1;
  std::string reason;
};

namespace detail {

inline constexpr double kPredictorClamp = 700.0;  // keeps exp() finite
inline constexpr double kProbabilityFloor = 1e-300;
inline constexpr double kCumulativeGap = 1e-12;

[[nodiscard]] inline double sigmoid(double a) {
  return a >= 0.0 ? 1.0 / (1.0 + std::exp(-a)) : std::exp(a) / (1.0 + std::exp(a));
}

// Maps linear predictors to category probabilities without validation;
// returns the failure reason instead of throwing so the feasibility
// verdict and the throwing path share one implementation.
inline std::optional<std::string> pi_from_a(LinkKind link, const Eigen::VectorXd& a_raw,
                                            Eigen::VectorXd& pi) {
  const Eigen::Index Jm1 = a_raw.size();
  const Eigen::Index J = Jm1 + 1;
  Eigen::VectorXd a = a_raw.cwiseMax(-kPredictorClamp).cwiseMin(kPredictorClamp);
  pi.resize(J);
  switch (link) {
    case LinkKind::baseline: {
      const double m = std::max(0.0, a.maxCoeff());
      double denom = std::exp(-m);
      for (Eigen::Index j = 0; j < Jm1; ++j) denom += std::exp(a(j) - m);
      for (Eigen::Index j = 0; j < Jm1; ++j) pi(j) = std::exp(a(j) - m) / denom;
      pi(J - 1) = std::exp(-m) / denom;
      break;
    }
    case LinkKind::adjacent: {
      // pi_j proportional to exp(a_j + a_{j+1} + ... + a_{J-1}), pi_J to 1.
      Eigen::VectorXd tail(J);
      tail(J - 1) = 0.0;
      for (Eigen::Index j = Jm1 - 1; j >= 0; --j) tail(j) = tail(j + 1) + a(j);
      const double m = tail.maxCoeff();
      double denom = 0.0;
      for (Eigen::Index j = 0; j < J; ++j) denom += std::exp(tail(j) - m);
      for (Eigen::Index j = 0; j < J; ++j) pi(j) = std::exp(tail(j) - m) / denom;
      break;
    }
    case LinkKind::cumulative: {
      for (Eigen::Index j = 0; j + 1 < Jm1; ++j)
        if (!(a(j + 1) - a(j) > kCumulativeGap))
          return "cumulative predictors not strictly increasing at pair (" +
                 std::to_string(j + 1) + "," + std::to_string(j + 2) + ")";
      double prev = 0.0;
      for (Eigen::Index j = 0; j < Jm1; ++j) {
        const double g = sigmoid(a(j));
        pi(j) = g - prev;
        prev = g;
      }
      pi(J - 1) = 1.0 - prev;
      break;
    }
    case LinkKind::continuation: {
      double survive = 1.0;  // prob of reaching category j
      for (Eigen::Index j = 0; j < Jm1; ++j) {
        const double s = sigmoid(a(j));
        pi(j) = s * survive;
        survive *= 1.0 - s;
      }
      pi(J - 1) = survive;
      break;
    }
  }
  for (Eigen::Index j = 0; j < J; ++j) {
    if (!std::isfinite(pi(j))) return "probability overflow at category " + std::to_string(j + 1);
    if (pi(j) < kProbabilityFloor)
      return "probability underflow at category " + std::to_string(j + 1);
  }
  return std::nullopt;
}

}  // namespace detail

// Feasibility of a design point under theta: baseline/adjacent/continuation
// links accept any finite predictors; cumulative links additionally require
// a_1 < ... < a_{J-1} strictly. Probability underflow below 1e-300 is
// treated as infeasible for every link.
[[nodiscard]] inline FeasibilityVerdict validate_design_point(const ModelSpec& model,
                                                              const ParameterVector& theta,
                                                              const Eigen::VectorXd& x) {
  FeasibilityVerdict v;
  const LinearPredictors lp = linear_predictors(model, theta, x);
  for (Eigen::Index j = 0; j < lp.a.size(); ++j) {
    if (!std::isfinite(lp.a(j))) {
      v.feasible = false;
      v.reason = "non-finite linear predictor";
      return v;
    }
  }
  if (model.link == LinkKind::cumulative) {
    for (Eigen::Index j = 0; j + 1 < lp.a.size(); ++j) {
      if (!(lp.a(j + 1) - lp.a(j) > detail::kCumulativeGap)) {
        v.feasible = false;
        v.violated_low = static_cast<int>(j) + 1;
        v.violated_high = static_cast<int>(j) + 2;
        v.reason = "cumulative predictors not strictly increasing";
        return v;
      }
    }
  }
  Eigen::VectorXd pi;
  if (auto err = detail::pi_from_a(model.link, lp.a, pi)) {
    v.feasible = false;
    v.reason = *err;
  }
  return v;
}

// Category probabilities from the closed-form inverse of each logit map.
[[nodiscard]] inline CategoryProbabilities compute_pi(const ModelSpec& model,
                                                      const ParameterVector& theta,
                                                      const Eigen::VectorXd& x) {
  const LinearPredictors lp = linear_predictors(model, theta, x);
  CategoryProbabilities cp;
  if (auto err = detail::pi_from_a(model.link, lp.a, cp.pi))
    throw DesignSpaceError("compute_pi: " + *err);
  cp.gamma.resize(model.J - 1);
  double acc = 0.0;
  for (int j = 0; j < model.J - 1; ++j) {
    acc += cp.pi(j);
    cp.gamma(j) = acc;
  }
  return cp;
}

// Closed-form u_st(pi) = c_s^T diag(pi)^{-1} c_t for s,t = 1..J-1. The
// implied J x J extension has u_sJ = 0 and u_JJ = 1. Cumulative links give
// a tridiagonal matrix, continuation links a diagonal one.
[[nodiscard]] inline UMatrix compute_u(LinkKind link, const CategoryProbabilities& cp) {
  const Eigen::Index J = cp.pi.size();
  const Eigen::VectorXd& pi = cp.pi;
  const Eigen::VectorXd& g = cp.gamma;
  UMatrix um;
  um.u = Eigen::MatrixXd::Zero(J - 1, J - 1);
  for (Eigen::Index s = 0; s < J - 1; ++s) {
    switch (link) {
      case LinkKind::baseline:
        um.u(s, s) = pi(s) * (1.0 - pi(s));
        for (Eigen::Index t = s + 1; t < J - 1; ++t) um.u(s, t) = -pi(s) * pi(t);
        break;
      case LinkKind::cumulative: {
        const double gs = g(s), hs = 1.0 - g(s);
        um.u(s, s) = gs * gs * hs * hs * (1.0 / pi(s) + 1.0 / pi(s + 1));
        if (s + 1 < J - 1) {
          const double gt = g(s + 1), ht = 1.0 - g(s + 1);
          um.u(s, s + 1) = -gs * gt * hs * ht / pi(s + 1);
        }
        break;
      }
      case LinkKind::adjacent:
        um.u(s, s) = g(s) * (1.0 - g(s));
        for (Eigen::Index t = s + 1; t < J - 1; ++t) um.u(s, t) = g(s) * (1.0 - g(t));
        break;
      case LinkKind::continuation: {
        const double prev = s == 0 ? 0.0 : g(s - 1);
        um.u(s, s) = pi(s) * (1.0 - g(s)) / (1.0 - prev);
        break;
      }
    }
  }
  for (Eigen::Index s = 0; s < J - 1; ++s)
    for (Eigen::Index t = s + 1; t < J - 1; ++t) um.u(t, s) = um.u(s, t);
  return um;
}

// Columns c_1..c_J of the inverse of C^T diag(L pi)^{-1} L, by closed form.
// Column J equals pi for every link; 1^T c_j = 0 for j < J.
[[nodiscard]] inline Eigen::MatrixXd cdl_inverse_columns(LinkKind link,
                                                         const CategoryProbabilities& cp) {
  const Eigen::Index J = cp.pi.size();
  const Eigen::VectorXd& pi = cp.pi;
  const Eigen::VectorXd& g = cp.gamma;
  Eigen::MatrixXd cols = Eigen::MatrixXd::Zero(J, J);
  for (Eigen::Index j = 0; j < J - 1; ++j) {
    switch (link) {
      case LinkKind::baseline:
        cols.col(j) = -pi(j) * pi;
        cols(j, j) += pi(j);
        break;
      case LinkKind::cumulative:
        cols(j, j) = g(j) * (1.0 - g(j));
        cols(j + 1, j) = -g(j) * (1.0 - g(j));
        break;
      case LinkKind::adjacent:
        cols.col(j).head(j + 1) = (1.0 - g(j)) * pi.head(j + 1);
        cols.col(j).tail(J - j - 1) = -g(j) * pi.tail(J - j - 1);
        break;
      case LinkKind::continuation: {
        const double prev = j == 0 ? 0.0 : g(j - 1);
        const double scale = pi(j) / (1.0 - prev);
        cols(j, j) = scale * (1.0 - g(j));
        cols.col(j).tail(J - j - 1) = -scale * pi.tail(J - j - 1);
        break;
      }
    }
  }
  cols.col(J - 1) = pi;
  return cols;
}

// Closed form of det(C^T diag(L pi)^{-1} L): product of 1/pi_j for
// baseline, adjacent, and continuation links; product of
// 1/(gamma_j (1-gamma_j)) for cumulative links.
[[nodiscard]] inline double cdl_log_abs_det(LinkKind link, const CategoryProbabilities& cp) {
  double ld = 0.0;
  if (link == LinkKind::cumulative) {
    for (Eigen::Index j = 0; j < cp.gamma.size(); ++j)
      ld -= std::log(cp.gamma(j)) + std::log1p(-cp.gamma(j));
  } else {
    for (Eigen::Index j = 0; j < cp.pi.size(); ++j) ld -= std::log(cp.pi(j));
  }
  return ld;
}

}  // namespace optdesign
