#pragma once

// Fisher information for multinomial logit models, computed by three
// algebraically equivalent routes that share no intermediate algebra:
//
//   fisher_total(exact)   sum over points of n_i X_i^T U_i X_i
//   fisher_total(approx)  G^T W G from the closed-form inverse columns
//   fisher_huh            H U H^T with U assembled from u_st blocks
//
// Keeping the routes separate lets the test suite use their agreement as a
// correctness check. This header also carries the support-size analysis:
// how many design points a positive definite information matrix needs.

#include <optdesign/model.hpp>

#include <Eigen/Dense>

#include <cmath>
#include <limits>
#include <string>
#include <vector>

namespace optdesign {

struct DesignApprox {
  std::vector<Eigen::VectorXd> points;
  Eigen::VectorXd weights;  // nonnegative, summing to 1
};

struct DesignExact {
  std::vector<Eigen::VectorXd> points;
  std::vector<long> counts;  // nonnegative integers

  [[nodiscard]] long total() const {
    long n = 0;
    for (long c : counts) n += c;
    return n;
  }
};

struct FisherMatrix {
  Eigen::MatrixXd F;
  double logdet = -std::numeric_limits<double>::infinity();  // -inf when singular
  double min_eigenvalue = 0.0;
};

namespace detail {

// log det of a symmetric PSD matrix via pivoted LDLT; -inf when any pivot
// falls below a relative floor. `shift` is added to the result, which lets
// callers evaluate det(s * F) in log space without forming s * F.
inline double psd_log_det(const Eigen::MatrixXd& F, double shift = 0.0) {
  if (F.rows() == 0) return shift;
  Eigen::LDLT<Eigen::MatrixXd> ldlt(F);
  if (ldlt.info() != Eigen::Success) return -std::numeric_limits<double>::infinity();
  const Eigen::VectorXd d = ldlt.vectorD();
  const double floor = 1e-12 * d.cwiseAbs().maxCoeff();
  double acc = shift;
  for (Eigen::Index i = 0; i < d.size(); ++i) {
    if (!(d(i) > floor)) return -std::numeric_limits<double>::infinity();
    acc += std::log(d(i));
  }
  return acc;
}

inline FisherMatrix finish_fisher(Eigen::MatrixXd F, double logdet_shift = 0.0,
                                  double scale_back = 1.0) {
  FisherMatrix out;
  out.logdet = psd_log_det(F, logdet_shift);
  if (scale_back != 1.0) F *= scale_back;
  out.F = std::move(F);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(out.F, Eigen::EigenvaluesOnly);
  out.min_eigenvalue = es.eigenvalues().minCoeff();
  return out;
}

// Regressor matrix of one block over the point set, one row per parameter,
// one column per point.
inline Eigen::MatrixXd block_over_points(const PredictorSpec& spec,
                                         const std::vector<Eigen::VectorXd>& points) {
  Eigen::MatrixXd M(static_cast<Eigen::Index>(spec.terms.size()),
                    static_cast<Eigen::Index>(points.size()));
  for (std::size_t i = 0; i < points.size(); ++i)
    M.col(static_cast<Eigen::Index>(i)) = evaluate_predictors(spec, points[i]);
  return M;
}

inline int matrix_rank(const Eigen::MatrixXd& M) {
  if (M.rows() == 0 || M.cols() == 0) return 0;
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(M);
  const double tol = 1e-9 * svd.singularValues()(0);
  int r = 0;
  for (Eigen::Index i = 0; i < svd.singularValues().size(); ++i)
    if (svd.singularValues()(i) > tol) ++r;
  return r;
}

}  // namespace detail

// Wraps a precomputed information matrix with its log determinant and
// smallest eigenvalue.
[[nodiscard]] inline FisherMatrix evaluate_information(Eigen::MatrixXd F) {
  return detail::finish_fisher(std::move(F));
}

// Single-point information X^T U X.
[[nodiscard]] inline Eigen::MatrixXd fisher_at_point(const ModelSpec& model,
                                                     const ParameterVector& theta,
                                                     const Eigen::VectorXd& x) {
  const CategoryProbabilities cp = compute_pi(model, theta, x);
  const Eigen::MatrixXd X = build_model_matrix(model, x).X;
  const Eigen::MatrixXd u = compute_u(model.link, cp).u;
  const Eigen::MatrixXd Xtop = X.topRows(model.J - 1);
  return Xtop.transpose() * u * Xtop;
}

// Exact-design information: sum of n_i X_i^T U_i X_i. The log determinant
// is taken on F / n so that large run sizes cannot overflow, then shifted
// back by p log n.
[[nodiscard]] inline FisherMatrix fisher_total(const ModelSpec& model,
                                               const ParameterVector& theta,
                                               const DesignExact& design) {
  if (design.points.size() != design.counts.size())
    throw SpecError("fisher_total: point and count lists differ in length");
  const int p = model.param_count();
  const long n = design.total();
  if (n <= 0) throw SpecError("fisher_total: design has no observations");
  Eigen::MatrixXd F = Eigen::MatrixXd::Zero(p, p);
  for (std::size_t i = 0; i < design.points.size(); ++i) {
    if (design.counts[i] < 0) throw SpecError("fisher_total: negative count");
    if (design.counts[i] == 0) continue;
    F += static_cast<double>(design.counts[i]) *
         fisher_at_point(model, theta, design.points[i]);
  }
  const double inv_n = 1.0 / static_cast<double>(n);
  return detail::finish_fisher(F * inv_n, p * std::log(static_cast<double>(n)),
                               static_cast<double>(n));
}

// Stacked factorization F = G^T W G for an approximate design: G holds, per
// point, the closed-form inverse columns scaled by the regressors; W is the
// diagonal of w_i / pi_ij weights.
struct GWFactorization {
  Eigen::MatrixXd G;       // (m J) x p
  Eigen::VectorXd W_diag;  // length m J
};

[[nodiscard]] inline GWFactorization build_gw(const ModelSpec& model,
                                              const ParameterVector& theta,
                                              const DesignApprox& design) {
  const std::size_t m = design.points.size();
  if (static_cast<std::size_t>(design.weights.size()) != m)
    throw SpecError("build_gw: point and weight lists differ in length");
  const int p = model.param_count();
  const int J = model.J;
  GWFactorization gw;
  gw.G = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(m) * J, p);
  gw.W_diag.resize(static_cast<Eigen::Index>(m) * J);
  for (std::size_t i = 0; i < m; ++i) {
    const double w = design.weights(static_cast<Eigen::Index>(i));
    if (w < 0.0) throw SpecError("build_gw: negative weight");
    const CategoryProbabilities cp = compute_pi(model, theta, design.points[i]);
    const Eigen::MatrixXd cols = cdl_inverse_columns(model.link, cp);
    const Eigen::Index r0 = static_cast<Eigen::Index>(i) * J;
    Eigen::Index c0 = 0;
    Eigen::VectorXd csum = Eigen::VectorXd::Zero(J);
    for (int j = 0; j < J - 1; ++j) {
      const Eigen::VectorXd h = evaluate_predictors(model.category[static_cast<std::size_t>(j)],
                                                    design.points[i]);
      gw.G.block(r0, c0, J, h.size()) = cols.col(j) * h.transpose();
      csum += cols.col(j);
      c0 += h.size();
    }
    if (!model.common.empty()) {
      const Eigen::VectorXd hc = evaluate_predictors(model.common, design.points[i]);
      gw.G.block(r0, c0, J, hc.size()) = csum * hc.transpose();
    }
    gw.W_diag.segment(r0, J) = w * cp.pi.cwiseInverse();
  }
  return gw;
}

// Approximate-design information by the G^T W G route. Independent of
// fisher_at_point.
[[nodiscard]] inline FisherMatrix fisher_total(const ModelSpec& model,
                                               const ParameterVector& theta,
                                               const DesignApprox& design) {
  const GWFactorization gw = build_gw(model, theta, design);
  return detail::finish_fisher(gw.G.transpose() * gw.W_diag.asDiagonal() * gw.G);
}

// Regressor stack used by the H U H^T route and the rank analysis: per-block
// matrices H_j (p_j x m) and H_c (p_c x m), assembled into H (p x m(J-1))
// with the category blocks on disjoint row groups over their own column
// groups and the shared block repeated under every column group.
struct HStack {
  std::vector<Eigen::MatrixXd> H_j;
  Eigen::MatrixXd H_c;
  Eigen::MatrixXd H;

  // Columns restricted to active design points (n_i > 0), the reduced stack
  // whose row rank decides positive definiteness.
  [[nodiscard]] Eigen::MatrixXd reduced(const std::vector<bool>& active) const {
    const Eigen::Index m = H_c.cols() > 0 ? H_c.cols()
                                          : (H_j.empty() ? 0 : H_j.front().cols());
    if (static_cast<Eigen::Index>(active.size()) != m)
      throw SpecError("HStack::reduced: mask length does not match point count");
    Eigen::Index kept = 0;
    for (bool a : active) kept += a ? 1 : 0;
    const Eigen::Index blocks = static_cast<Eigen::Index>(H_j.size());
    Eigen::MatrixXd out(H.rows(), kept * blocks);
    Eigen::Index c = 0;
    for (Eigen::Index j = 0; j < blocks; ++j)
      for (Eigen::Index i = 0; i < m; ++i)
        if (active[static_cast<std::size_t>(i)]) out.col(c++) = H.col(j * m + i);
    return out;
  }
};

[[nodiscard]] inline HStack build_h_stack(const ModelSpec& model,
                                          const std::vector<Eigen::VectorXd>& points) {
  const std::size_t m = points.size();
  const int blocks = model.J - 1;
  HStack hs;
  for (int j = 0; j < blocks; ++j)
    hs.H_j.push_back(detail::block_over_points(model.category[static_cast<std::size_t>(j)],
                                               points));
  hs.H_c = detail::block_over_points(model.common, points);

  hs.H = Eigen::MatrixXd::Zero(model.param_count(), static_cast<Eigen::Index>(m) * blocks);
  Eigen::Index r0 = 0;
  for (int j = 0; j < blocks; ++j) {
    hs.H.block(r0, static_cast<Eigen::Index>(j) * static_cast<Eigen::Index>(m),
               hs.H_j[static_cast<std::size_t>(j)].rows(), static_cast<Eigen::Index>(m)) =
        hs.H_j[static_cast<std::size_t>(j)];
    r0 += hs.H_j[static_cast<std::size_t>(j)].rows();
  }
  if (hs.H_c.rows() > 0)
    for (int j = 0; j < blocks; ++j)
      hs.H.block(r0, static_cast<Eigen::Index>(j) * static_cast<Eigen::Index>(m),
                 hs.H_c.rows(), static_cast<Eigen::Index>(m)) = hs.H_c;
  return hs;
}

// Third route: F = H U H^T where U carries the u_st(pi_i) entries, each
// (s, t) block an m x m diagonal scaled by the design weights. Works for
// exact designs (pass counts) and approximate ones (pass w_i).
[[nodiscard]] inline FisherMatrix fisher_huh(const ModelSpec& model, const ParameterVector& theta,
                                             const std::vector<Eigen::VectorXd>& points,
                                             const Eigen::VectorXd& weights) {
  const std::size_t m = points.size();
  if (static_cast<std::size_t>(weights.size()) != m)
    throw SpecError("fisher_huh: point and weight lists differ in length");
  const int blocks = model.J - 1;
  const HStack hs = build_h_stack(model, points);

  Eigen::MatrixXd U =
      Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(m) * blocks,
                            static_cast<Eigen::Index>(m) * blocks);
  for (std::size_t i = 0; i < m; ++i) {
    const CategoryProbabilities cp = compute_pi(model, theta, points[i]);
    const Eigen::MatrixXd u = compute_u(model.link, cp).u;
    for (int s = 0; s < blocks; ++s)
      for (int t = 0; t < blocks; ++t)
        U(static_cast<Eigen::Index>(s) * static_cast<Eigen::Index>(m) +
              static_cast<Eigen::Index>(i),
          static_cast<Eigen::Index>(t) * static_cast<Eigen::Index>(m) +
              static_cast<Eigen::Index>(i)) =
            weights(static_cast<Eigen::Index>(i)) * u(s, t);
  }

  return detail::finish_fisher(hs.H * U * hs.H.transpose());
}

[[nodiscard]] inline FisherMatrix fisher_huh(const ModelSpec& model, const ParameterVector& theta,
                                             const DesignApprox& design) {
  return fisher_huh(model, theta, design.points, design.weights);
}

[[nodiscard]] inline FisherMatrix fisher_huh(const ModelSpec& model, const ParameterVector& theta,
                                             const DesignExact& design) {
  Eigen::VectorXd w(static_cast<Eigen::Index>(design.counts.size()));
  for (std::size_t i = 0; i < design.counts.size(); ++i)
    w(static_cast<Eigen::Index>(i)) = static_cast<double>(design.counts[i]);
  return fisher_huh(model, theta, design.points, w);
}

// ---------------------------------------------------------------------------
// Support-size analysis

// Dimension of the intersection of the row spaces of the given matrices,
// all of which must have the same column count. Uses the mean of the
// orthogonal row-space projectors: a unit vector lies in every row space
// exactly when it is an eigenvector of the averaged projector with
// eigenvalue 1, so the intersection dimension is the multiplicity of that
// eigenvalue.
[[nodiscard]] inline int subspace_intersection_dim(const std::vector<Eigen::MatrixXd>& mats) {
  if (mats.empty()) throw SpecError("subspace_intersection_dim: no subspaces given");
  const Eigen::Index m = mats.front().cols();
  for (const auto& M : mats)
    if (M.cols() != m) throw SpecError("subspace_intersection_dim: mixed ambient dimensions");
  if (mats.size() == 1) return detail::matrix_rank(mats[0]);

  Eigen::MatrixXd mean = Eigen::MatrixXd::Zero(m, m);
  for (const auto& M : mats) {
    if (M.rows() == 0) return 0;  // row space {0} forces an empty intersection
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(M, Eigen::ComputeThinV);
    const double tol = 1e-9 * svd.singularValues()(0);
    int r = 0;
    for (Eigen::Index i = 0; i < svd.singularValues().size(); ++i)
      if (svd.singularValues()(i) > tol) ++r;
    if (r == 0) return 0;
    const Eigen::MatrixXd V = svd.matrixV().leftCols(r);
    mean += V * V.transpose();
  }
  mean /= static_cast<double>(mats.size());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(mean, Eigen::EigenvaluesOnly);
  int dim = 0;
  for (Eigen::Index i = 0; i < es.eigenvalues().size(); ++i)
    if (es.eigenvalues()(i) >= 1.0 - 1e-7) ++dim;
  return dim;
}

struct RankReport {
  std::vector<int> p_j;     // parameter count per category block
  int p_c = 0;              // shared-block parameter count
  int p = 0;                // total parameters
  std::vector<int> rank_j;  // rank of each category block over the points
  int rank_c = 0;           // rank of the shared block over the points
  int p_H = 0;              // dim of the common subspace of category regressors
  int k_min = 0;            // minimum number of support points for a PD matrix
  int rank = 0;             // rank of the stacked coefficient matrix at these points
  bool pd_possible = false;
  std::string violated;     // first failed necessary condition, empty when none
};

// Computes, for the given candidate points, the per-block parameter counts
// and ranks, the dimension of the subspace shared by all category blocks,
// the minimum support size k_min, and whether the information matrix can be
// positive definite on these points (equivalently, whether the stacked
// coefficient matrix reaches full row rank p).
[[nodiscard]] inline RankReport analyze_rank(const ModelSpec& model,
                                             const std::vector<Eigen::VectorXd>& points) {
  model.validate();
  if (points.empty()) throw SpecError("analyze_rank: empty point set");
  RankReport rep;
  rep.p_c = model.common_param_count();
  rep.p = model.param_count();

  const HStack hs = build_h_stack(model, points);
  std::vector<Eigen::MatrixXd> category;
  for (int j = 0; j < model.J - 1; ++j) {
    rep.p_j.push_back(model.category_param_count(j));
    rep.rank_j.push_back(detail::matrix_rank(hs.H_j[static_cast<std::size_t>(j)]));
    category.push_back(hs.H_j[static_cast<std::size_t>(j)]);
  }
  rep.rank_c = detail::matrix_rank(hs.H_c);
  rep.p_H = subspace_intersection_dim(category);

  int kmin = rep.p_c + rep.p_H;
  for (int pj : rep.p_j) kmin = std::max(kmin, pj);
  rep.k_min = kmin;

  rep.rank = detail::matrix_rank(hs.H);
  rep.pd_possible = (rep.rank == rep.p);
  if (!rep.pd_possible) {
    if (static_cast<int>(points.size()) < rep.k_min) {
      rep.violated = "point set smaller than the minimum support size k_min";
    } else {
      bool blamed = false;
      for (std::size_t j = 0; j < rep.rank_j.size() && !blamed; ++j) {
        if (rep.rank_j[j] < rep.p_j[j]) {
          rep.violated = "category block " + std::to_string(j + 1) +
                         " is rank deficient on these points";
          blamed = true;
        }
      }
      if (!blamed)
        rep.violated = "stacked coefficient matrix has rank " + std::to_string(rep.rank) +
                       " < " + std::to_string(rep.p);
    }
  }
  return rep;
}

}  // namespace optdesign
