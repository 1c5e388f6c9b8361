#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "dol/kernels.hpp"
#include "dol/rng.hpp"
#include "dol/types.hpp"

namespace dol {

enum class WeightMethod { kcb, ipw_logistic, oracle };

inline const char* to_string(WeightMethod m) {
  switch (m) {
    case WeightMethod::kcb: return "kcb";
    case WeightMethod::ipw_logistic: return "ipw";
    case WeightMethod::oracle: return "oracle";
  }
  return "unknown";
}

inline WeightMethod parse_weight_method(const std::string& s) {
  if (s == "kcb") return WeightMethod::kcb;
  if (s == "ipw" || s == "ipw-logistic") return WeightMethod::ipw_logistic;
  if (s == "oracle") return WeightMethod::oracle;
  throw Error(ErrorKind::config, "unknown weight method '" + s + "'");
}

/// Per-unit weights. `units` lists the dataset rows covered (ascending);
/// `w[k]` belongs to row `units[k]`. A complete vector covers 0..n-1.
struct BalancingWeights {
  std::vector<Index> units;
  Vector w;
  WeightMethod method = WeightMethod::kcb;
  double lambda1 = 0.0;
  double lambda2 = 0.0;
  int solver_iters = 0;
  double final_objective = 0.0;

  bool complete(Index n) const {
    if (static_cast<Index>(units.size()) != n) return false;
    for (Index i = 0; i < n; ++i) if (units[static_cast<std::size_t>(i)] != i) return false;
    return true;
  }
};

inline BalancingWeights make_complete_weights(Vector w, WeightMethod method) {
  BalancingWeights out;
  out.units.resize(static_cast<std::size_t>(w.size()));
  for (Index i = 0; i < w.size(); ++i) out.units[static_cast<std::size_t>(i)] = i;
  out.w = std::move(w);
  out.method = method;
  return out;
}

struct DualSolution {
  Vector beta;  // f = sum_j beta_j K(., X_j)
  int group = 1;
  double objective_value = 0.0;
  double gradient_norm = 0.0;
  int iterations = 0;
};

inline constexpr double kDefaultClipConstant = 20.0;

namespace detail {

inline void check_gram(const Matrix& G, Index n) {
  if (G.rows() != n || G.cols() != n) {
    throw Error(ErrorKind::shape, "balancing needs the full n x n Gram matrix");
  }
}

// Per-unit dual term for a unit in the solved group:
// f^2 / (2 l2) - max(l2 + f, 0)^2 / (2 l2), written piecewise to avoid cancellation.
inline double group_term(double f, double l2) {
  return f < -l2 ? f * f / (2.0 * l2) : -f - 0.5 * l2;
}

inline double group_term_derivative(double f, double l2) { return f < -l2 ? f / l2 : -1.0; }

}  // namespace detail

/// Dual objective in coefficient form, f(X_i) = (G beta)_i, |f|_H^2 = beta^T G beta:
///   d = (1/2l2) sum_S f_i^2 + |f|_H^2 / 2 + sum_i f_i - (1/2l2) sum_S max(l2 + f_i, 0)^2 + l1n / 2
/// where S is the set of units with A_i == group.
inline double kcb_dual_objective(const Vector& beta, int group, const Dataset& data, const GramMatrix& G,
                                 double lambda1n, double lambda2) {
  if (!(lambda2 > 0.0)) throw Error(ErrorKind::parameter, "lambda2 must be positive");
  detail::check_gram(G.values, data.n());
  if (beta.size() != data.n()) throw Error(ErrorKind::shape, "beta length must equal n");
  const Vector f = G.values * beta;
  double d = 0.5 * beta.dot(f) + f.sum() + 0.5 * lambda1n;
  for (Index i = 0; i < data.n(); ++i) {
    if (data.A[i] == group) d += detail::group_term(f[i], lambda2);
  }
  return d;
}

/// Gradient of kcb_dual_objective with respect to beta: G (beta + dd/df).
inline Vector kcb_dual_gradient(const Vector& beta, int group, const Dataset& data, const GramMatrix& G,
                                double lambda2) {
  const Vector f = G.values * beta;
  Vector r = beta.array() + 1.0;
  for (Index i = 0; i < data.n(); ++i) {
    if (data.A[i] == group) r[i] += detail::group_term_derivative(f[i], lambda2);
  }
  return G.values * r;
}

/// Primal value p(w) = (l2/2) sum_S w_i^2 + |sum_S w_i K(., X_i) - sum_i K(., X_i)|_H^2 / 2 - l1n / 2.
/// `w` is indexed by the group's units in ascending order.
inline double kcb_primal_objective(const Vector& w, int group, const Dataset& data, const GramMatrix& G,
                                   double lambda1n, double lambda2) {
  Vector coef = Vector::Constant(data.n(), -1.0);
  Index k = 0;
  for (Index i = 0; i < data.n(); ++i) if (data.A[i] == group) coef[i] += w[k++];
  return 0.5 * lambda2 * w.squaredNorm() + 0.5 * coef.dot(G.values * coef) - 0.5 * lambda1n;
}

struct KcbSolverOptions {
  double tol = 1e-7;
  int max_iters = 5000;
  std::optional<Vector> initial_weights;  // group units, ascending; values clamped to >= 1
};

/// Minimises the dual over beta. The minimiser has beta_i = -1 off the group
/// and beta_i = w_i - 1 on it, where w solves the box QP
///   min_{w >= 1} w^T (G_SS + l2 I) w / 2 - w^T G_S. 1,
/// which is solved by a projected Newton method with an Armijo search along
/// the projection arc. Convergence is certified on the gradient of d / n
/// (the per-unit dual), reported as DualSolution::gradient_norm.
inline DualSolution kcb_dual_solve(const Dataset& data, int group, const GramMatrix& G, double lambda1n,
                                   double lambda2, const KcbSolverOptions& opts = {}) {
  if (!(lambda2 > 0.0)) throw Error(ErrorKind::parameter, "lambda2 must be positive");
  if (group != 1 && group != -1) throw Error(ErrorKind::parameter, "group must be +1 or -1");
  const Index n = data.n();
  detail::check_gram(G.values, n);

  std::vector<Index> S;
  for (Index i = 0; i < n; ++i) if (data.A[i] == group) S.push_back(i);
  const Index m = static_cast<Index>(S.size());
  if (m == 0) throw Error(ErrorKind::parameter, "treatment group is empty");

  Matrix H(m, m);
  Vector rhs(m);
  const Vector row_sums = G.values.rowwise().sum();
  for (Index b = 0; b < m; ++b) {
    for (Index a = 0; a < m; ++a) H(a, b) = G.values(S[a], S[b]);
    H(b, b) += lambda2;
    rhs[b] = row_sums[S[b]];
  }

  Vector w = Vector::Ones(m);
  if (opts.initial_weights) {
    if (opts.initial_weights->size() != m) throw Error(ErrorKind::shape, "initial weights length mismatch");
    w = opts.initial_weights->cwiseMax(1.0);
  }

  auto to_beta = [&](const Vector& wv) {
    Vector beta = Vector::Constant(n, -1.0);
    for (Index k = 0; k < m; ++k) beta[S[k]] = wv[k] - 1.0;
    return beta;
  };
  const double inv_n = 1.0 / static_cast<double>(n);
  auto grad_norm = [&](const Vector& wv) {
    return kcb_dual_gradient(to_beta(wv), group, data, G, lambda2).norm() * inv_n;
  };

  DualSolution sol;
  sol.group = group;
  Vector g = H * w - rhs;
  int it = 0;
  bool stalled = false;
  for (; it < opts.max_iters; ++it) {
    sol.gradient_norm = grad_norm(w);
    if (sol.gradient_norm <= opts.tol) break;

    // Binding set: at the bound with the gradient pushing outward.
    const double pg_norm = (w - (w - g).cwiseMax(1.0)).norm();
    const double eps_bind = std::min(1e-3, pg_norm);
    std::vector<Index> free_set, bound_set;
    for (Index k = 0; k < m; ++k) {
      if (w[k] <= 1.0 + eps_bind && g[k] > 0.0) bound_set.push_back(k);
      else free_set.push_back(k);
    }

    Vector dir = Vector::Zero(m);
    for (Index k : bound_set) dir[k] = -g[k] / H(k, k);
    if (!free_set.empty()) {
      const Index nf = static_cast<Index>(free_set.size());
      Matrix Hf(nf, nf);
      Vector gf(nf);
      for (Index b = 0; b < nf; ++b) {
        for (Index a = 0; a < nf; ++a) Hf(a, b) = H(free_set[a], free_set[b]);
        gf[b] = g[free_set[b]];
      }
      Eigen::LLT<Matrix> llt(Hf);
      if (llt.info() != Eigen::Success) {
        throw Error(ErrorKind::numerical, "balancing Hessian is not positive definite; increase lambda2");
      }
      const Vector df = llt.solve(-gf);
      for (Index b = 0; b < nf; ++b) dir[free_set[b]] = df[b];
    }

    // Armijo search along the projection arc w(t) = max(1, w + t dir). The
    // change in the quadratic is evaluated from the step itself; differencing
    // two objective values loses it to rounding near the optimum.
    double t = 1.0;
    Vector w_new;
    bool accepted = false;
    for (int ls = 0; ls < 60; ++ls) {
      w_new = (w + t * dir).cwiseMax(1.0);
      const Vector s = w_new - w;
      const double change = g.dot(s) + 0.5 * s.dot(H * s);
      double decrease = 0.0;
      for (Index k : free_set) decrease += -t * g[k] * dir[k];
      for (Index k : bound_set) decrease += g[k] * (w[k] - w_new[k]);
      if (-change >= 1e-4 * decrease) {
        accepted = true;
        break;
      }
      t *= 0.5;
    }
    if (!accepted) {
      stalled = true;
      break;
    }
    w = w_new;
    g = H * w - rhs;
  }

  sol.beta = to_beta(w);
  sol.objective_value = kcb_dual_objective(sol.beta, group, data, G, lambda1n, lambda2);
  sol.gradient_norm = grad_norm(w);
  sol.iterations = it;
  if (sol.gradient_norm > opts.tol) {
    throw SolverError(stalled ? "balancing dual line search stalled"
                              : "balancing dual did not converge within " + std::to_string(opts.max_iters) +
                                    " iterations",
                      sol.gradient_norm);
  }
  return sol;
}

struct KcbOptions {
  double lambda1 = -1.0;  // negative: 1/n
  double lambda2 = -1.0;  // negative: chosen by select_lambda2
  bool standardize = true;  // kernel on standardized covariates
  std::optional<Bandwidth> bandwidth;  // default: median heuristic on the kernel inputs
  double tol = 1e-7;
  int max_iters = 5000;
  double clip_constant = kDefaultClipConstant;
  std::optional<Vector> initial_weights;
};

/// Weights for one treatment group. lambda1 and lambda2 are on the scale of
/// the balancing criterion averaged over n units; the dual uses
/// lambda1n = n^2 lambda1 and a ridge of n * lambda2 on sum_S w_i^2.
/// Recovered weights are max(1, -f(X_i)/ridge), then clipped at clip_constant * n^(1/3).
inline BalancingWeights kcb_weights(const Dataset& data, int group, const GramMatrix& G, const KcbOptions& opts) {
  const Index n = data.n();
  const double lambda1 = opts.lambda1 < 0 ? 1.0 / static_cast<double>(n) : opts.lambda1;
  if (!(opts.lambda2 > 0.0)) throw Error(ErrorKind::parameter, "lambda2 must be positive");
  const double lambda1n = static_cast<double>(n) * static_cast<double>(n) * lambda1;
  const double ridge = static_cast<double>(n) * opts.lambda2;

  KcbSolverOptions so;
  so.tol = opts.tol;
  so.max_iters = opts.max_iters;
  so.initial_weights = opts.initial_weights;
  const DualSolution sol = kcb_dual_solve(data, group, G, lambda1n, ridge, so);

  const Vector f = G.values * sol.beta;
  const double clip = opts.clip_constant * std::cbrt(static_cast<double>(n));
  BalancingWeights out;
  out.method = WeightMethod::kcb;
  out.lambda1 = lambda1;
  out.lambda2 = opts.lambda2;
  out.solver_iters = sol.iterations;
  out.final_objective = sol.objective_value;
  std::vector<double> vals;
  for (Index i = 0; i < n; ++i) {
    if (data.A[i] != group) continue;
    out.units.push_back(i);
    vals.push_back(std::min(clip, std::max(1.0, -f[i] / ridge)));
  }
  out.w = Eigen::Map<Vector>(vals.data(), static_cast<Index>(vals.size()));
  return out;
}

inline Matrix kcb_kernel_inputs(const Matrix& X, const KcbOptions& opts) {
  return opts.standardize ? standardize_columns(X) : X;
}

inline BalancingWeights kcb_weights(const Dataset& data, int group, const KcbOptions& opts) {
  if (!(opts.lambda2 > 0.0)) throw Error(ErrorKind::parameter, "lambda2 must be positive (or use kcb_balance)");
  const Matrix Xk = kcb_kernel_inputs(data.X, opts);
  const Bandwidth bw = opts.bandwidth ? *opts.bandwidth : median_heuristic(Xk);
  return kcb_weights(data, group, gram(Xk, bw), opts);
}

/// Merges two partial solutions over disjoint unit sets that together cover 0..n-1.
inline BalancingWeights combine_group_weights(const BalancingWeights& w_plus, const BalancingWeights& w_minus,
                                              const Dataset& data) {
  const Index n = data.n();
  Vector merged = Vector::Constant(n, std::numeric_limits<double>::quiet_NaN());
  std::vector<char> seen(static_cast<std::size_t>(n), 0);
  for (const BalancingWeights* part : {&w_plus, &w_minus}) {
    if (static_cast<Index>(part->units.size()) != part->w.size()) {
      throw Error(ErrorKind::index, "partial weights have mismatched unit list");
    }
    for (std::size_t k = 0; k < part->units.size(); ++k) {
      const Index i = part->units[k];
      if (i < 0 || i >= n) throw Error(ErrorKind::index, "unit index " + std::to_string(i) + " out of range");
      if (seen[static_cast<std::size_t>(i)]) {
        throw Error(ErrorKind::index, "unit " + std::to_string(i) + " covered by both groups");
      }
      seen[static_cast<std::size_t>(i)] = 1;
      merged[i] = part->w[static_cast<Index>(k)];
    }
  }
  for (Index i = 0; i < n; ++i) {
    if (!seen[static_cast<std::size_t>(i)]) {
      throw Error(ErrorKind::index, "unit " + std::to_string(i) + " has no weight");
    }
  }
  BalancingWeights out = make_complete_weights(std::move(merged), w_plus.method);
  out.lambda1 = w_plus.lambda1;
  out.lambda2 = w_plus.lambda2;
  out.solver_iters = w_plus.solver_iters + w_minus.solver_iters;
  out.final_objective = w_plus.final_objective + w_minus.final_objective;
  return out;
}

/// Largest kernel-section imbalance over test points t, for both groups:
///   | (1/n) sum_{A_i = a} w_i K(X_i, x_t) - (1/n) sum_i K(X_i, x_t) |.
inline double balance_diagnostic(const Vector& w, const Dataset& data, const Matrix& test_points,
                                 const Bandwidth& bw) {
  if (test_points.rows() == 0) throw Error(ErrorKind::parameter, "balance diagnostic needs test points");
  if (w.size() != data.n()) throw Error(ErrorKind::shape, "weights length must equal n");
  const Matrix K = gram(data.X, test_points, bw).values;  // n x t
  const double inv_n = 1.0 / static_cast<double>(data.n());
  const Eigen::RowVectorXd full = K.colwise().sum() * inv_n;
  Vector wp = Vector::Zero(data.n()), wm = Vector::Zero(data.n());
  for (Index i = 0; i < data.n(); ++i) (data.A[i] > 0 ? wp : wm)[i] = w[i];
  const Eigen::RowVectorXd plus = (wp.transpose() * K) * inv_n;
  const Eigen::RowVectorXd minus = (wm.transpose() * K) * inv_n;
  return std::max((plus - full).cwiseAbs().maxCoeff(), (minus - full).cwiseAbs().maxCoeff());
}

inline double balance_diagnostic(const BalancingWeights& w, const Dataset& data, const Matrix& test_points,
                                 const Bandwidth& bw) {
  if (!w.complete(data.n())) throw Error(ErrorKind::index, "balance diagnostic needs complete weights");
  return balance_diagnostic(w.w, data, test_points, bw);
}

/// Default lambda2 grid: {1e-4, 1e-3, 1e-2, 1e-1, 1} / n.
inline std::vector<double> default_lambda2_grid(Index n) {
  std::vector<double> grid;
  for (double v : {1e-4, 1e-3, 1e-2, 1e-1, 1.0}) grid.push_back(v / static_cast<double>(n));
  return grid;
}

struct Lambda2Selection {
  double lambda2 = 0.0;
  std::vector<double> grid;
  std::vector<double> scores;
};

/// Picks lambda2 by held-out balance. Per fold, weights are fitted on the
/// training units (grid values rescaled to the training size) and scored by
/// the largest gap between the weighted training group mean of K(., x_t) and
/// the held-out sample mean of K(., x_t), over held-out points x_t and both
/// groups. Lowest mean score wins; ties go to the larger lambda2.
inline Lambda2Selection select_lambda2(const Dataset& data, const std::vector<double>& grid, const KcbOptions& base,
                                       int folds = 2, std::uint64_t seed = 0) {
  if (grid.empty()) throw Error(ErrorKind::parameter, "lambda2 grid is empty");
  const Index n = data.n();
  const Matrix Xk = kcb_kernel_inputs(data.X, base);
  const Bandwidth bw = base.bandwidth ? *base.bandwidth : median_heuristic(Xk);
  const auto labels = assign_folds(n, folds, seed);

  Lambda2Selection sel;
  sel.grid = grid;
  sel.scores.assign(grid.size(), 0.0);
  std::vector<Index> tr, ho;
  for (int k = 0; k < folds; ++k) {
    split_fold(labels, k, tr, ho);
    const Dataset dtr = data.subset(tr);
    const Matrix Xtr = subset_rows(Xk, tr);
    const Matrix Xho = subset_rows(Xk, ho);
    const GramMatrix Gtr = gram(Xtr, bw);
    const Matrix Kx = gram(Xtr, Xho, bw).values;               // |tr| x |ho|
    const Eigen::RowVectorXd target = gram(Xho, bw).values.colwise().mean();
    for (std::size_t c = 0; c < grid.size(); ++c) {
      KcbOptions o = base;
      // Keep n * lambda2 fixed when the fit uses a subsample.
      o.lambda2 = grid[c] * static_cast<double>(n) / static_cast<double>(tr.size());
      double score = 0.0;
      for (int grp : {1, -1}) {
        bool any = false;
        for (Index i = 0; i < dtr.n(); ++i) any = any || dtr.A[i] == grp;
        if (!any) { score = std::numeric_limits<double>::infinity(); continue; }
        const BalancingWeights w = kcb_weights(dtr, grp, Gtr, o);
        Vector ww = Vector::Zero(dtr.n());
        for (std::size_t q = 0; q < w.units.size(); ++q) ww[w.units[q]] = w.w[static_cast<Index>(q)];
        const Eigen::RowVectorXd gm = (ww.transpose() * Kx) / static_cast<double>(dtr.n());
        score = std::max(score, (gm - target).cwiseAbs().maxCoeff());
      }
      sel.scores[c] += score / folds;
    }
  }
  std::size_t best = 0;
  for (std::size_t c = 1; c < grid.size(); ++c) {
    if (sel.scores[c] < sel.scores[best] || (sel.scores[c] == sel.scores[best] && grid[c] > grid[best])) best = c;
  }
  sel.lambda2 = grid[best];
  return sel;
}

/// Complete KCB weights for both groups; lambda2 is selected when not given.
inline BalancingWeights kcb_balance(const Dataset& data, KcbOptions opts = {}, std::uint64_t seed = 0) {
  if (!(opts.lambda2 > 0.0)) opts.lambda2 = select_lambda2(data, default_lambda2_grid(data.n()), opts, 2, seed).lambda2;
  const Matrix Xk = kcb_kernel_inputs(data.X, opts);
  const Bandwidth bw = opts.bandwidth ? *opts.bandwidth : median_heuristic(Xk);
  const GramMatrix G = gram(Xk, bw);
  return combine_group_weights(kcb_weights(data, 1, G, opts), kcb_weights(data, -1, G, opts), data);
}

}  // namespace dol
