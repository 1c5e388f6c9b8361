#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <iostream>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "dol/gkdr.hpp"
#include "dol/kernels.hpp"
#include "dol/rng.hpp"
#include "dol/types.hpp"

namespace dol {

/// Weighted hinge-loss problem on reduced covariates.
struct WsvmProblem {
  Vector labels;          // A_i sign(Y_i - g(X_i)), sign(0) = +1
  Vector sample_weights;  // w_i |Y_i - g(X_i)|
  GramMatrix gram_reduced;
  Matrix reduced;  // V = X B
  SubspaceBasis basis;

  Index n() const { return labels.size(); }

  WsvmProblem subset(const std::vector<Index>& rows) const {
    WsvmProblem out;
    out.labels = dol::subset(labels, rows);
    out.sample_weights = dol::subset(sample_weights, rows);
    out.reduced = subset_rows(reduced, rows);
    out.basis = basis;
    out.gram_reduced.bandwidth = gram_reduced.bandwidth;
    const Index m = static_cast<Index>(rows.size());
    out.gram_reduced.values.resize(m, m);
    for (Index b = 0; b < m; ++b) {
      for (Index a = 0; a < m; ++a) out.gram_reduced.values(a, b) = gram_reduced.values(rows[a], rows[b]);
    }
    return out;
  }
};

inline WsvmProblem build_problem(const Dataset& data, const Vector& w, const Vector& g_values,
                                 const SubspaceBasis& basis, std::optional<Bandwidth> bw = std::nullopt) {
  const Index n = data.n();
  if (w.size() != n || g_values.size() != n) throw Error(ErrorKind::shape, "build_problem: lengths disagree");
  WsvmProblem prob;
  prob.labels.resize(n);
  prob.sample_weights.resize(n);
  for (Index i = 0; i < n; ++i) {
    const double r = data.Y[i] - g_values[i];
    prob.labels[i] = data.A[i] * sign_plus(r);
    prob.sample_weights[i] = w[i] * std::abs(r);
  }
  prob.basis = basis;
  prob.reduced = project(data.X, basis);
  const Bandwidth b = bw ? *bw : median_heuristic(prob.reduced);
  prob.gram_reduced = gram(prob.reduced, b);
  return prob;
}

/// sign o f(B^T x) with f(v) = sum_i alpha_i K_u(V_i, v) + intercept.
struct DecisionRule {
  Vector alphas;
  double intercept = 0.0;
  Matrix train_points_reduced;
  Bandwidth bandwidth;
  SubspaceBasis basis;
  double lambda_n = 0.0;
  double kkt_violation = 0.0;
  int iterations = 0;
};

inline Vector decision_values_reduced(const DecisionRule& rule, const Matrix& V) {
  if (V.cols() != rule.train_points_reduced.cols()) {
    throw Error(ErrorKind::shape, "decision function: reduced dimension mismatch");
  }
  if (rule.alphas.size() == 0) return Vector::Constant(V.rows(), rule.intercept);
  const Matrix K = gram(V, rule.train_points_reduced, rule.bandwidth).values;
  return (K * rule.alphas).array() + rule.intercept;
}

inline Vector decision_function(const DecisionRule& rule, const Matrix& X) {
  return decision_values_reduced(rule, project(X, rule.basis));
}

inline double decision_function(const DecisionRule& rule, const Vector& x) {
  if (x.size() != rule.basis.p()) throw Error(ErrorKind::shape, "decision function: covariate length mismatch");
  const Matrix X = x.transpose();
  return decision_function(rule, X)[0];
}

inline double predict_treatment(const DecisionRule& rule, const Vector& x) {
  return sign_plus(decision_function(rule, x));
}

inline Vector predict_treatment(const DecisionRule& rule, const Matrix& X) {
  return decision_function(rule, X).unaryExpr([](double v) { return sign_plus(v); });
}

/// Q(alpha, alpha0) = (1/n) sum_i c_i max(0, 1 - l_i f_i) + lambda alpha^T G alpha.
inline double wsvm_objective(const WsvmProblem& prob, double lambda_n, const Vector& alphas, double intercept) {
  const Vector Ga = prob.gram_reduced.values * alphas;
  double loss = 0.0;
  for (Index i = 0; i < prob.n(); ++i) {
    loss += prob.sample_weights[i] * std::max(0.0, 1.0 - prob.labels[i] * (Ga[i] + intercept));
  }
  return loss / static_cast<double>(prob.n()) + lambda_n * alphas.dot(Ga);
}

inline double wsvm_objective(const WsvmProblem& prob, const DecisionRule& rule) {
  return wsvm_objective(prob, rule.lambda_n, rule.alphas, rule.intercept);
}

struct WsvmOptions {
  double tol = 1e-3;
  long max_iters = 0;  // 0: max(1e7, 100 n)
  bool warn = true;
  bool shrinking = true;
  // Start from a rule fitted to the same problem at another lambda; its dual
  // variables rescaled by lambda_prev / lambda stay feasible.
  const DecisionRule* warm_start = nullptr;
};

/// Solves the dual
///   min 0.5 d^T Q d - 1^T d,  Q_ij = l_i l_j G_ij,  0 <= d_i <= c_i / (2 n lambda),  l^T d = 0
/// by SMO with second-order working-set selection; alpha_i = l_i d_i and the
/// intercept comes from the free support vectors (or the midpoint of the
/// feasible interval when none are free). Stops when the maximal KKT
/// violation m(d) - M(d) is at most tol.
inline DecisionRule fit_wsvm(const WsvmProblem& prob, double lambda_n, const WsvmOptions& opts = {}) {
  if (!(lambda_n > 0.0)) throw Error(ErrorKind::parameter, "lambda_n must be positive");
  const Index n = prob.n();
  if (prob.sample_weights.size() != n || prob.gram_reduced.values.rows() != n) {
    throw Error(ErrorKind::shape, "fit_wsvm: problem sizes disagree");
  }
  DecisionRule rule;
  rule.train_points_reduced = prob.reduced;
  rule.bandwidth = prob.gram_reduced.bandwidth;
  rule.basis = prob.basis;
  rule.lambda_n = lambda_n;
  rule.alphas = Vector::Zero(n);

  const Vector& y = prob.labels;
  const Matrix& K = prob.gram_reduced.values;
  const Vector C = prob.sample_weights / (2.0 * static_cast<double>(n) * lambda_n);
  if ((C.array() <= 0.0).all()) {
    if (opts.warn) std::cerr << "warning: all sample weights are zero; returning f = 0\n";
    return rule;
  }

  constexpr double tau = 1e-12;
  Vector d = Vector::Zero(n);
  Vector G = Vector::Constant(n, -1.0);
  if (opts.warm_start && opts.warm_start->alphas.size() == n && opts.warm_start->lambda_n > 0.0) {
    Vector d0 = y.cwiseProduct(opts.warm_start->alphas) * (opts.warm_start->lambda_n / lambda_n);
    d0 = d0.cwiseMax(0.0).cwiseMin(C);
    if (std::abs(y.dot(d0)) <= 1e-10 * std::max(1.0, d0.sum())) {
      d = d0;
      G = y.cwiseProduct(K * y.cwiseProduct(d)).array() - 1.0;
    }
  }
  const long max_iters = opts.max_iters > 0 ? opts.max_iters : std::max<long>(10000000L, 100L * n);
  Matrix Q = K;
  for (Index b = 0; b < n; ++b) for (Index a = 0; a < n; ++a) Q(a, b) *= y[a] * y[b];
  const double* yp = y.data();
  const double* Cp = C.data();
  double* dp = d.data();
  double* Gp = G.data();
  // Active set with shrinking of variables stuck at a bound; the full
  // gradient is rebuilt before declaring convergence.
  std::vector<Index> active(static_cast<std::size_t>(n));
  for (Index t = 0; t < n; ++t) active[static_cast<std::size_t>(t)] = t;
  auto is_up = [&](Index t) { return yp[t] > 0 ? dp[t] < Cp[t] : dp[t] > 0; };
  auto is_low = [&](Index t) { return yp[t] > 0 ? dp[t] > 0 : dp[t] < Cp[t]; };
  auto rebuild = [&] {
    G = Q * d;
    G.array() -= 1.0;
    active.resize(static_cast<std::size_t>(n));
    for (Index t = 0; t < n; ++t) active[static_cast<std::size_t>(t)] = t;
  };
  const long shrink_every = std::min<long>(n, 1000);
  long counter = shrink_every;
  bool unshrunk = false;

  long it = 0;
  double violation = 0.0;
  for (;; ++it) {
    if (opts.shrinking && --counter == 0) {
      counter = shrink_every;
      double gmax1 = -std::numeric_limits<double>::infinity(), gmax2 = gmax1;
      for (Index t : active) {
        if (is_up(t)) gmax1 = std::max(gmax1, -yp[t] * Gp[t]);
        if (is_low(t)) gmax2 = std::max(gmax2, yp[t] * Gp[t]);
      }
      if (!unshrunk && gmax1 + gmax2 <= 10.0 * opts.tol) {
        unshrunk = true;
        rebuild();
      } else {
        std::vector<Index> keep;
        keep.reserve(active.size());
        for (Index t : active) {
          bool shrink = false;
          if (Cp[t] <= 0.0) {
            shrink = true;
          } else if (dp[t] >= Cp[t]) {
            shrink = yp[t] > 0 ? -Gp[t] > gmax1 : -Gp[t] > gmax2;
          } else if (dp[t] <= 0.0) {
            shrink = yp[t] > 0 ? Gp[t] > gmax2 : Gp[t] > gmax1;
          }
          if (!shrink) keep.push_back(t);
        }
        active.swap(keep);
      }
    }

    double gmax = -std::numeric_limits<double>::infinity();
    Index i = -1;
    for (Index t : active) {
      if (!is_up(t)) continue;
      const double v = -yp[t] * Gp[t];
      if (v > gmax || i < 0) {
        gmax = v;
        i = t;
      }
    }
    double gmin = std::numeric_limits<double>::infinity();
    Index j = -1;
    double best_obj = std::numeric_limits<double>::infinity();
    if (i >= 0) {
      const double* Ki = K.col(i).data();
      const double Kii = Ki[i];
      for (Index t : active) {
        if (!is_low(t)) continue;
        const double v = -yp[t] * Gp[t];
        gmin = std::min(gmin, v);
        const double b = gmax - v;
        if (b > 0) {
          double a = Kii + K(t, t) - 2.0 * Ki[t];
          if (a <= 0) a = tau;
          const double obj = -(b * b) / a;
          if (obj <= best_obj) {
            best_obj = obj;
            j = t;
          }
        }
      }
    }
    violation = (i < 0 || !std::isfinite(gmin)) ? 0.0 : gmax - gmin;
    if (violation <= opts.tol || j < 0) {
      if (static_cast<Index>(active.size()) == n) break;
      rebuild();
      counter = shrink_every;
      continue;
    }
    if (it >= max_iters) {
      throw SolverError("weighted SVM did not reach the KKT tolerance", violation);
    }

    const double Ci = C[i], Cj = C[j];
    const double old_i = d[i], old_j = d[j];
    const double Qij = y[i] * y[j] * K(i, j);
    if (y[i] != y[j]) {
      double quad = K(i, i) + K(j, j) + 2.0 * Qij;
      if (quad <= 0) quad = tau;
      const double delta = (-G[i] - G[j]) / quad;
      const double diff = d[i] - d[j];
      d[i] += delta;
      d[j] += delta;
      if (diff > 0) {
        if (d[j] < 0) { d[j] = 0; d[i] = diff; }
      } else {
        if (d[i] < 0) { d[i] = 0; d[j] = -diff; }
      }
      if (diff > Ci - Cj) {
        if (d[i] > Ci) { d[i] = Ci; d[j] = Ci - diff; }
      } else {
        if (d[j] > Cj) { d[j] = Cj; d[i] = Cj + diff; }
      }
    } else {
      double quad = K(i, i) + K(j, j) - 2.0 * Qij;
      if (quad <= 0) quad = tau;
      const double delta = (G[i] - G[j]) / quad;
      const double sum = d[i] + d[j];
      d[i] -= delta;
      d[j] += delta;
      if (sum > Ci) {
        if (d[i] > Ci) { d[i] = Ci; d[j] = sum - Ci; }
      } else {
        if (d[j] < 0) { d[j] = 0; d[i] = sum; }
      }
      if (sum > Cj) {
        if (d[j] > Cj) { d[j] = Cj; d[i] = sum - Cj; }
      } else {
        if (d[i] < 0) { d[i] = 0; d[j] = sum; }
      }
    }
    const double di = d[i] - old_i, dj = d[j] - old_j;
    const double* Qi = Q.col(i).data();
    const double* Qj = Q.col(j).data();
    for (Index t : active) Gp[t] += Qi[t] * di + Qj[t] * dj;
  }

  // Intercept from KKT, ignoring units whose box is empty.
  double ub = std::numeric_limits<double>::infinity(), lb = -std::numeric_limits<double>::infinity();
  double sum_free = 0.0;
  Index nr_free = 0;
  for (Index t = 0; t < n; ++t) {
    if (C[t] <= 0.0) continue;
    const double yG = y[t] * G[t];
    if (d[t] >= C[t]) {
      if (y[t] < 0) ub = std::min(ub, yG); else lb = std::max(lb, yG);
    } else if (d[t] <= 0.0) {
      if (y[t] > 0) ub = std::min(ub, yG); else lb = std::max(lb, yG);
    } else {
      ++nr_free;
      sum_free += yG;
    }
  }
  double rho = 0.0;
  if (nr_free > 0) rho = sum_free / static_cast<double>(nr_free);
  else if (std::isfinite(ub) && std::isfinite(lb)) rho = 0.5 * (ub + lb);
  else if (std::isfinite(ub)) rho = ub;
  else if (std::isfinite(lb)) rho = lb;

  rule.alphas = y.cwiseProduct(d);
  rule.intercept = -rho;
  rule.kkt_violation = violation;
  rule.iterations = static_cast<int>(std::min<long>(it, std::numeric_limits<int>::max()));
  return rule;
}

/// Eight log-spaced values over [1e-4, 1e1] / n.
inline std::vector<double> default_lambda_grid(Index n) {
  std::vector<double> grid;
  for (int k = 0; k < 8; ++k) {
    grid.push_back(std::pow(10.0, -4.0 + 5.0 * k / 7.0) / static_cast<double>(n));
  }
  return grid;
}

/// Ratio value estimate sum 1{A=d} w Y / sum 1{A=d} w with inverse-propensity
/// weights w; returns nullopt when no unit follows the rule.
inline std::optional<double> weighted_value(const Vector& decisions, const Vector& A, const Vector& Y,
                                            const Vector& w) {
  double num = 0.0, den = 0.0;
  for (Index i = 0; i < A.size(); ++i) {
    if (decisions[i] == A[i]) {
      num += w[i] * Y[i];
      den += w[i];
    }
  }
  if (den <= 0.0) return std::nullopt;
  return num / den;
}

struct LambdaSelection {
  DecisionRule rule;
  double lambda_n = 0.0;
  std::vector<double> grid;
  std::vector<double> scores;
};

/// Grid search over lambda_n by K-fold held-out value (evaluated with the
/// weights `w` on the held-out units). Ties go to the larger lambda_n; the
/// rule is refitted on the whole problem.
inline LambdaSelection tune_lambda(const WsvmProblem& prob, const std::vector<double>& grid, int cv_folds,
                                   const Dataset& data, const Vector& w, std::uint64_t seed = 0,
                                   const WsvmOptions& opts = {}) {
  if (grid.empty()) throw Error(ErrorKind::parameter, "lambda grid is empty");
  if (data.n() != prob.n() || w.size() != prob.n()) throw Error(ErrorKind::shape, "tune_lambda: sizes disagree");
  LambdaSelection sel;
  sel.grid = grid;
  sel.scores.assign(grid.size(), 0.0);
  if (grid.size() > 1) {
    const auto labels = assign_folds(prob.n(), cv_folds, seed);
    std::vector<Index> tr, ho;
    for (int k = 0; k < cv_folds; ++k) {
      split_fold(labels, k, tr, ho);
      const WsvmProblem sub = prob.subset(tr);
      const Matrix Vho = subset_rows(prob.reduced, ho);
      const Vector Aho = dol::subset(data.A, ho), Yho = dol::subset(data.Y, ho), who = dol::subset(w, ho);
      for (std::size_t c = 0; c < grid.size(); ++c) {
        if (!std::isfinite(sel.scores[c])) continue;
        try {
          WsvmOptions o = opts;
          o.warn = false;
          const DecisionRule r = fit_wsvm(sub, grid[c], o);
          const Vector dec = decision_values_reduced(r, Vho).unaryExpr([](double v) { return sign_plus(v); });
          const auto val = weighted_value(dec, Aho, Yho, who);
          sel.scores[c] = val ? sel.scores[c] + *val / cv_folds : -std::numeric_limits<double>::infinity();
        } catch (const Error&) {
          sel.scores[c] = -std::numeric_limits<double>::infinity();
        }
      }
    }
  }
  std::size_t best = 0;
  for (std::size_t c = 1; c < grid.size(); ++c) {
    if (sel.scores[c] > sel.scores[best] || (sel.scores[c] == sel.scores[best] && grid[c] > grid[best])) best = c;
  }
  sel.lambda_n = grid[best];
  sel.rule = fit_wsvm(prob, sel.lambda_n, opts);
  return sel;
}

}  // namespace dol
