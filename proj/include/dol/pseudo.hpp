#pragma once

#include <cmath>

#include "dol/balancing.hpp"
#include "dol/types.hpp"

namespace dol {

/// Linear projection g(x) = x^T coef of {w - 1} Y onto the covariates.
/// No intercept column is added; append a constant covariate for one.
struct GEstimate {
  Vector coef;
  double ridge = 0.0;
  WeightMethod source_weights = WeightMethod::kcb;
  bool standardized = false;
  Eigen::RowVectorXd centre;  // only used when standardized
  Eigen::RowVectorXd scale;

  double operator()(const Eigen::Ref<const Eigen::RowVectorXd>& x) const {
    if (!standardized) return x.dot(coef.transpose());
    return ((x - centre).cwiseQuotient(scale)).dot(coef.transpose());
  }

  Vector evaluate(const Matrix& X) const {
    if (!standardized) return X * coef;
    Matrix Z = (X.rowwise() - centre).array().rowwise() / scale.array();
    return Z * coef;
  }
};

inline constexpr double kRidgeConditionThreshold = 1e-12;
inline constexpr double kRidgeFallbackScale = 1e-8;

/// coef = (X^T X / n + ridge I)^{-1} (1/n) sum_i X_i (w_i - 1) Y_i.
/// With ridge == 0 the unpenalized system is tried first and a ridge of
/// 1e-8 trace(X^T X / n) / p is used when its reciprocal condition number is
/// below 1e-12.
inline GEstimate fit_g(const Dataset& data, const Vector& w, double ridge = 0.0, bool standardize = false) {
  const Index n = data.n();
  if (n == 0) throw Error(ErrorKind::parameter, "fit_g needs at least one unit");
  if (w.size() != n) throw Error(ErrorKind::shape, "weights length must equal n");
  GEstimate g;
  g.standardized = standardize;
  Matrix X = data.X;
  if (standardize) {
    g.centre = X.colwise().mean();
    X.rowwise() -= g.centre;
    g.scale = (X.array().square().colwise().sum() / static_cast<double>(n)).sqrt();
    for (Index j = 0; j < X.cols(); ++j) {
      if (g.scale[j] == 0.0) g.scale[j] = 1.0;
      X.col(j) /= g.scale[j];
    }
  }
  const double inv_n = 1.0 / static_cast<double>(n);
  Matrix C = X.transpose() * X * inv_n;
  const Vector resp = ((w.array() - 1.0) * data.Y.array()).matrix();
  const Vector rhs = X.transpose() * resp * inv_n;
  const Index p = X.cols();
  if (p == 0) {
    g.coef = Vector(0);
    return g;
  }

  double used = ridge;
  if (ridge == 0.0) {
    Eigen::LDLT<Matrix> ldlt(C);
    const double rcond = ldlt.info() == Eigen::Success ? ldlt.rcond() : 0.0;
    if (rcond >= kRidgeConditionThreshold) {
      g.coef = ldlt.solve(rhs);
      g.ridge = 0.0;
      return g;
    }
    used = kRidgeFallbackScale * C.trace() / static_cast<double>(p);
    if (!(used > 0.0)) used = kRidgeFallbackScale;
  }
  C.diagonal().array() += used;
  g.coef = C.ldlt().solve(rhs);
  g.ridge = used;
  return g;
}

inline GEstimate fit_g(const Dataset& data, const BalancingWeights& weights, double ridge = 0.0,
                       bool standardize = false) {
  if (!weights.complete(data.n())) throw Error(ErrorKind::index, "fit_g needs complete weights");
  GEstimate g = fit_g(data, weights.w, ridge, standardize);
  g.source_weights = weights.method;
  return g;
}

struct PseudoOutcomes {
  Vector z;
};

/// z_i = w_i A_i (Y_i - g(X_i)), with g given by its values at the sample points.
inline PseudoOutcomes pseudo_outcomes(const Dataset& data, const Vector& w, const Vector& g_values) {
  if (w.size() != data.n() || g_values.size() != data.n()) {
    throw Error(ErrorKind::shape, "pseudo_outcomes: lengths disagree");
  }
  PseudoOutcomes out;
  out.z = (w.array() * data.A.array() * (data.Y - g_values).array()).matrix();
  return out;
}

inline PseudoOutcomes pseudo_outcomes(const Dataset& data, const BalancingWeights& weights, const GEstimate& g) {
  if (!weights.complete(data.n())) throw Error(ErrorKind::index, "pseudo_outcomes needs complete weights");
  return pseudo_outcomes(data, weights.w, g.evaluate(data.X));
}

}  // namespace dol
