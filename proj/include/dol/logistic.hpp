#pragma once

#include <cmath>

#include "dol/balancing.hpp"
#include "dol/types.hpp"

namespace dol {

struct LogisticFit {
  double intercept = 0.0;
  Vector coef;
  int iterations = 0;

  double prob_treated(const Eigen::Ref<const Eigen::RowVectorXd>& x) const {
    const double eta = intercept + (coef.size() ? x.dot(coef.transpose()) : 0.0);
    return 1.0 / (1.0 + std::exp(-eta));
  }
};

inline constexpr double kLogisticHessianRidge = 1e-6;
inline constexpr double kSeparationNorm = 1e3;
inline constexpr double kSeparationEta = 27.6;  // 1 - sigmoid(eta) < 1e-12

/// Newton-Raphson for Pr(A = +1 | x) = 1 / (1 + exp(-(b0 + b^T x))). A ridge of
/// kLogisticHessianRidge keeps the Hessian invertible; if the coefficient norm
/// passes kSeparationNorm the data are treated as separated.
inline LogisticFit fit_logistic(const Matrix& X, const Vector& A, int max_iters = 100, double tol = 1e-10) {
  const Index n = X.rows();
  const Index p = X.cols();
  if (A.size() != n) throw Error(ErrorKind::shape, "treatment length must equal rows of X");
  Matrix D(n, p + 1);
  D.col(0).setOnes();
  D.rightCols(p) = X;
  Vector t(n);
  for (Index i = 0; i < n; ++i) t[i] = A[i] > 0 ? 1.0 : 0.0;

  Vector b = Vector::Zero(p + 1);
  LogisticFit out;
  for (int it = 0; it < max_iters; ++it) {
    const Vector eta = D * b;
    const Vector mu = (1.0 / (1.0 + (-eta.array()).exp())).matrix();
    const Vector wts = (mu.array() * (1.0 - mu.array())).matrix();
    const Vector grad = D.transpose() * (t - mu);
    Matrix H = D.transpose() * wts.asDiagonal() * D;
    H.diagonal().array() += kLogisticHessianRidge;
    const Vector step = H.ldlt().solve(grad);
    b += step;
    out.iterations = it + 1;
    if (b.tail(p).norm() > kSeparationNorm || !b.allFinite()) {
      throw Error(ErrorKind::separation,
                  "logistic coefficients diverged (possible separation); consider a ridge penalty");
    }
    if (step.norm() <= tol * (1.0 + b.norm())) break;
  }
  // Quasi-separation can converge with a bounded norm while some fitted
  // probabilities are numerically 0 or 1.
  const double max_eta = (D * b).cwiseAbs().maxCoeff();
  if (max_eta > kSeparationEta) {
    throw Error(ErrorKind::separation,
                "fitted propensities reach 0 or 1 (possible separation); consider a ridge penalty");
  }
  out.intercept = b[0];
  out.coef = b.tail(p);
  return out;
}

/// Inverse-probability weights 1 / pi(A_i, X_i) from a logistic propensity fit.
inline BalancingWeights logistic_ipw(const Dataset& data, int max_iters = 100, double tol = 1e-10) {
  const LogisticFit fit = fit_logistic(data.X, data.A, max_iters, tol);
  Vector w(data.n());
  for (Index i = 0; i < data.n(); ++i) {
    const double pp = fit.prob_treated(data.X.row(i));
    w[i] = 1.0 / (data.A[i] > 0 ? pp : 1.0 - pp);
  }
  BalancingWeights out = make_complete_weights(std::move(w), WeightMethod::ipw_logistic);
  out.solver_iters = fit.iterations;
  return out;
}

}  // namespace dol
