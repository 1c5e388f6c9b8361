#pragma once

#include <cmath>
#include <functional>

#include "dol/gkdr.hpp"
#include "dol/owl.hpp"
#include "dol/simgen.hpp"
#include "dol/types.hpp"

namespace dol {

/// Fraction of test points where the fitted rule agrees with the Bayes rule.
inline double accuracy(const Vector& predicted, const SimOracle& oracle) {
  if (predicted.size() == 0) throw Error(ErrorKind::parameter, "accuracy on an empty test set");
  if (predicted.size() != oracle.f_tilde.size()) throw Error(ErrorKind::shape, "accuracy: oracle size mismatch");
  Index hits = 0;
  for (Index i = 0; i < predicted.size(); ++i) hits += predicted[i] == sign_plus(oracle.f_tilde[i]);
  return static_cast<double>(hits) / static_cast<double>(predicted.size());
}

inline double accuracy(const DecisionRule& rule, const Dataset& test, const SimOracle& oracle) {
  if (test.n() == 0) throw Error(ErrorKind::parameter, "accuracy on an empty test set");
  return accuracy(predict_treatment(rule, test.X), oracle);
}

inline void check_propensity(const Vector& pi, Index n) {
  if (pi.size() != n) throw Error(ErrorKind::shape, "propensity length must equal n");
  for (Index i = 0; i < n; ++i) {
    if (!(pi[i] > 0.0 && pi[i] < 1.0)) throw Error(ErrorKind::parameter, "propensity values must lie in (0, 1)");
  }
}

/// Ratio estimator sum 1{A=d} Y / pi over sum 1{A=d} / pi, with pi the
/// probability of the treatment actually received.
inline double value_estimate(const Vector& decisions, const Dataset& test, const Vector& propensity) {
  check_propensity(propensity, test.n());
  if (decisions.size() != test.n()) throw Error(ErrorKind::shape, "decisions length must equal n");
  double num = 0.0, den = 0.0;
  for (Index i = 0; i < test.n(); ++i) {
    if (decisions[i] == test.A[i]) {
      num += test.Y[i] / propensity[i];
      den += 1.0 / propensity[i];
    }
  }
  if (den <= 0.0) throw Error(ErrorKind::undefined, "value estimate: the rule matches no test unit");
  return num / den;
}

inline double value_estimate(const DecisionRule& rule, const Dataset& test, const Vector& propensity) {
  return value_estimate(predict_treatment(rule, test.X), test, propensity);
}

/// (1/n) sum Y_i / pi_i [1{A_i = d_i} - 1{A_i = -d_i}].
inline double modified_value(const Vector& decisions, const Dataset& test, const Vector& propensity) {
  check_propensity(propensity, test.n());
  if (decisions.size() != test.n()) throw Error(ErrorKind::shape, "decisions length must equal n");
  if (test.n() == 0) throw Error(ErrorKind::parameter, "modified value on an empty test set");
  double s = 0.0;
  for (Index i = 0; i < test.n(); ++i) {
    const double sgn = decisions[i] == test.A[i] ? 1.0 : -1.0;
    s += sgn * test.Y[i] / propensity[i];
  }
  return s / static_cast<double>(test.n());
}

inline double modified_value(const DecisionRule& rule, const Dataset& test, const Vector& propensity) {
  return modified_value(predict_treatment(rule, test.X), test, propensity);
}

/// Orthonormal basis of the column span of B (thin QR).
inline Matrix orthonormalize(const Matrix& B) {
  Eigen::HouseholderQR<Matrix> qr(B);
  return qr.householderQ() * Matrix::Identity(B.rows(), B.cols());
}

/// ||B_hat B_hat^T - B0 B0^T||_F, both bases orthonormalized first.
inline double projection_error(const Matrix& B_hat, const Matrix& B0) {
  if (B_hat.rows() != B0.rows()) throw Error(ErrorKind::shape, "projection_error: row counts differ");
  const Matrix Q1 = orthonormalize(B_hat), Q0 = orthonormalize(B0);
  return (Q1 * Q1.transpose() - Q0 * Q0.transpose()).norm();
}

inline double projection_error(const SubspaceBasis& B_hat, const Matrix& B0) { return projection_error(B_hat.B, B0); }

struct EvalReport {
  double accuracy = std::nan("");
  double value_estimate = std::nan("");
  double value_pct_of_bayes = std::nan("");
  double modified_value = std::nan("");
  double projection_error = std::nan("");
  Index n_test = 0;
};

/// Simulation-mode report against the oracle of the test set.
inline EvalReport evaluate_with_oracle(const DecisionRule& rule, const Dataset& test, const SimOracle& oracle) {
  EvalReport r;
  r.n_test = test.n();
  const Vector d = predict_treatment(rule, test.X);
  const Vector pi = oracle.inverse_propensity(test.A).cwiseInverse();
  r.accuracy = accuracy(d, oracle);
  r.value_estimate = value_estimate(d, test, pi);
  const Vector bayes = oracle.f_tilde.unaryExpr([](double v) { return sign_plus(v); });
  r.value_pct_of_bayes = 100.0 * r.value_estimate / value_estimate(bayes, test, pi);
  r.modified_value = modified_value(d, test, pi);
  r.projection_error = projection_error(rule.basis, oracle.B0);
  return r;
}

/// Real-data report: value statistics with supplied propensities, no accuracy.
inline EvalReport evaluate_without_oracle(const DecisionRule& rule, const Dataset& test, const Vector& propensity) {
  EvalReport r;
  r.n_test = test.n();
  const Vector d = predict_treatment(rule, test.X);
  r.value_estimate = value_estimate(d, test, propensity);
  r.modified_value = modified_value(d, test, propensity);
  return r;
}

}  // namespace dol
