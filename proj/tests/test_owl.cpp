#include <gtest/gtest.h>

#include <cmath>
#include <map>

#include "dol/eval.hpp"
#include "dol/owl.hpp"
#include "dol/simgen.hpp"
#include "support.hpp"

using namespace dol;
using dol::testing::primal_wsvm_objective;
using dol::testing::random_normal;
using dol::testing::random_wsvm_problem;

namespace {

WsvmOptions precise(double tol = 1e-9) {
  WsvmOptions o;
  o.tol = tol;
  o.warn = false;
  return o;
}

SubspaceBasis basis_of(const Matrix& B) {
  SubspaceBasis b;
  b.B = B;
  b.eigenvalues = Vector::Ones(B.cols());
  return b;
}

DecisionRule constant_rule(double c, Index p) {
  DecisionRule r;
  r.intercept = c;
  r.basis = SubspaceBasis::identity(p);
  r.train_points_reduced = Matrix(0, p);
  return r;
}

double best_constant_objective(const WsvmProblem& P) {
  // The hinge sum is piecewise linear in a constant intercept with kinks at +-1.
  double best = std::numeric_limits<double>::infinity();
  for (double a0 : {-1.0, 1.0}) best = std::min(best, wsvm_objective(P, 1.0, Vector::Zero(P.n()), a0));
  return best;
}

}  // namespace

TEST(BuildProblem, ExactFitGivesZeroWeightPositiveLabel) {
  Dataset d;
  d.X = random_normal(3, 2, 1);
  d.A = Vector(3);
  d.A << -1, 1, -1;
  d.Y = Vector(3);
  d.Y << 0.5, 2.0, -1.0;
  Vector g = d.Y;
  g[1] = 3.0;
  const WsvmProblem P = build_problem(d, Vector::Constant(3, 2.0), g, SubspaceBasis::identity(2));
  EXPECT_EQ(P.sample_weights[0], 0.0);
  EXPECT_EQ(P.labels[0], -1.0);  // A = -1 times sign(0) = +1
  EXPECT_EQ(P.labels[2], -1.0);
  EXPECT_EQ(P.labels[1], -1.0);  // A = +1, residual negative
  EXPECT_EQ(P.sample_weights[1], 2.0);
}

TEST(BuildProblem, UnitWeightsZeroG) {
  Dataset d;
  d.X = random_normal(10, 3, 2);
  d.A = dol::testing::random_signs(10, 3);
  d.Y = random_normal(10, 1, 4).col(0);
  const WsvmProblem P = build_problem(d, Vector::Ones(10), Vector::Zero(10), SubspaceBasis::identity(3));
  for (Index i = 0; i < 10; ++i) {
    EXPECT_EQ(P.sample_weights[i], std::abs(d.Y[i]));
    EXPECT_EQ(P.labels[i], d.A[i] * (d.Y[i] >= 0 ? 1.0 : -1.0));
  }
}

TEST(BuildProblem, MatchesLoop) {
  Dataset d;
  d.X = random_normal(25, 4, 5);
  d.A = dol::testing::random_signs(25, 6);
  d.Y = random_normal(25, 1, 7).col(0);
  const Vector w = (random_normal(25, 1, 8).col(0).cwiseAbs().array() + 1.0).matrix();
  const Vector g = random_normal(25, 1, 9, 0.5).col(0);
  const SubspaceBasis b = basis_of(dol::testing::random_orthonormal(4, 2, 10));
  const WsvmProblem P = build_problem(d, w, g, b, Bandwidth(0.8));
  for (Index i = 0; i < 25; ++i) {
    const double r = d.Y[i] - g[i];
    EXPECT_EQ(P.labels[i], d.A[i] * (r >= 0 ? 1.0 : -1.0));
    EXPECT_NEAR(P.sample_weights[i], w[i] * std::abs(r), 1e-15);
    const double v0 = d.X.row(i).dot(b.B.col(0)), v1 = d.X.row(i).dot(b.B.col(1));
    EXPECT_NEAR(P.reduced(i, 0), v0, 1e-12);
    for (Index j = 0; j < 25; ++j) {
      const double dv0 = v0 - P.reduced(j, 0), dv1 = v1 - P.reduced(j, 1);
      EXPECT_NEAR(P.gram_reduced.values(i, j), std::exp(-(dv0 * dv0 + dv1 * dv1) / (2 * 0.64)), 1e-12);
    }
  }
}

TEST(FitWsvm, SeparableTwoPoints) {
  Dataset d;
  d.X = Matrix(2, 1);
  d.X << -3.0, 3.0;
  d.A = Vector(2);
  d.A << -1, 1;
  d.Y = Vector::Ones(2);
  const WsvmProblem P = build_problem(d, Vector::Ones(2), Vector::Zero(2), SubspaceBasis::identity(1), Bandwidth(1.0));
  const DecisionRule r = fit_wsvm(P, 1e-4, precise());
  const Vector s = predict_treatment(r, d.X);
  EXPECT_EQ(s[0], -1.0);
  EXPECT_EQ(s[1], 1.0);
}

TEST(FitWsvm, ZeroWeightUnitDoesNotMatter) {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const WsvmProblem P = random_wsvm_problem(20, 2, seed, true);
    std::vector<Index> rest;
    for (Index i = 1; i < 20; ++i) rest.push_back(i);
    const WsvmProblem Q = P.subset(rest);
    // The loss is averaged over n, so n * lambda is what must stay fixed.
    for (double lambda : {1e-3, 1e-1}) {
      const DecisionRule a = fit_wsvm(P, lambda, precise(1e-10));
      const DecisionRule b = fit_wsvm(Q, lambda * 20.0 / 19.0, precise(1e-10));
      const Matrix grid = random_normal(50, 2, seed + 900, 1.5);
      EXPECT_LE((decision_values_reduced(a, grid) - decision_values_reduced(b, grid)).cwiseAbs().maxCoeff(), 1e-8);
    }
  }
}

TEST(FitWsvm, MatchesPrimalOracle) {
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    const WsvmProblem P = random_wsvm_problem(12, 2, 40 + seed);
    for (double lambda : {1e-3, 0.05, 1.0}) {
      const DecisionRule r = fit_wsvm(P, lambda, precise());
      EXPECT_NEAR(wsvm_objective(P, r), primal_wsvm_objective(P, lambda), 1e-6) << "seed " << seed;
    }
  }
}

TEST(FitWsvm, KktWithinTolerance) {
  for (double tol : {1e-3, 1e-6}) {
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
      const WsvmProblem P = random_wsvm_problem(60, 3, seed);
      WsvmOptions o = precise(tol);
      const DecisionRule r = fit_wsvm(P, 0.01, o);
      EXPECT_LE(r.kkt_violation, tol);
      EXPECT_TRUE(decision_values_reduced(r, P.reduced).allFinite());
    }
  }
}

TEST(FitWsvm, NoWorseThanBestConstant) {
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    const WsvmProblem P = random_wsvm_problem(40, 2, 100 + seed);
    for (double lambda : {1e-4, 1e-2, 1.0, 100.0}) {
      const DecisionRule r = fit_wsvm(P, lambda, precise(1e-6));
      EXPECT_LE(wsvm_objective(P, r), best_constant_objective(P) + 1e-8);
    }
  }
}

TEST(FitWsvm, ScalingWeightsAndLambdaTogether) {
  const WsvmProblem P = random_wsvm_problem(50, 2, 7);
  WsvmProblem Q = P;
  const double k = 3.7;
  Q.sample_weights *= k;
  const DecisionRule a = fit_wsvm(P, 0.02, precise(1e-8));
  const DecisionRule b = fit_wsvm(Q, 0.02 * k, precise(1e-8));
  const Matrix grid = random_normal(40, 2, 8);
  EXPECT_LE((decision_values_reduced(a, grid) - decision_values_reduced(b, grid)).cwiseAbs().maxCoeff(), 1e-6);
}

TEST(FitWsvm, AllZeroWeightsGiveZeroRule) {
  WsvmProblem P = random_wsvm_problem(10, 2, 3);
  P.sample_weights.setZero();
  const DecisionRule r = fit_wsvm(P, 0.1, precise());
  EXPECT_EQ(r.alphas.cwiseAbs().maxCoeff(), 0.0);
  EXPECT_EQ(r.intercept, 0.0);
}

TEST(FitWsvm, NonPositiveLambdaIsParameterError) {
  const WsvmProblem P = random_wsvm_problem(10, 2, 3);
  for (double l : {0.0, -1.0}) {
    try {
      fit_wsvm(P, l);
      FAIL();
    } catch (const Error& e) {
      EXPECT_EQ(e.kind(), ErrorKind::parameter);
    }
  }
}

TEST(FitWsvm, IterationCapRaisesSolverError) {
  const WsvmProblem P = random_wsvm_problem(80, 2, 4);
  WsvmOptions o = precise(1e-12);
  o.max_iters = 3;
  o.shrinking = false;
  try {
    fit_wsvm(P, 1e-4, o);
    FAIL();
  } catch (const SolverError& e) {
    EXPECT_GT(e.residual(), 1e-12);
  }
}

TEST(FitWsvm, WarmStartReachesSameSolution) {
  const WsvmProblem P = random_wsvm_problem(60, 2, 9);
  const DecisionRule a = fit_wsvm(P, 0.01, precise(1e-9));
  WsvmOptions o = precise(1e-9);
  o.warm_start = &a;
  const DecisionRule b = fit_wsvm(P, 0.003, o);
  const DecisionRule c = fit_wsvm(P, 0.003, precise(1e-9));
  EXPECT_NEAR(wsvm_objective(P, b), wsvm_objective(P, c), 1e-7);
}

TEST(DecisionFunction, ConstantRule) {
  const DecisionRule r = constant_rule(0.42, 3);
  const Matrix X = random_normal(5, 3, 1);
  for (Index i = 0; i < 5; ++i) EXPECT_EQ(decision_function(r, Vector(X.row(i).transpose())), 0.42);
}

TEST(DecisionFunction, TrainingPointsMatchSolverExpression) {
  Dataset d;
  d.X = random_normal(30, 4, 2);
  d.A = dol::testing::random_signs(30, 3);
  d.Y = random_normal(30, 1, 4).col(0);
  const SubspaceBasis b = basis_of(dol::testing::random_orthonormal(4, 2, 5));
  const WsvmProblem P = build_problem(d, Vector::Ones(30), Vector::Zero(30), b);
  const DecisionRule r = fit_wsvm(P, 0.01, precise());
  const Vector f = P.gram_reduced.values * r.alphas + Vector::Constant(30, r.intercept);
  EXPECT_LE((decision_function(r, d.X) - f).cwiseAbs().maxCoeff(), 1e-8);
}

TEST(DecisionFunction, BatchEqualsPointwise) {
  const WsvmProblem P = random_wsvm_problem(30, 3, 6);
  const DecisionRule r = fit_wsvm(P, 0.01, precise());
  const Matrix X = random_normal(20, 3, 7);
  const Vector batch = decision_function(r, X);
  const Vector signs = predict_treatment(r, X);
  for (Index i = 0; i < 20; ++i) {
    const Vector x = X.row(i).transpose();
    EXPECT_NEAR(batch[i], decision_function(r, x), 1e-14);
    EXPECT_EQ(signs[i], predict_treatment(r, x));
  }
}

TEST(DecisionFunction, ShapeMismatch) {
  const DecisionRule r = constant_rule(1.0, 3);
  EXPECT_THROW(decision_function(r, Vector(Vector::Zero(2))), Error);
}

TEST(PredictTreatment, SignWithTieToPlus) {
  const Vector x = Vector::Zero(2);
  EXPECT_EQ(predict_treatment(constant_rule(0.3, 2), x), 1.0);
  EXPECT_EQ(predict_treatment(constant_rule(-0.3, 2), x), -1.0);
  EXPECT_EQ(predict_treatment(constant_rule(0.0, 2), x), 1.0);
}

namespace {

struct OwlFixture {
  Dataset data;
  SimOracle oracle;
  Vector w, g;
  WsvmProblem prob;
};

OwlFixture randomized_setting1(Index n, std::uint64_t seed) {
  auto [d, o] = generate(1, n, true, seed);
  OwlFixture f;
  f.w = o.inverse_propensity(d.A);
  f.g = oracle_g(o);
  f.prob = build_problem(d, f.w, f.g, basis_of(o.B0));
  f.data = std::move(d);
  f.oracle = std::move(o);
  return f;
}

}  // namespace

TEST(TuneLambda, SingletonGrid) {
  const OwlFixture f = randomized_setting1(100, 1);
  const LambdaSelection s = tune_lambda(f.prob, {0.01}, 2, f.data, f.w, 1, precise(1e-3));
  EXPECT_EQ(s.lambda_n, 0.01);
  EXPECT_EQ(s.rule.lambda_n, 0.01);
}

TEST(TuneLambda, PrefersModerateOverHeavyPenalty) {
  int small = 0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const OwlFixture f = randomized_setting1(200, 500 + seed);
    small += tune_lambda(f.prob, {1e-3, 1e3}, 2, f.data, f.w, seed, precise(1e-3)).lambda_n == 1e-3;
  }
  EXPECT_GT(small, 10);
}

TEST(TuneLambda, FoldSeedStability) {
  const OwlFixture f = randomized_setting1(300, 17);
  const auto grid = default_lambda_grid(300);
  std::map<double, int> counts;
  for (std::uint64_t s = 0; s < 7; ++s) ++counts[tune_lambda(f.prob, grid, 2, f.data, f.w, 100 + s, precise(1e-3)).lambda_n];
  // Neighbouring grid values give near-identical rules, so agreement is
  // counted up to one grid step.
  int best = 0;
  for (std::size_t c = 0; c < grid.size(); ++c) {
    int near = 0;
    for (std::size_t k = (c == 0 ? 0 : c - 1); k <= std::min(grid.size() - 1, c + 1); ++k) near += counts[grid[k]];
    best = std::max(best, near);
  }
  EXPECT_GE(best, 4);
}

TEST(TuneLambda, EmptyGridRejected) {
  const OwlFixture f = randomized_setting1(50, 2);
  EXPECT_THROW(tune_lambda(f.prob, {}, 2, f.data, f.w), Error);
}

// The rule is fitted on the true reduced coordinates; agreement with the sign
// of the true interaction is measured on fresh draws (the dense region).
TEST(FisherSanity, AgreesWithTrueInteractionSign) {
  const OwlFixture f = randomized_setting1(1000, 31);
  const LambdaSelection s = tune_lambda(f.prob, default_lambda_grid(1000), 2, f.data, f.w, 3, precise(1e-3));
  const auto [test, test_oracle] = generate(1, 4000, true, 32);
  EXPECT_GT(accuracy(s.rule, test, test_oracle), 0.75);
}
