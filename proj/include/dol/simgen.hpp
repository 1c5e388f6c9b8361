#pragma once

#include <cmath>
#include <numbers>
#include <random>
#include <utility>

#include "dol/rng.hpp"
#include "dol/types.hpp"

namespace dol {

inline constexpr Index kSimDimension = 50;
inline constexpr Index kTestSetSize = 10000;

/// Ground truth that accompanies a simulated dataset. Rows of `latent`
/// align with the dataset rows; mu, f_tilde and propensity are per row.
struct SimOracle {
  int setting = 1;
  bool randomized = false;
  Matrix B0;      // p x u0, orthonormal columns
  Matrix latent;  // n x 50
  Vector mu;
  Vector f_tilde;
  Vector propensity;  // Pr(A = +1 | X_i)

  Index n() const { return latent.rows(); }

  /// Pr(A = a | X_i)
  double propensity_of(Index i, double a) const {
    return a > 0 ? propensity[i] : 1.0 - propensity[i];
  }

  Vector inverse_propensity(const Vector& A) const {
    Vector w(A.size());
    for (Index i = 0; i < A.size(); ++i) w[i] = 1.0 / propensity_of(i, A[i]);
    return w;
  }

  SimOracle subset(const std::vector<Index>& rows) const {
    SimOracle o;
    o.setting = setting;
    o.randomized = randomized;
    o.B0 = B0;
    o.latent = subset_rows(latent, rows);
    o.mu = dol::subset(mu, rows);
    o.f_tilde = dol::subset(f_tilde, rows);
    o.propensity = dol::subset(propensity, rows);
    return o;
  }
};

namespace sim {

namespace detail {

inline double logistic(double t) { return 1.0 / (1.0 + std::exp(-t)); }

// Several interaction terms take sqrt/log of reduced coordinates whose sign is
// not fixed on the covariate support; they are evaluated on magnitudes.
inline double mag(double x) { return std::max(std::abs(x), 1e-12); }

inline void check_setting(int setting) {
  if (setting < 1 || setting > 3) {
    throw Error(ErrorKind::parameter, "unknown simulation setting " + std::to_string(setting));
  }
}

}  // namespace detail

/// Observed covariates from one latent row (0-based coordinates: z[0] = Z^(1)).
inline Vector covariates(int setting, const Vector& z) {
  detail::check_setting(setting);
  Vector x = z;
  switch (setting) {
    case 1:
      x[0] = std::exp(z[0] / 2.0);
      x[1] = z[1] / (1.0 + std::exp(z[0]));
      x[2] = std::pow(z[0] * z[2] / 25.0 + 0.6, 3);
      x[3] = std::pow(z[1] + z[3] + 20.0, 2);
      break;
    case 2:
      x[0] = std::exp(z[0] + 1.0) + z[1];
      x[1] = z[1] * z[1] * z[2];
      x[2] = std::sin(2.0 * z[2]) * std::pow(z[3] + 5.0, 2);
      x[3] = (std::pow(z[1], 3) + z[3] + 10.0) * (z[1] + std::pow(z[3], 3) + 10.0);
      break;
    case 3:
      x[1] = std::pow(z[1] - 0.2 * z[3] + 6.0, 3);
      x[3] = std::exp(0.5 * z[3]);
      x[5] = z[5] / (1.0 + std::exp(z[3]));
      x[7] = std::pow(z[5] + z[7] + 20.0, 2);
      break;
  }
  return x;
}

inline Matrix basis(int setting) {
  detail::check_setting(setting);
  const Index p = kSimDimension;
  if (setting == 3) {
    Matrix B = Matrix::Zero(p, 4);
    const double r = 1.0 / std::sqrt(2.0);
    B(0, 0) = r;  B(1, 0) = -r;
    B(0, 1) = r;  B(1, 1) = r;
    B(2, 2) = r;  B(3, 2) = -r;
    B(2, 3) = r;  B(3, 3) = r;
    return B;
  }
  Matrix B = Matrix::Zero(p, 2);
  const double a = std::sqrt(0.6 * 0.6 + 0.5 * 0.5 + 0.2 * 0.2);
  const double b = std::sqrt(0.2 * 0.2 + 0.5 * 0.5 + 0.5 * 0.5);
  B(0, 0) = 0.6 / a;
  B(1, 0) = 0.5 / a;
  B(2, 0) = -0.2 / a;
  B(1, 1) = 0.2 / b;
  B(2, 1) = 0.5 / b;
  B(4, 1) = -0.5 / b;
  return B;
}

inline double main_effect(int setting, const Vector& z) {
  detail::check_setting(setting);
  switch (setting) {
    case 1:
      return 5.0 + 6.0 * z[0] + 8.0 * z[1] + 3.0 * z[2] + 5.0 * z[3] + 5.0 * z[4];
    case 2:
      return 10.0 + 7.0 * z[0] + 13.0 * z[1] + 15.0 * z[2] + 15.0 * z[3] + 10.0 * z[4] +
             7.0 * z[5] + 13.0 * z[6] + 15.0 * z[7] + 15.0 * z[8] + 10.0 * z[9];
    default:
      return 6.0 * z[0] + 6.0 * z[1] + 10.0 * z[2] + 10.0 * z[3] + 12.0 * z[4] + 12.0 * z[5] +
             8.0 * z[6] + 8.0 * z[7] + 6.0 * z[8] + 6.0 * z[9];
  }
}

/// Treatment-covariate interaction as a function of the reduced coordinates v = B0^T x.
inline double interaction(int setting, const Vector& v) {
  detail::check_setting(setting);
  using std::numbers::pi;
  using detail::mag;
  switch (setting) {
    case 1:
      return 5.0 * std::sin(pi / (v[0] + 1.0) / std::sqrt(mag(v[1]))) +
             2.5 * std::sin(pi * v[0]) * std::log(mag(v[1]));
    case 2:
      return 6.0 * std::sin(v[0] / 3.0) * std::log(std::abs(v[1]) + 1.0) +
             4.0 * std::cos(v[1] * std::sqrt(std::abs(v[0]))) +
             5.0 * std::atan(2.0 * (v[0] - 1.0) * std::log(std::abs(v[1]) + 1.0));
    default:
      return (v[2] + 10.0) * std::cos(2.0 * pi * std::log(mag(v[0] - 2.0))) +
             3.0 * std::sqrt(mag(v[1])) * std::sin(0.5 * pi * v[0]) / (pi * std::sqrt(mag(v[0]))) +
             std::atan(2.0 * std::log(mag(v[1]))) * std::sqrt(std::abs(v[3] - 4.0)) - 3.0;
  }
}

/// Pr(A = +1 | latent z) in the observational design.
inline double observational_propensity(int setting, const Vector& z) {
  detail::check_setting(setting);
  switch (setting) {
    case 1:
      return detail::logistic(z[0] - z[1] - z[3] - z[5] - z[7] - z[9]);
    case 2:
      return detail::logistic(-z[2] + 2.0 * z[3] - z[4] - 0.5 * z[5]);
    default:
      return detail::logistic(0.6 * z[0] + 1.2 * z[1] + 1.2 * z[2] - 0.8 * z[3] - z[4] - z[5]);
  }
}

}  // namespace sim

/// Draws n units of a simulation setting. Latent Z ~ U[-2, 2]^50, A from the
/// setting's propensity (1/2 when randomized), Y ~ N(mu + A f~, 1).
inline std::pair<Dataset, SimOracle> generate(int setting, Index n, bool randomized, std::uint64_t seed) {
  sim::detail::check_setting(setting);
  if (n < 1) throw Error(ErrorKind::parameter, "simulation size must be at least 1");
  const Index p = kSimDimension;

  SimOracle oracle;
  oracle.setting = setting;
  oracle.randomized = randomized;
  oracle.B0 = sim::basis(setting);
  oracle.latent.resize(n, p);
  oracle.mu.resize(n);
  oracle.f_tilde.resize(n);
  oracle.propensity.resize(n);

  Dataset data;
  data.seed = seed;
  data.X.resize(n, p);
  data.A.resize(n);
  data.Y.resize(n);

  // Independent streams so that, e.g., the treatment draw does not depend on
  // how many uniforms the covariates consumed.
  Rng rng_z(derive_seed(seed, 11));
  Rng rng_a(derive_seed(seed, 12));
  Rng rng_y(derive_seed(seed, 13));
  std::uniform_real_distribution<double> unif(-2.0, 2.0);
  std::uniform_real_distribution<double> coin(0.0, 1.0);
  std::normal_distribution<double> noise(0.0, 1.0);

  for (Index i = 0; i < n; ++i) {
    Vector z(p);
    for (Index j = 0; j < p; ++j) z[j] = unif(rng_z);
    const Vector x = sim::covariates(setting, z);
    const Vector v = oracle.B0.transpose() * x;
    oracle.latent.row(i) = z.transpose();
    data.X.row(i) = x.transpose();
    oracle.mu[i] = sim::main_effect(setting, z);
    oracle.f_tilde[i] = sim::interaction(setting, v);
    oracle.propensity[i] = randomized ? 0.5 : sim::observational_propensity(setting, z);
  }
  for (Index i = 0; i < n; ++i) data.A[i] = coin(rng_a) < oracle.propensity[i] ? 1.0 : -1.0;
  for (Index i = 0; i < n; ++i) {
    data.Y[i] = oracle.mu[i] + data.A[i] * oracle.f_tilde[i] + noise(rng_y);
  }
  return {std::move(data), std::move(oracle)};
}

/// Bayes-optimal treatment at covariate x: sign of the interaction at B0^T x.
inline double bayes_rule(const SimOracle& oracle, const Vector& x) {
  const Vector v = oracle.B0.transpose() * x;
  return sign_plus(sim::interaction(oracle.setting, v));
}

/// E[{1/pi(A,X) - 1} Y | X_i] for row i of the oracle:
/// pi(-1)(mu + f) + pi(+1)(mu - f) = mu + (1 - 2 pi(+1)) f.
inline double oracle_g(const SimOracle& oracle, Index i) {
  return oracle.mu[i] + (1.0 - 2.0 * oracle.propensity[i]) * oracle.f_tilde[i];
}

inline Vector oracle_g(const SimOracle& oracle) {
  Vector g(oracle.n());
  for (Index i = 0; i < oracle.n(); ++i) g[i] = oracle_g(oracle, i);
  return g;
}

}  // namespace dol
