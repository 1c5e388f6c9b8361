#pragma once

#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

#include "dol/owl.hpp"
#include "dol/types.hpp"

namespace dol::testing {

inline Matrix random_normal(Index rows, Index cols, std::uint64_t seed, double scale = 1.0) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> N(0.0, scale);
  Matrix m(rows, cols);
  for (Index j = 0; j < cols; ++j) for (Index i = 0; i < rows; ++i) m(i, j) = N(rng);
  return m;
}

inline Vector random_signs(Index n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::bernoulli_distribution b(0.5);
  Vector v(n);
  for (Index i = 0; i < n; ++i) v[i] = b(rng) ? 1.0 : -1.0;
  return v;
}

inline Matrix random_orthonormal(Index p, Index u, std::uint64_t seed) {
  Eigen::HouseholderQR<Matrix> qr(random_normal(p, u, seed));
  return qr.householderQ() * Matrix::Identity(p, u);
}

inline double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t m = v.size();
  return m % 2 ? v[m / 2] : 0.5 * (v[m / 2 - 1] + v[m / 2]);
}

/// Primal weighted hinge problem solved by a log-barrier interior-point
/// method in (beta, alpha0, xi) with f = F beta, F F^T = G. Units with zero
/// weight are dropped (they do not enter the objective). Returns Q at the
/// barrier solution with the exact hinge.
inline double primal_wsvm_objective(const WsvmProblem& P, double lambda) {
  std::vector<Index> keep;
  for (Index i = 0; i < P.n(); ++i) if (P.sample_weights[i] > 0) keep.push_back(i);
  const Index n = P.n(), m = static_cast<Index>(keep.size());
  Eigen::SelfAdjointEigenSolver<Matrix> es(P.gram_reduced.values);
  std::vector<Index> cols;
  for (Index k = 0; k < n; ++k) if (es.eigenvalues()[k] > 1e-13) cols.push_back(k);
  const Index r = static_cast<Index>(cols.size());
  Matrix F(n, r);
  for (Index k = 0; k < r; ++k) {
    F.col(k) = es.eigenvectors().col(cols[static_cast<std::size_t>(k)]) * std::sqrt(es.eigenvalues()[cols[static_cast<std::size_t>(k)]]);
  }
  const Index d = r + 1 + m;
  Vector x = Vector::Zero(d);
  for (Index k = 0; k < m; ++k) x[r + 1 + k] = 2.0;
  const double inv_n = 1.0 / static_cast<double>(n);
  auto obj = [&](const Vector& v) {
    double s = lambda * v.head(r).squaredNorm();
    for (Index k = 0; k < m; ++k) s += P.sample_weights[keep[static_cast<std::size_t>(k)]] * v[r + 1 + k] * inv_n;
    return s;
  };
  auto slack = [&](const Vector& v, Index k) {
    const Index i = keep[static_cast<std::size_t>(k)];
    return v[r + 1 + k] - 1.0 + P.labels[i] * (F.row(i).dot(v.head(r)) + v[r]);
  };
  auto phi = [&](const Vector& v, double t) {
    double s = t * obj(v);
    for (Index k = 0; k < m; ++k) {
      const double a = v[r + 1 + k], b = slack(v, k);
      if (a <= 0 || b <= 0) return std::numeric_limits<double>::infinity();
      s -= std::log(a) + std::log(b);
    }
    return s;
  };
  for (double t = 1.0; 2.0 * static_cast<double>(m) / t > 1e-13; t *= 4.0) {
    for (int it = 0; it < 200; ++it) {
      Vector g = Vector::Zero(d);
      Matrix H = Matrix::Zero(d, d);
      g.head(r) = 2 * lambda * t * x.head(r);
      H.topLeftCorner(r, r) = 2 * lambda * t * Matrix::Identity(r, r);
      for (Index k = 0; k < m; ++k) {
        const Index i = keep[static_cast<std::size_t>(k)];
        g[r + 1 + k] += t * P.sample_weights[i] * inv_n;
        const double a = x[r + 1 + k];
        g[r + 1 + k] -= 1 / a;
        H(r + 1 + k, r + 1 + k) += 1 / (a * a);
        const double b = slack(x, k);
        Vector e = Vector::Zero(d);
        e.head(r) = P.labels[i] * F.row(i).transpose();
        e[r] = P.labels[i];
        e[r + 1 + k] = 1;
        g -= e / b;
        H += e * e.transpose() / (b * b);
      }
      const Vector dx = -H.ldlt().solve(g);
      const double dec = -g.dot(dx);
      if (dec / 2 < 1e-14) break;
      double s = 1.0;
      const double f0 = phi(x, t);
      while (phi(x + s * dx, t) > f0 - 0.25 * s * dec && s > 1e-20) s *= 0.5;
      x += s * dx;
    }
  }
  Vector f = F * x.head(r);
  f.array() += x[r];
  double q = lambda * x.head(r).squaredNorm();
  for (Index i = 0; i < n; ++i) q += P.sample_weights[i] * std::max(0.0, 1 - P.labels[i] * f[i]) * inv_n;
  return q;
}

/// Random weighted hinge instance on u-dimensional points.
inline WsvmProblem random_wsvm_problem(Index n, Index u, std::uint64_t seed, bool zero_first = false) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> U(0.0, 1.0);
  Dataset D;
  D.X = random_normal(n, u, seed + 1);
  D.A = random_signs(n, seed + 2);
  D.Y = random_normal(n, 1, seed + 3).col(0);
  Vector w(n);
  for (Index i = 0; i < n; ++i) w[i] = 0.5 + 2.0 * U(rng);
  if (zero_first) w[0] = 0.0;
  return build_problem(D, w, Vector::Zero(n), SubspaceBasis::identity(u));
}

}  // namespace dol::testing
