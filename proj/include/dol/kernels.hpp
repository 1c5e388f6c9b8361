#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "dol/rng.hpp"
#include "dol/types.hpp"

namespace dol {

/// Gaussian kernel width. All kernels in the library use
/// k(a, b) = exp(-|a - b|^2 / (2 sigma^2)).
struct Bandwidth {
  double sigma = 1.0;

  Bandwidth() = default;
  explicit Bandwidth(double s) : sigma(s) {
    if (!(s > 0.0) || !std::isfinite(s)) {
      throw Error(ErrorKind::parameter, "bandwidth must be positive and finite");
    }
  }
};

struct GramMatrix {
  Matrix values;
  Bandwidth bandwidth;
};

inline double gaussian(double sq_dist, const Bandwidth& bw) {
  return std::exp(-sq_dist / (2.0 * bw.sigma * bw.sigma));
}

namespace detail {

// Squared distances via the expansion |a|^2 + |b|^2 - 2 a.b, then clamped at 0.
// The expansion loses accuracy when |a| >> |a - b|, so points are centred first.
inline Matrix squared_distances(const Matrix& A, const Matrix& B) {
  const Eigen::RowVectorXd centre = A.colwise().mean();
  const Matrix Ac = A.rowwise() - centre;
  const Matrix Bc = B.rowwise() - centre;
  const Vector an = Ac.rowwise().squaredNorm();
  const Vector bn = Bc.rowwise().squaredNorm();
  Matrix d = -2.0 * Ac * Bc.transpose();
  d.colwise() += an;
  d.rowwise() += bn.transpose();
  return d.cwiseMax(0.0);
}

}  // namespace detail

inline GramMatrix gram(const Matrix& A, const Matrix& B, const Bandwidth& bw) {
  if (A.cols() != B.cols()) {
    throw Error(ErrorKind::shape, "gram: point sets have dimensions " + std::to_string(A.cols()) +
                                      " and " + std::to_string(B.cols()));
  }
  if (A.cols() < 1) throw Error(ErrorKind::shape, "gram: points must have at least one coordinate");
  GramMatrix g;
  g.bandwidth = bw;
  const double scale = -1.0 / (2.0 * bw.sigma * bw.sigma);
  g.values = (detail::squared_distances(A, B) * scale).array().exp().matrix();
  return g;
}

/// Symmetric Gram matrix of one point set; exact unit diagonal.
inline GramMatrix gram(const Matrix& A, const Bandwidth& bw) {
  GramMatrix g = gram(A, A, bw);
  const Index n = A.rows();
  for (Index j = 0; j < n; ++j) {
    g.values(j, j) = 1.0;
    for (Index i = j + 1; i < n; ++i) {
      const double v = 0.5 * (g.values(i, j) + g.values(j, i));
      g.values(i, j) = v;
      g.values(j, i) = v;
    }
  }
  return g;
}

/// Row i, column m: d k(X_i, x) / d x^(m) = (X_i^(m) - x^(m)) / sigma^2 * k(X_i, x).
inline Matrix gram_gradient(const Matrix& points, const Vector& x, const Bandwidth& bw) {
  if (points.cols() != x.size()) {
    throw Error(ErrorKind::shape, "gram_gradient: point dimension " + std::to_string(points.cols()) +
                                      " does not match x dimension " + std::to_string(x.size()));
  }
  const double inv_s2 = 1.0 / (bw.sigma * bw.sigma);
  Matrix diff = points.rowwise() - x.transpose();
  const Vector k = (diff.rowwise().squaredNorm() * (-0.5 * inv_s2)).array().exp().matrix();
  for (Index i = 0; i < diff.rows(); ++i) diff.row(i) *= k[i] * inv_s2;
  return diff;
}

namespace detail {

inline double lower_median_pairwise(const Matrix& points) {
  const Index n = points.rows();
  const Matrix cols = points.transpose();
  std::vector<double> dists;
  dists.reserve(static_cast<std::size_t>(n * (n - 1) / 2));
  double max_d = 0.0;
  for (Index i = 0; i < n; ++i) {
    for (Index j = i + 1; j < n; ++j) {
      const double d = (cols.col(i) - cols.col(j)).norm();
      dists.push_back(d);
      max_d = std::max(max_d, d);
    }
  }
  if (max_d == 0.0) {
    throw Error(ErrorKind::degenerate, "median heuristic: all points are identical");
  }
  auto mid = dists.begin() + static_cast<std::ptrdiff_t>((dists.size() - 1) / 2);
  std::nth_element(dists.begin(), mid, dists.end());
  double med = *mid;
  if (med == 0.0) {
    // Mostly duplicated points: fall back to the median of the nonzero distances.
    std::vector<double> pos;
    for (double d : dists) if (d > 0.0) pos.push_back(d);
    auto pmid = pos.begin() + static_cast<std::ptrdiff_t>((pos.size() - 1) / 2);
    std::nth_element(pos.begin(), pmid, pos.end());
    med = *pmid;
  }
  return med;
}

}  // namespace detail

inline constexpr Index kMedianExactLimit = 4000;
inline constexpr Index kMedianSubsample = 2000;

/// Lower median of the distinct pairwise Euclidean distances. Above
/// kMedianExactLimit points the median is taken on a fixed-seed uniform
/// subsample of kMedianSubsample points.
inline Bandwidth median_heuristic(const Matrix& points) {
  const Index n = points.rows();
  if (n < 2) throw Error(ErrorKind::parameter, "median heuristic needs at least two points");
  if (n <= kMedianExactLimit) return Bandwidth(detail::lower_median_pairwise(points));
  std::vector<Index> idx(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) idx[static_cast<std::size_t>(i)] = i;
  Rng rng(derive_seed(0x6d656469616eULL, streams::subsample, static_cast<std::uint64_t>(n)));
  std::shuffle(idx.begin(), idx.end(), rng);
  idx.resize(static_cast<std::size_t>(kMedianSubsample));
  return Bandwidth(detail::lower_median_pairwise(subset_rows(points, idx)));
}

/// Centres columns and scales them to unit (population) variance; constant
/// columns are only centred.
inline Matrix standardize_columns(const Matrix& X) {
  Matrix out = X.rowwise() - X.colwise().mean();
  const double n = static_cast<double>(std::max<Index>(1, X.rows()));
  for (Index j = 0; j < out.cols(); ++j) {
    const double sd = std::sqrt(out.col(j).squaredNorm() / n);
    if (sd > 0.0) out.col(j) /= sd;
  }
  return out;
}

}  // namespace dol
