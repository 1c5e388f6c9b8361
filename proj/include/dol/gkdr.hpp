#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "dol/kernels.hpp"
#include "dol/rng.hpp"
#include "dol/types.hpp"

namespace dol {

inline constexpr double kDefaultEpsilon = 1e-5;

/// Eight log-spaced Tikhonov values 1e-9 ... 1e-2.
inline std::vector<double> default_epsilon_grid() {
  std::vector<double> grid;
  for (int e = -9; e <= -2; ++e) grid.push_back(std::pow(10.0, e));
  return grid;
}

struct GkdrMatrix {
  Matrix W;
  double epsilon = kDefaultEpsilon;
  Bandwidth bandwidth;
};

struct GkdrOptions {
  // Kernel on per-coordinate standardized inputs (an anisotropic Gaussian in
  // the raw coordinates); W is returned in raw coordinates either way.
  bool standardize = false;
  // Average over at most this many evaluation points (0: all points).
  Index max_eval_points = 0;
};

namespace detail {

inline std::vector<Index> evaluation_points(Index n, Index cap) {
  std::vector<Index> idx;
  if (cap <= 0 || cap >= n) {
    idx.resize(static_cast<std::size_t>(n));
    std::iota(idx.begin(), idx.end(), Index{0});
    return idx;
  }
  // Evenly spaced over the sample order.
  for (Index k = 0; k < cap; ++k) idx.push_back(k * n / cap);
  return idx;
}

struct KernelInputs {
  Matrix X;
  Vector scale;  // x_raw = centre + scale .* x_kernel
};

inline KernelInputs gkdr_inputs(const Matrix& X, bool standardize) {
  KernelInputs in;
  in.scale = Vector::Ones(X.cols());
  if (!standardize) {
    in.X = X;
    return in;
  }
  in.X = X.rowwise() - X.colwise().mean();
  const double n = static_cast<double>(std::max<Index>(1, X.rows()));
  for (Index j = 0; j < X.cols(); ++j) {
    const double sd = std::sqrt(in.X.col(j).squaredNorm() / n);
    if (sd > 0.0) {
      in.X.col(j) /= sd;
      in.scale[j] = sd;
    }
  }
  return in;
}

}  // namespace detail

/// Rows are b(X_k) for the evaluation points, in kernel-input coordinates:
///   b_m(x) = (1/n) z^T (G/n + eps I)^{-1} d_m(x),  d_m(x)_i = dK(X_i, x)/dx^(m).
/// Uses a single Cholesky solve c = (G/n + eps I)^{-1} z, since
/// z^T (G/n + eps I)^{-1} d_m = c^T d_m for the symmetric system.
inline Matrix gkdr_gradients(const Matrix& Xk, const Vector& z, const Bandwidth& bw, double epsilon,
                             const std::vector<Index>& eval) {
  const Index n = Xk.rows();
  const double inv_n = 1.0 / static_cast<double>(n);
  Matrix A = gram(Xk, bw).values * inv_n;
  A.diagonal().array() += epsilon;
  Eigen::LLT<Matrix> llt(A);
  if (llt.info() != Eigen::Success) {
    throw Error(ErrorKind::numerical, "gKDR: (G/n + eps I) is not positive definite for epsilon = " +
                                          std::to_string(epsilon));
  }
  const Vector c = llt.solve(z);
  if (!c.allFinite()) {
    throw Error(ErrorKind::numerical, "gKDR: Gram solve is not finite for epsilon = " + std::to_string(epsilon));
  }
  const Matrix Xe = subset_rows(Xk, eval);
  const Matrix K = gram(Xk, Xe, bw).values;  // n x m
  const double s2 = bw.sigma * bw.sigma;
  const Matrix cX = c.asDiagonal() * Xk;
  const Vector Kc = K.transpose() * c;
  Matrix B = K.transpose() * cX;  // m x p
  B -= Kc.asDiagonal() * Xe;
  B *= inv_n / s2;
  return B;
}

/// W~ = (1/m) sum_k b(X_k) b(X_k)^T over the evaluation points, in raw coordinates.
inline GkdrMatrix gkdr_matrix(const Matrix& X, const Vector& z, std::optional<Bandwidth> bw, double epsilon,
                              const GkdrOptions& opts = {}) {
  if (!(epsilon > 0.0)) throw Error(ErrorKind::parameter, "gKDR epsilon must be positive");
  if (z.size() != X.rows()) throw Error(ErrorKind::shape, "gKDR: pseudo-outcome length must equal n");
  const auto in = detail::gkdr_inputs(X, opts.standardize);
  GkdrMatrix out;
  out.epsilon = epsilon;
  out.bandwidth = bw ? *bw : median_heuristic(in.X);
  const auto eval = detail::evaluation_points(X.rows(), opts.max_eval_points);
  Matrix B = gkdr_gradients(in.X, z, out.bandwidth, epsilon, eval);
  // d/dx_raw = (1/scale) d/dx_kernel
  for (Index j = 0; j < B.cols(); ++j) B.col(j) /= in.scale[j];
  out.W = B.transpose() * B / static_cast<double>(eval.size());
  out.W = 0.5 * (out.W + out.W.transpose()).eval();
  return out;
}

struct SubspaceBasis {
  Matrix B;            // p x u, orthonormal columns
  Vector eigenvalues;  // u, non-increasing, nonnegative
  bool degenerate = false;  // eigenvalues u and u+1 coincide within 1e-12

  Index p() const { return B.rows(); }
  Index u() const { return B.cols(); }

  static SubspaceBasis identity(Index p) {
    SubspaceBasis b;
    b.B = Matrix::Identity(p, p);
    b.eigenvalues = Vector::Ones(p);
    return b;
  }
};

/// Flips each column so that its largest-magnitude entry (first on ties) is positive.
inline void normalize_signs(Matrix& B) {
  for (Index j = 0; j < B.cols(); ++j) {
    Index arg = 0;
    for (Index i = 1; i < B.rows(); ++i) {
      if (std::abs(B(i, j)) > std::abs(B(arg, j))) arg = i;
    }
    if (B(arg, j) < 0.0) B.col(j) = -B.col(j);
  }
}

/// Full spectrum of a symmetric matrix, sorted by eigenvalue (descending) with
/// stable index order on ties.
inline std::pair<Vector, Matrix> sorted_eigen(const Matrix& W) {
  Eigen::SelfAdjointEigenSolver<Matrix> es(W);
  if (es.info() != Eigen::Success) throw Error(ErrorKind::numerical, "symmetric eigendecomposition failed");
  const Index p = W.rows();
  std::vector<Index> order(static_cast<std::size_t>(p));
  std::iota(order.begin(), order.end(), Index{0});
  const Vector& ev = es.eigenvalues();
  std::stable_sort(order.begin(), order.end(), [&](Index a, Index b) { return ev[a] > ev[b]; });
  Vector vals(p);
  Matrix vecs(p, p);
  for (Index k = 0; k < p; ++k) {
    vals[k] = ev[order[static_cast<std::size_t>(k)]];
    vecs.col(k) = es.eigenvectors().col(order[static_cast<std::size_t>(k)]);
  }
  return {vals, vecs};
}

inline SubspaceBasis basis_from_spectrum(const Vector& vals, const Matrix& vecs, Index u) {
  const Index p = vals.size();
  if (u < 1 || u > p) {
    throw Error(ErrorKind::parameter, "subspace dimension " + std::to_string(u) + " outside [1, " +
                                          std::to_string(p) + "]");
  }
  SubspaceBasis out;
  out.B = vecs.leftCols(u);
  normalize_signs(out.B);
  out.eigenvalues = vals.head(u).cwiseMax(0.0);
  if (u < p) {
    const double scale = std::max(1.0, std::abs(vals[0]));
    out.degenerate = std::abs(vals[u - 1] - vals[u]) <= 1e-12 * scale;
  }
  return out;
}

inline SubspaceBasis top_eigenvectors(const Matrix& W, Index u) {
  if (W.rows() != W.cols()) throw Error(ErrorKind::shape, "top_eigenvectors needs a square matrix");
  if (u < 1 || u > W.rows()) {
    throw Error(ErrorKind::parameter, "subspace dimension " + std::to_string(u) + " outside [1, " +
                                          std::to_string(W.rows()) + "]");
  }
  const auto [vals, vecs] = sorted_eigen(W);
  return basis_from_spectrum(vals, vecs, u);
}

inline SubspaceBasis top_eigenvectors(const GkdrMatrix& W, Index u) { return top_eigenvectors(W.W, u); }

/// Row-wise reduced coordinates V = X B.
inline Matrix project(const Matrix& X, const SubspaceBasis& basis) {
  if (X.cols() != basis.p()) {
    throw Error(ErrorKind::shape, "project: covariates have " + std::to_string(X.cols()) +
                                      " columns, basis expects " + std::to_string(basis.p()));
  }
  return X * basis.B;
}

/// Pseudo-outcomes for a set of training rows (re-estimated or reused nuisances).
using PseudoProvider = std::function<Vector(const std::vector<Index>& rows)>;
/// Held-out value of a rule fitted on `train` with the given basis.
using ReductionScorer =
    std::function<double(const std::vector<Index>& train, const std::vector<Index>& held, const SubspaceBasis&)>;

struct ReductionCell {
  double epsilon = 0.0;
  Index u = 0;
  double score = 0.0;  // mean held-out value; -inf when a fold failed
};

struct ReductionSelection {
  SubspaceBasis basis;
  double epsilon = 0.0;
  Index u = 0;
  std::vector<ReductionCell> cells;
};

/// Cross-validated choice of (epsilon, u): every cell is scored by the mean
/// held-out value of the downstream rule; the maximiser wins, ties toward
/// smaller u, then larger epsilon. The basis is refitted on all rows.
inline ReductionSelection select_reduction(const Matrix& X, const PseudoProvider& pseudo,
                                           std::optional<Bandwidth> bw, const std::vector<double>& epsilon_grid,
                                           const std::vector<Index>& u_grid, int cv_folds, std::uint64_t seed,
                                           const ReductionScorer& scorer, const GkdrOptions& opts = {}) {
  if (epsilon_grid.empty() || u_grid.empty()) throw Error(ErrorKind::parameter, "reduction grids must be nonempty");
  for (Index u : u_grid) {
    if (u < 1 || u > X.cols()) throw Error(ErrorKind::parameter, "u grid value outside [1, p]");
  }
  const Index n = X.rows();
  std::vector<ReductionCell> cells;
  for (double e : epsilon_grid) for (Index u : u_grid) cells.push_back({e, u, 0.0});

  const bool single = cells.size() == 1;
  if (!single) {
    const auto labels = assign_folds(n, cv_folds, seed);
    std::vector<Index> tr, ho;
    for (int k = 0; k < cv_folds; ++k) {
      split_fold(labels, k, tr, ho);
      const Matrix Xtr = subset_rows(X, tr);
      const Vector ztr = pseudo(tr);
      for (std::size_t ei = 0; ei < epsilon_grid.size(); ++ei) {
        std::optional<std::pair<Vector, Matrix>> spectrum;
        try {
          spectrum = sorted_eigen(gkdr_matrix(Xtr, ztr, bw, epsilon_grid[ei], opts).W);
        } catch (const Error&) {
          spectrum.reset();
        }
        for (std::size_t ui = 0; ui < u_grid.size(); ++ui) {
          ReductionCell& cell = cells[ei * u_grid.size() + ui];
          if (!spectrum || !std::isfinite(cell.score)) {
            cell.score = -std::numeric_limits<double>::infinity();
            continue;
          }
          try {
            const SubspaceBasis b = basis_from_spectrum(spectrum->first, spectrum->second, cell.u);
            const double v = scorer(tr, ho, b);
            cell.score = std::isfinite(v) ? cell.score + v / cv_folds : -std::numeric_limits<double>::infinity();
          } catch (const Error&) {
            cell.score = -std::numeric_limits<double>::infinity();
          }
        }
      }
    }
  }

  std::size_t best = 0;
  for (std::size_t c = 1; c < cells.size(); ++c) {
    const auto& a = cells[c];
    const auto& b = cells[best];
    if (a.score > b.score || (a.score == b.score && (a.u < b.u || (a.u == b.u && a.epsilon > b.epsilon)))) {
      best = c;
    }
  }
  ReductionSelection sel;
  sel.cells = cells;
  sel.epsilon = cells[best].epsilon;
  sel.u = cells[best].u;
  std::vector<Index> all(static_cast<std::size_t>(n));
  std::iota(all.begin(), all.end(), Index{0});
  sel.basis = top_eigenvectors(gkdr_matrix(X, pseudo(all), bw, sel.epsilon, opts), sel.u);
  return sel;
}

}  // namespace dol
