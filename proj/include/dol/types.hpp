#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <cstdio>
#include <stdexcept>
#include <string>
#include <vector>

namespace dol {

using Index = Eigen::Index;
using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

enum class ErrorKind {
  shape,
  parameter,
  degenerate,
  solver,
  numerical,
  index,
  separation,
  parse,
  undefined,
  config,
};

inline const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::shape: return "shape";
    case ErrorKind::parameter: return "parameter";
    case ErrorKind::degenerate: return "degenerate";
    case ErrorKind::solver: return "solver";
    case ErrorKind::numerical: return "numerical";
    case ErrorKind::index: return "index";
    case ErrorKind::separation: return "separation";
    case ErrorKind::parse: return "parse";
    case ErrorKind::undefined: return "undefined";
    case ErrorKind::config: return "config";
  }
  return "unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(std::string(to_string(kind)) + " error: " + what), kind_(kind), detail_(what) {}

  ErrorKind kind() const noexcept { return kind_; }
  const std::string& detail() const noexcept { return detail_; }

  // Same kind, message prefixed with the pipeline stage that raised it.
  Error with_stage(const std::string& stage) const { return Error(kind_, "[" + stage + "] " + detail_); }

  // Input/configuration problems map to 2, numerical failures to 3.
  int exit_code() const noexcept {
    switch (kind_) {
      case ErrorKind::solver:
      case ErrorKind::numerical:
      case ErrorKind::separation:
      case ErrorKind::degenerate:
      case ErrorKind::undefined:
        return 3;
      default:
        return 2;
    }
  }

 private:
  ErrorKind kind_;
  std::string detail_;
};

/// Solver failure that carries the last convergence measure it reached.
class SolverError : public Error {
 public:
  SolverError(const std::string& what, double residual)
      : Error(ErrorKind::solver, what + " (last residual " + format_residual(residual) + ")"),
        residual_(residual) {}
  double residual() const noexcept { return residual_; }

 private:
  static std::string format_residual(double r) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.3e", r);
    return buf;
  }

  double residual_;
};

/// Observed triplets (X, A, Y). Rows of X are units; A is +1/-1.
struct Dataset {
  Matrix X;
  Vector A;
  Vector Y;
  std::uint64_t seed = 0;

  Index n() const { return X.rows(); }
  Index p() const { return X.cols(); }

  void validate() const {
    if (A.size() != X.rows() || Y.size() != X.rows()) {
      throw Error(ErrorKind::shape, "dataset columns have inconsistent lengths");
    }
    for (Index i = 0; i < A.size(); ++i) {
      if (A[i] != 1.0 && A[i] != -1.0) {
        throw Error(ErrorKind::parse, "treatment at row " + std::to_string(i) + " is not +1/-1");
      }
    }
    if (!X.allFinite() || !Y.allFinite()) {
      throw Error(ErrorKind::parse, "dataset contains missing or non-finite values");
    }
  }

  Dataset subset(const std::vector<Index>& rows) const {
    Dataset out;
    out.X.resize(static_cast<Index>(rows.size()), X.cols());
    out.A.resize(static_cast<Index>(rows.size()));
    out.Y.resize(static_cast<Index>(rows.size()));
    for (std::size_t k = 0; k < rows.size(); ++k) {
      const auto r = rows[k];
      out.X.row(static_cast<Index>(k)) = X.row(r);
      out.A[static_cast<Index>(k)] = A[r];
      out.Y[static_cast<Index>(k)] = Y[r];
    }
    out.seed = seed;
    return out;
  }
};

/// sign with the tie resolved to +1.
inline double sign_plus(double v) { return v >= 0.0 ? 1.0 : -1.0; }

inline Vector subset(const Vector& v, const std::vector<Index>& rows) {
  Vector out(static_cast<Index>(rows.size()));
  for (std::size_t k = 0; k < rows.size(); ++k) out[static_cast<Index>(k)] = v[rows[k]];
  return out;
}

inline Matrix subset_rows(const Matrix& m, const std::vector<Index>& rows) {
  Matrix out(static_cast<Index>(rows.size()), m.cols());
  for (std::size_t k = 0; k < rows.size(); ++k) out.row(static_cast<Index>(k)) = m.row(rows[k]);
  return out;
}

}  // namespace dol
