#pragma once

// Matrix-free least squares: CGLS on abstract linear operators, the
// priorconditioned (whitened) alpha step, and a dense QR solver.

#include "hbloc/core.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

namespace hbloc {

struct LinearOperator {
  Index nrows = 0;
  Index ncols = 0;
  std::function<Vector(const Vector&)> apply;
  std::function<Vector(const Vector&)> apply_transpose;

  static LinearOperator from_matrix(const Matrix& A) {
    // Captures by reference; the matrix must outlive the operator.
    return {A.rows(), A.cols(), [&A](const Vector& x) -> Vector { return A * x; },
            [&A](const Vector& y) -> Vector { return A.transpose() * y; }};
  }
};

enum class Verbosity { quiet, summary, iterations };

/// identity_penalized: minimize (1/2s^2)||b - M D^1/2 w||^2 + 1/2||w||^2.
/// truncated: CGLS on s^-1 M D^1/2 w = s^-1 b, regularized only by max_iters.
enum class Regularization { identity_penalized, truncated };

struct SolverConfig {
  int max_iters = 200;
  double rel_residual_tol = 1e-6;
  Verbosity verbosity = Verbosity::quiet;
  Regularization regularization = Regularization::identity_penalized;
  /// Replace CGLS by a Cholesky factorization of the whitened normal system.
  bool direct = false;

  void validate() const {
    if (max_iters < 1) throw DomainError("SolverConfig: max_iters must be >= 1");
    if (!(rel_residual_tol > 0.0)) throw DomainError("SolverConfig: rel_residual_tol must be > 0");
  }

  /// Inner-solve default for the MAP iteration: min(200, problem size), tol 1e-6.
  static SolverConfig for_problem(Index unknowns) {
    SolverConfig c;
    c.max_iters = static_cast<int>(std::min<Index>(200, std::max<Index>(1, unknowns)));
    return c;
  }

  static SolverConfig exact() {
    SolverConfig c;
    c.direct = true;
    return c;
  }
};

struct CglsResult {
  Vector x;
  int iterations = 0;
  std::vector<double> residual_history;  ///< ||b - A x_k||, k = 0..iterations
  bool converged = false;
  bool zero_operator = false;  ///< A^T b == 0 with b != 0
};

inline CglsResult cgls(const LinearOperator& A, const Vector& b, const SolverConfig& cfg) {
  cfg.validate();
  require_dims(b.size() == A.nrows, "cgls: rhs size mismatch");
  CglsResult out;
  out.x = Vector::Zero(A.ncols);
  Vector r = b;
  out.residual_history.push_back(r.norm());
  if (r.squaredNorm() == 0.0) {
    out.converged = true;
    return out;
  }
  Vector s = A.apply_transpose(r);
  const double s0 = s.norm();
  if (s0 == 0.0) {
    out.zero_operator = true;
    return out;
  }
  Vector p = s;
  double gamma = s.squaredNorm();
  for (int k = 0; k < cfg.max_iters; ++k) {
    const Vector q = A.apply(p);
    const double delta = q.squaredNorm();
    if (delta == 0.0) break;
    const double a = gamma / delta;
    out.x += a * p;
    r -= a * q;
    s = A.apply_transpose(r);
    const double gamma_new = s.squaredNorm();
    out.iterations = k + 1;
    out.residual_history.push_back(r.norm());
    if (std::sqrt(gamma_new) <= cfg.rel_residual_tol * s0) {
      out.converged = true;
      break;
    }
    p = s + (gamma_new / gamma) * p;
    gamma = gamma_new;
  }
  return out;
}

/// Exact least squares minimizer by column-pivoted Householder QR.
inline Vector dense_lsq(const Matrix& A, const Vector& b) {
  require_dims(A.rows() == b.size(), "dense_lsq: rhs size mismatch");
  Eigen::ColPivHouseholderQR<Matrix> qr(A);
  if (qr.rank() < A.cols())
    throw NumericalError("dense_lsq: matrix is rank deficient (rank " + std::to_string(qr.rank()) + " of " +
                         std::to_string(A.cols()) + " columns)");
  return qr.solve(b);
}

/// Operator of the whitened alpha step. With identity_penalized the operator is
/// the stacked [s^-1 M D^1/2; I], otherwise s^-1 M D^1/2 alone.
inline LinearOperator whitened_operator(const Matrix& M, double sigma, const Vector& dsqrt, Regularization reg) {
  const Index L = M.rows(), K = M.cols();
  require_dims(dsqrt.size() == K, "whitened_operator: variance size mismatch");
  const bool stacked = reg == Regularization::identity_penalized;
  const double inv_sigma = 1.0 / sigma;
  LinearOperator op;
  op.nrows = stacked ? L + K : L;
  op.ncols = K;
  op.apply = [&M, dsqrt, inv_sigma, stacked, L, K](const Vector& w) -> Vector {
    Vector y(stacked ? L + K : L);
    y.head(L).noalias() = inv_sigma * (M * dsqrt.cwiseProduct(w));
    if (stacked) y.tail(K) = w;
    return y;
  };
  op.apply_transpose = [&M, dsqrt, inv_sigma, stacked, L, K](const Vector& y) -> Vector {
    Vector w = inv_sigma * dsqrt.cwiseProduct(M.transpose() * y.head(L));
    if (stacked) w += y.tail(K);
    return w;
  };
  return op;
}

struct PriorconditionedResult {
  Vector alpha;
  int iterations = 0;
  bool converged = false;
};

/// alpha = D^1/2 w with w the solution of the whitened problem
///   (1/2s^2)||b - M D^1/2 w||^2 + 1/2||w||^2,
/// where D holds theta[group_of(i)] for coefficient i.
inline PriorconditionedResult priorconditioned_solve(const Matrix& M, const Vector& b, const NoiseModel& noise,
                                                     const Vector& theta, const VarianceGrouping& grouping,
                                                     const SolverConfig& cfg) {
  cfg.validate();
  require_dims(M.cols() == grouping.num_coefficients() && M.rows() == b.size(),
               "priorconditioned_solve: lead field does not match data/grouping");
  require_dims(theta.size() == grouping.num_groups(), "priorconditioned_solve: theta size mismatch");
  for (Index k = 0; k < theta.size(); ++k)
    if (!(theta[k] > 0.0)) throw DomainError("priorconditioned_solve: theta must be > 0");

  const Vector dsqrt = grouping.expand(theta).cwiseSqrt();
  PriorconditionedResult out;
  if (b.squaredNorm() == 0.0) {
    out.alpha = Vector::Zero(M.cols());
    out.converged = true;
    return out;
  }

  if (cfg.direct) {
    // K = s^-1 M D^1/2 and y = s^-1 b; w = K^T (K K^T + I)^-1 y = (K^T K + I)^-1 K^T y.
    const Matrix K = (M * dsqrt.asDiagonal()) / noise.sigma;
    const Vector y = b / noise.sigma;
    Vector w;
    if (K.rows() <= K.cols()) {
      Matrix S = K * K.transpose();
      S.diagonal().array() += 1.0;
      Eigen::LLT<Matrix> llt(S);
      if (llt.info() != Eigen::Success) throw NumericalError("priorconditioned_solve: data-space factorization failed");
      w = K.transpose() * llt.solve(y);
    } else {
      Matrix S = K.transpose() * K;
      S.diagonal().array() += 1.0;
      Eigen::LLT<Matrix> llt(S);
      if (llt.info() != Eigen::Success) throw NumericalError("priorconditioned_solve: factorization failed");
      w = llt.solve(K.transpose() * y);
    }
    out.alpha = dsqrt.cwiseProduct(w);
    out.converged = true;
    return out;
  }

  const auto op = whitened_operator(M, noise.sigma, dsqrt, cfg.regularization);
  Vector rhs = Vector::Zero(op.nrows);
  rhs.head(M.rows()) = b / noise.sigma;
  const auto res = cgls(op, rhs, cfg);
  out.alpha = dsqrt.cwiseProduct(res.x);
  out.iterations = res.iterations;
  out.converged = res.converged;
  return out;
}

}  // namespace hbloc
