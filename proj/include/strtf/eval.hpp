#pragma once

#include <cmath>
#include <span>
#include <stdexcept>
#include <vector>

#include <Eigen/Dense>

#include "strtf/numerics/tensor.hpp"

namespace strtf {

/// Post-hoc assignment of estimated sources to references.
struct MatchResult {
  Matrix correlation;             // |corr(s_hat_k, x_j)|, K x K
  std::vector<int> permutation;   // estimate k -> reference permutation[k]
  std::vector<int> signs;         // sign of the signed matched correlation, +1 when unset
  double mac = 0.0;               // mean absolute matched correlation
};

/// Pearson correlation between the columns of `a` and `b` (signed). A
/// constant column yields zeros in its row or column.
template <typename DerivedA, typename DerivedB>
Matrix signed_correlation(const Eigen::MatrixBase<DerivedA>& a, const Eigen::MatrixBase<DerivedB>& b) {
  if (a.rows() != b.rows()) throw ShapeError("correlation: row counts differ");
  if (a.rows() < 2) throw std::invalid_argument("correlation: need at least two samples");
  Matrix ca = a.template cast<double>();
  Matrix cb = b.template cast<double>();
  ca.rowwise() -= ca.colwise().mean();
  cb.rowwise() -= cb.colwise().mean();
  const Eigen::RowVectorXd na = ca.colwise().norm();
  const Eigen::RowVectorXd nb = cb.colwise().norm();
  Matrix out = ca.transpose() * cb;
  for (Index i = 0; i < out.rows(); ++i) {
    for (Index j = 0; j < out.cols(); ++j) {
      const double denom = na(i) * nb(j);
      out(i, j) = denom > 0.0 ? std::clamp(out(i, j) / denom, -1.0, 1.0) : 0.0;
    }
  }
  return out;
}

template <typename DerivedA, typename DerivedB>
Matrix correlation_matrix(const Eigen::MatrixBase<DerivedA>& estimate,
                          const Eigen::MatrixBase<DerivedB>& reference) {
  return signed_correlation(estimate, reference).cwiseAbs();
}

/// Exhaustive maximizer of sum_k rho(k, pi(k)) for K <= 8; ties resolve to the
/// lexicographically smallest permutation.
MatchResult best_permutation(const Matrix& rho);

/// Correlation, best permutation and matched signs in one call.
MatchResult match_sources(const Matrix& estimate, const Matrix& reference);

/// Column-wise z-score; constant columns become zeros.
Matrix zscore_columns(const Matrix& x);

/// Reorders estimate columns to reference order, flips signs so each matched
/// correlation is nonnegative, then z-scores. Column j of the result is the
/// estimate matched to reference j.
Matrix align_and_normalize(const Matrix& estimate, const Matrix& reference,
                           const MatchResult& match);

/// Symmetrized lag-`lag` covariance (1/(T-lag)) sum_t x_t x_{t+lag}^T of
/// zero-mean columns.
template <typename Derived>
Matrix lagged_covariance(const Eigen::MatrixBase<Derived>& x, Index lag) {
  const Index t = x.rows();
  if (lag < 0 || lag >= t) throw std::invalid_argument("lagged_covariance: lag must be in [0, T)");
  const Index n = t - lag;
  Matrix g = x.topRows(n).transpose() * x.bottomRows(n);
  g /= static_cast<double>(n);
  return 0.5 * (g + g.transpose());
}

/// Linear second-order baseline: whitening plus Jacobi joint diagonalization.
struct BaselineResult {
  Matrix sources;     // T x K
  Matrix rotation;    // K x K orthogonal
  Matrix whitening;   // K x m, applied to centered observations
  double off_diagonality = 0.0;
  int sweeps = 0;
  bool identifiable = true;  // false when the lag diagonal has a gap below 1e-3
};

struct JointDiagonalization {
  Matrix rotation;
  std::vector<Matrix> diagonalized;
  int sweeps = 0;
  /// Summed off-diagonal energy after each accepted rotation (first entry is
  /// the starting value).
  std::vector<double> history;
};

double off_diagonal_energy(std::span<const Matrix> matrices);

/// Orthogonal Q minimizing sum_i ||offdiag(Q^T M_i Q)||_F^2 by Jacobi sweeps.
JointDiagonalization joint_diagonalize(std::vector<Matrix> matrices, double angle_tol = 1e-10,
                                       int max_sweeps = 100, bool track_history = false);

/// Centers, whitens to `sources` dimensions (top eigenpairs, largest-magnitude
/// entry of each eigenvector positive) and reports the whitening.
struct Whitened {
  Matrix data;       // T x K
  Matrix whitening;  // K x m
  Vector mean;       // m
};
Whitened whiten(const Matrix& observed, int sources);

inline const std::vector<Index> kDefaultLags = {1, 2, 3, 5, 8};

BaselineResult joint_diag_baseline(const Matrix& observed, std::span<const Index> lags,
                                   int sources);

}  // namespace strtf
