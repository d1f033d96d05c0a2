#include "strtf/eval.hpp"

#include <algorithm>
#include <numeric>

#include <fmt/format.h>

namespace strtf {

MatchResult best_permutation(const Matrix& rho) {
  const Index k = rho.rows();
  if (rho.cols() != k) throw ShapeError("best_permutation: correlation matrix must be square");
  if (k < 1) throw std::invalid_argument("best_permutation: empty correlation matrix");
  if (k > 8) {
    throw std::invalid_argument(
        fmt::format("best_permutation: K = {} exceeds the exhaustive-search limit of 8", k));
  }
  std::vector<int> perm(static_cast<std::size_t>(k));
  std::iota(perm.begin(), perm.end(), 0);
  std::vector<int> best = perm;
  double best_sum = -1.0;
  do {
    double s = 0.0;
    for (Index i = 0; i < k; ++i) s += rho(i, perm[static_cast<std::size_t>(i)]);
    if (s > best_sum) {
      best_sum = s;
      best = perm;
    }
  } while (std::next_permutation(perm.begin(), perm.end()));
  MatchResult out;
  out.correlation = rho;
  out.permutation = best;
  out.signs.assign(static_cast<std::size_t>(k), 1);
  out.mac = best_sum / static_cast<double>(k);
  return out;
}

MatchResult match_sources(const Matrix& estimate, const Matrix& reference) {
  if (estimate.cols() != reference.cols()) {
    throw ShapeError(fmt::format("match_sources: {} estimated vs {} reference sources",
                                 estimate.cols(), reference.cols()));
  }
  const Matrix signed_corr = signed_correlation(estimate, reference);
  MatchResult out = best_permutation(signed_corr.cwiseAbs());
  for (std::size_t k = 0; k < out.permutation.size(); ++k) {
    out.signs[k] = signed_corr(static_cast<Index>(k), out.permutation[k]) < 0.0 ? -1 : 1;
  }
  return out;
}

Matrix zscore_columns(const Matrix& x) {
  Matrix out = x.rowwise() - x.colwise().mean();
  for (Index j = 0; j < out.cols(); ++j) {
    const double sd = std::sqrt(out.col(j).squaredNorm() / static_cast<double>(out.rows()));
    if (sd > 0.0) {
      out.col(j) /= sd;
    } else {
      out.col(j).setZero();
    }
  }
  return out;
}

Matrix align_and_normalize(const Matrix& estimate, const Matrix& reference,
                           const MatchResult& match) {
  const Index k = estimate.cols();
  if (reference.cols() != k || reference.rows() != estimate.rows() ||
      static_cast<Index>(match.permutation.size()) != k) {
    throw ShapeError("align_and_normalize: match does not fit the estimate/reference shapes");
  }
  Matrix aligned(estimate.rows(), k);
  for (Index i = 0; i < k; ++i) {
    const auto slot = static_cast<std::size_t>(i);
    const double sign = match.signs.empty() ? 1.0 : match.signs[slot];
    aligned.col(match.permutation[slot]) = sign * estimate.col(i);
  }
  return zscore_columns(aligned);
}

double off_diagonal_energy(std::span<const Matrix> matrices) {
  double total = 0.0;
  for (const Matrix& m : matrices) {
    total += m.squaredNorm() - m.diagonal().squaredNorm();
  }
  return total;
}

JointDiagonalization joint_diagonalize(std::vector<Matrix> matrices, double angle_tol,
                                       int max_sweeps, bool track_history) {
  if (matrices.empty()) throw std::invalid_argument("joint_diagonalize: no matrices");
  const Index k = matrices.front().rows();
  JointDiagonalization out;
  out.rotation = Matrix::Identity(k, k);
  if (track_history) out.history.push_back(off_diagonal_energy(matrices));
  for (int sweep = 0; sweep < max_sweeps; ++sweep) {
    double max_angle = 0.0;
    for (Index p = 0; p + 1 < k; ++p) {
      for (Index q = p + 1; q < k; ++q) {
        // Closed-form optimal Givens angle for the (p, q) plane.
        double g11 = 0.0, g12 = 0.0, g22 = 0.0;
        for (const Matrix& m : matrices) {
          const double h1 = m(p, p) - m(q, q);
          const double h2 = m(p, q) + m(q, p);
          g11 += h1 * h1;
          g12 += h1 * h2;
          g22 += h2 * h2;
        }
        const double ton = g11 - g22;
        const double toff = 2.0 * g12;
        const double theta = 0.5 * std::atan2(toff, ton + std::hypot(ton, toff));
        max_angle = std::max(max_angle, std::abs(theta));
        if (std::abs(theta) <= angle_tol) continue;
        const double c = std::cos(theta), s = std::sin(theta);
        for (Matrix& m : matrices) {
          const Eigen::RowVectorXd rp = m.row(p), rq = m.row(q);
          m.row(p) = c * rp + s * rq;
          m.row(q) = -s * rp + c * rq;
          const Vector cp = m.col(p), cq = m.col(q);
          m.col(p) = c * cp + s * cq;
          m.col(q) = -s * cp + c * cq;
        }
        const Vector vp = out.rotation.col(p), vq = out.rotation.col(q);
        out.rotation.col(p) = c * vp + s * vq;
        out.rotation.col(q) = -s * vp + c * vq;
        if (track_history) out.history.push_back(off_diagonal_energy(matrices));
      }
    }
    out.sweeps = sweep + 1;
    if (max_angle < angle_tol) break;
  }
  out.diagonalized = std::move(matrices);
  return out;
}

Whitened whiten(const Matrix& observed, int sources) {
  const Index m = observed.cols();
  if (sources < 1 || sources > m) {
    throw std::invalid_argument(
        fmt::format("whiten: cannot whiten {} channels to {} sources", m, sources));
  }
  Whitened out;
  out.mean = observed.colwise().mean().transpose();
  const Matrix centered = observed.rowwise() - out.mean.transpose();
  Matrix cov = centered.transpose() * centered / static_cast<double>(observed.rows());
  cov = 0.5 * (cov + cov.transpose());
  Eigen::SelfAdjointEigenSolver<Matrix> eig(cov);
  if (eig.info() != Eigen::Success) throw NumericError("whiten: eigendecomposition failed");
  // Eigenvalues ascend; keep the top `sources`.
  const Vector values = eig.eigenvalues().tail(sources).reverse();
  Matrix vectors = eig.eigenvectors().rightCols(sources).rowwise().reverse();
  const double largest = eig.eigenvalues().maxCoeff();
  if (!(values.minCoeff() > 1e-12 * std::max(largest, 1e-300))) {
    throw NumericError("whiten: covariance is rank deficient for the requested source count");
  }
  for (Index j = 0; j < vectors.cols(); ++j) {
    Index arg = 0;
    vectors.col(j).cwiseAbs().maxCoeff(&arg);
    if (vectors(arg, j) < 0.0) vectors.col(j) *= -1.0;
  }
  out.whitening = values.cwiseSqrt().cwiseInverse().asDiagonal() * vectors.transpose();
  out.data = centered * out.whitening.transpose();
  return out;
}

BaselineResult joint_diag_baseline(const Matrix& observed, std::span<const Index> lags,
                                   int sources) {
  if (lags.empty()) throw std::invalid_argument("joint_diag_baseline: empty lag set");
  if (observed.cols() < sources) {
    throw std::invalid_argument("joint_diag_baseline: need at least as many channels as sources");
  }
  const Whitened w = whiten(observed, sources);
  std::vector<Matrix> covs;
  for (Index lag : lags) covs.push_back(lagged_covariance(w.data, lag));
  JointDiagonalization jd = joint_diagonalize(std::move(covs));

  BaselineResult out;
  out.rotation = jd.rotation;
  out.whitening = w.whitening;
  out.sources = w.data * jd.rotation;
  out.off_diagonality = off_diagonal_energy(jd.diagonalized);
  out.sweeps = jd.sweeps;
  const Vector diag = jd.diagonalized.front().diagonal();
  for (Index i = 0; i < diag.size(); ++i) {
    for (Index j = i + 1; j < diag.size(); ++j) {
      if (std::abs(diag(i) - diag(j)) < 1e-3) out.identifiable = false;
    }
  }
  return out;
}

}  // namespace strtf
