#include "bflu/linalg.hpp"

#include <algorithm>
#include <cmath>

namespace bflu {

CMat random_gaussian(Index rows, Index cols, Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  const double s = 1.0 / std::sqrt(2.0);
  CMat out(rows, cols);
  for (Index j = 0; j < cols; ++j)
    for (Index i = 0; i < rows; ++i) {
      const double re = normal(rng);
      const double im = normal(rng);
      out(i, j) = Complex(s * re, s * im);
    }
  return out;
}

Skeleton rrqr_skeleton(const CMat& M, double tol, Index max_rank) {
  if (M.size() == 0) throw InvalidInput("rrqr_skeleton: empty matrix");
  if (!(tol > 0.0 && tol < 1.0)) throw InvalidInput("rrqr_skeleton: tol must lie in (0, 1)");
  const Index n = M.cols();
  Skeleton sk;
  const double total = M.norm();
  if (total == 0.0) {
    sk.interp = CMat::Zero(0, n);
    return sk;
  }

  Eigen::ColPivHouseholderQR<CMat> qr(M);
  const CMat& R = qr.matrixQR();
  const Index kmax = std::min(M.rows(), n);

  // tail[k] = ||R(k:, k:)||_F^2
  std::vector<double> tail(static_cast<std::size_t>(kmax) + 1, 0.0);
  for (Index i = kmax - 1; i >= 0; --i)
    tail[static_cast<std::size_t>(i)] =
        tail[static_cast<std::size_t>(i) + 1] + R.row(i).tail(n - i).squaredNorm();

  const double target = tol * total;
  Index rank = kmax;
  for (Index k = 0; k <= kmax; ++k)
    if (std::sqrt(tail[static_cast<std::size_t>(k)]) <= target) {
      rank = k;
      break;
    }
  if (rank > max_rank)
    throw RankOverflow("rrqr_skeleton: rank " + std::to_string(rank) + " exceeds cap " +
                           std::to_string(max_rank),
                       rank);

  const auto& perm = qr.colsPermutation().indices();
  sk.columns.resize(static_cast<std::size_t>(rank));
  for (Index k = 0; k < rank; ++k) sk.columns[static_cast<std::size_t>(k)] = perm(k);
  sk.residual = std::sqrt(tail[static_cast<std::size_t>(rank)]);

  // interp(:, perm) = [I, R11^{-1} R12]
  CMat t(rank, n);
  if (rank > 0) {
    const auto R11 = R.topLeftCorner(rank, rank).triangularView<Eigen::Upper>();
    CMat r12 = R.topRightCorner(rank, n - rank);
    CMat x = R11.solve(r12);
    CMat full(rank, n);
    full.leftCols(rank).setIdentity();
    full.rightCols(n - rank) = x;
    for (Index j = 0; j < n; ++j) t.col(perm(j)) = full.col(j);
  }
  sk.interp = std::move(t);
  return sk;
}

namespace {

template <class Svd>
Index kept_rank(const Svd& svd, double tol) {
  const auto& s = svd.singularValues();
  if (s.size() == 0 || s(0) == 0.0) return 0;
  const double cut = tol * s(0);
  Index k = 0;
  while (k < s.size() && s(k) > cut) ++k;
  return k;
}

}  // namespace

CMat pinv_trunc(const CMat& M, double tol) {
  if (M.size() == 0) return CMat::Zero(M.cols(), M.rows());
  Eigen::BDCSVD<CMat> svd(M, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const Index k = kept_rank(svd, tol);
  if (k == 0) return CMat::Zero(M.cols(), M.rows());
  const auto& s = svd.singularValues();
  CMat v = svd.matrixV().leftCols(k);
  for (Index j = 0; j < k; ++j) v.col(j) /= s(j);
  return v * svd.matrixU().leftCols(k).adjoint();
}

Index pinv_dropped(const CMat& M, double tol) {
  if (M.size() == 0) return 0;
  Eigen::BDCSVD<CMat> svd(M);
  return svd.singularValues().size() - kept_rank(svd, tol);
}

CMat dominant_columns(const CMat& M, Index k) {
  k = std::min({k, M.rows(), M.cols()});
  if (k <= 0 || M.size() == 0) return CMat::Zero(M.rows(), std::max<Index>(k, 0));
  Eigen::BDCSVD<CMat> svd(M, Eigen::ComputeThinU);
  return svd.matrixU().leftCols(k);
}

CMat dominant_rows(const CMat& M, Index k) {
  k = std::min({k, M.rows(), M.cols()});
  if (k <= 0 || M.size() == 0) return CMat::Zero(std::max<Index>(k, 0), M.cols());
  Eigen::BDCSVD<CMat> svd(M, Eigen::ComputeThinV);
  CMat out = svd.matrixV().leftCols(k).adjoint();
  for (Index i = 0; i < k; ++i) out.row(i) *= svd.singularValues()(i);
  return out;
}

}  // namespace bflu
