#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include "bflu/types.hpp"

namespace bflu {

using Rng = std::mt19937_64;

/// Standard complex Gaussian entries: (a + i b) / sqrt(2), a, b ~ N(0, 1).
CMat random_gaussian(Index rows, Index cols, Rng& rng);

/// Column skeleton of M: M ~= M(:, columns) * interp.
struct Skeleton {
  std::vector<Index> columns;
  CMat interp;  // |columns| x M.cols()
  double residual = 0.0;  // ||M - M(:,C) interp||_F, exact from the QR factor
};

/// Column-pivoted QR skeletonization. Picks the smallest rank k with
/// ||R(k:,k:)||_F <= tol ||M||_F; throws RankOverflow when k > max_rank.
Skeleton rrqr_skeleton(const CMat& M, double tol, Index max_rank);

/// Truncated-SVD pseudoinverse; singular values below tol * sigma_max are dropped.
CMat pinv_trunc(const CMat& M, double tol = 1e-12);

/// Number of singular values dropped by pinv_trunc at the same tolerance.
Index pinv_dropped(const CMat& M, double tol = 1e-12);

/// Orthonormal basis (columns) for the dominant rank-k column space of M.
CMat dominant_columns(const CMat& M, Index k);
/// Rows spanning the dominant rank-k row space of M (k x M.cols()).
CMat dominant_rows(const CMat& M, Index k);

}  // namespace bflu
