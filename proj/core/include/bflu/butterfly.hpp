#pragma once

#include <cstdint>
#include <iosfwd>
#include <vector>

#include "bflu/geometry.hpp"
#include "bflu/kernels.hpp"
#include "bflu/types.hpp"

namespace bflu {

/// Multilevel butterfly factorization B = P * R^L * ... * R^1 * Q.
///
/// Rows are split into 2^L observer leaves and columns into 2^L source
/// leaves. At level d (0..L) there are 2^d observer groups i and 2^(L-d)
/// source groups k, and pair (i, k) is stored at position p = i * 2^(L-d) + k.
///
///  - Q[k]      : rank(0, k) x n_k           (level 0, one per source leaf)
///  - R[d-1][p] : rank(d, p) x (rank(d-1, p1) + rank(d-1, p2)) for d = 1..L,
///                where p1, p2 are the pairs (i/2, 2k) and (i/2, 2k+1)
///  - P[i]      : m_i x rank(L, i)            (level L, one per observer leaf)
///
/// The row permutation that makes each R^d block diagonal is implicit in
/// the pair indexing. Ranks vary per block; L = 0 is a plain low-rank product.
class Butterfly {
 public:
  Butterfly() = default;

  /// All-zero butterfly (every rank 0) with the given leaf offsets.
  static Butterfly zero(int levels, std::vector<Index> row_offsets, std::vector<Index> col_offsets);

  int levels() const { return levels_; }
  Index rows() const { return row_offsets_.empty() ? 0 : row_offsets_.back(); }
  Index cols() const { return col_offsets_.empty() ? 0 : col_offsets_.back(); }
  Index leaves() const { return Index{1} << levels_; }

  const std::vector<Index>& row_offsets() const { return row_offsets_; }
  const std::vector<Index>& col_offsets() const { return col_offsets_; }

  /// Row range of observer group i at level d.
  std::pair<Index, Index> observer_range(int d, Index i) const;
  /// Column range of source group k at level d.
  std::pair<Index, Index> source_range(int d, Index k) const;

  Index rank(int d, Index p) const;

  std::vector<CMat>& P() { return P_; }
  std::vector<CMat>& Q() { return Q_; }
  std::vector<std::vector<CMat>>& R() { return R_; }
  const std::vector<CMat>& P() const { return P_; }
  const std::vector<CMat>& Q() const { return Q_; }
  const std::vector<std::vector<CMat>>& R() const { return R_; }

  /// Throws InvalidInput if block shapes do not chain.
  void check() const;

  CMat apply(const CMat& X) const;
  CMat apply_transpose(const CMat& X) const;

  /// Sub-block B(r0:r0+nr, c0:c0+nc) applied to X (nc x q). Ranges must be
  /// unions of consecutive leaves; blocks outside the ranges are skipped.
  CMat apply_sub(Index r0, Index nr, Index c0, Index nc, const CMat& X) const;
  /// Transpose of the same sub-block applied to X (nr x q).
  CMat apply_transpose_sub(Index r0, Index nr, Index c0, Index nc, const CMat& X) const;

  /// Scale in place.
  void scale(Complex s);

  std::int64_t stored_entries() const;

 private:
  int levels_ = 0;
  std::vector<Index> row_offsets_{0};
  std::vector<Index> col_offsets_{0};
  std::vector<CMat> P_;
  std::vector<CMat> Q_;
  std::vector<std::vector<CMat>> R_;
};

struct ButterflyStats {
  std::int64_t entries = 0;
  Index max_rank = 0;
  std::vector<Index> per_level_ranks;  // max rank at levels 0..L
};

ButterflyStats storage_stats(const Butterfly& b);

/// Explicit product of the factors; refuses above `max_entries` (default 16M).
CMat to_dense(const Butterfly& b, std::int64_t max_entries = 16'000'000);

struct DirectOptions {
  double tol = 1e-4;
  double chi_s = 3.0;
  Index r_max = 256;
  std::uint64_t seed = 1;
};

/// Butterfly compression of the kernel block (rows of obs_node, columns of
/// src_node) with `levels` levels. The kernel must be indexed in tree order.
Butterfly construct_direct(const KernelSpec& kernel, const ClusterTree& tree, int src_node, int obs_node,
                           int levels, const DirectOptions& opts);

/// Little-endian binary serialization, format version 1.
void write_butterfly(std::ostream& out, const Butterfly& b);
Butterfly read_butterfly(std::istream& in);

}  // namespace bflu
