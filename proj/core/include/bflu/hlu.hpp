#pragma once

#include <memory>
#include <vector>

#include "bflu/hmatrix.hpp"
#include "bflu/randomized.hpp"

namespace bflu {

struct LUOptions {
  double delta = 1e-2;      // accepted probe residual of L U against H
  double eps = 1e-3;        // per-block reconstruction target
  Index r_max = 256;
  Index c = 10;
  int level_threshold = 1;   // the iterative scheme only pays off on shallow butterflies
  int max_iter = 20;
  std::uint64_t seed = 1;
  double rank_factor = 1.2;  // reconstruction rank relative to the largest rank in H
  Index n_probe = 10;
  double pinv_tol = 1e-10;
  double rank_tol = 1e-4;    // adaptive pair ranks in non-iterative reconstructions; 0 keeps r fixed
};

struct LUStats {
  Index reconstructions = 0;
  Index iterative = 0;  // reconstructions that finished with the iterative scheme
  Index fallbacks = 0;
  Index retries = 0;
  Index escalations = 0;   // factorizer-level rank increases after a failed reconstruction
  Index working_rank = 0;  // largest working reconstruction rank
  std::vector<int> k_iter;  // per iterative reconstruction
  double worst_block_residual = 0.0;
  double probe_residual = -1.0;
};

/// Lower/upper factors sharing the tiling of the source matrix. Diagonal
/// leaves hold pivoted dense LU; child (2,1) of a diagonal node holds L21,
/// child (1,2) holds U12.
class HLUFactors {
 public:
  HLUFactors(std::shared_ptr<const HNode> root, std::shared_ptr<const ClusterTree> tree, LUStats stats);

  const HNode& root() const { return *root_; }
  std::shared_ptr<const HNode> root_ptr() const { return root_; }
  const ClusterTree& tree() const { return *tree_; }
  Index size() const { return root_->rows; }
  const LUStats& stats() const { return stats_; }

  /// Tree-ordered solve of (L U) X = B.
  CMat solve(const CMat& B) const;
  /// Same, with B and X in original point order.
  CMat solve_original(const CMat& B) const;
  /// Tree-ordered L U X.
  CMat apply(const CMat& X) const;

  std::int64_t stored_entries() const { return root_->stored_entries(); }
  Index max_rank() const { return root_->max_butterfly_rank(); }

 private:
  std::shared_ptr<const HNode> root_;
  std::shared_ptr<const ClusterTree> tree_;
  LUStats stats_;
};

/// Recursive block LU. Throws FactorizationFailure naming the block on a
/// singular leaf, a failed reconstruction or a probe residual above delta.
HLUFactors factorize(const HMatrix& H, const LUOptions& opts);

/// ||L U x - H x|| / ||H x|| on Gaussian probes.
/// Original-order solve followed by one residual-correction step against H.
CMat solve_corrected(const HLUFactors& F, const HMatrix& H, const CMat& B);

double factorization_residual(const HLUFactors& F, const HMatrix& H, Index n_probe, std::uint64_t seed);

// Solves against a factorized diagonal node (global coordinates, X has node.rows rows).
CMat lower_solve(const HNode& diag, const CMat& B);            // L^-1 B
CMat lower_solve_transpose(const HNode& diag, const CMat& B);  // L^-T B
CMat upper_solve(const HNode& diag, const CMat& B);            // U^-1 B
CMat upper_solve_transpose(const HNode& diag, const CMat& B);  // U^-T B
CMat lower_apply(const HNode& diag, const CMat& X);
CMat upper_apply(const HNode& diag, const CMat& X);

// Butterfly arithmetic, each realized by one randomized reconstruction.
Butterfly butterfly_add(const Butterfly& a, const Butterfly& b, const ReconstructionOptions& opts);

enum class Side { left, right };
/// side == left: B * A; side == right: A * B.
Butterfly butterfly_mul(const Butterfly& b, const LinearOperator& a, Side side, const ReconstructionOptions& opts);

enum class Triangle { lower, upper };
/// lower: L^-1 B with L from `diag`; upper: B U^-1.
Butterfly triangular_solve(const HNode& diag, const Butterfly& b, Triangle t, const ReconstructionOptions& opts);

}  // namespace bflu
