#pragma once

#include <memory>
#include <vector>

#include "bflu/butterfly.hpp"
#include "bflu/geometry.hpp"
#include "bflu/kernels.hpp"
#include "bflu/operator.hpp"

namespace bflu {

/// One block of a hierarchically partitioned matrix. Coordinates are global
/// tree-order indices. Partitioned nodes have children 11, 12, 21, 22.
struct HNode {
  enum class Kind { partitioned, dense, butterfly, lu };

  Kind kind = Kind::dense;
  int observer = 0;  // row cluster
  int source = 0;    // column cluster
  int level = 0;
  Index row0 = 0, col0 = 0, rows = 0, cols = 0;
  std::vector<HNode> children;

  CMat dense;                                   // dense leaf
  std::shared_ptr<const Butterfly> butterfly;   // butterfly leaf
  std::shared_ptr<const Eigen::PartialPivLU<CMat>> lu;  // factorized diagonal leaf

  bool is_leaf() const { return kind != Kind::partitioned; }
  const HNode& child(int a, int b) const { return children[static_cast<std::size_t>(2 * a + b)]; }
  HNode& child(int a, int b) { return children[static_cast<std::size_t>(2 * a + b)]; }

  /// A(r0:r0+nr, c0:c0+nc) * X in global coordinates; the ranges must lie
  /// inside the node and be unions of leaf clusters.
  CMat apply_block(Index r0, Index nr, Index c0, Index nc, const CMat& X) const;
  CMat apply_block_transpose(Index r0, Index nr, Index c0, Index nc, const CMat& X) const;
  CMat apply(const CMat& X) const { return apply_block(row0, rows, col0, cols, X); }
  CMat apply_transpose(const CMat& X) const { return apply_block_transpose(row0, rows, col0, cols, X); }

  std::int64_t stored_entries() const;
  Index max_butterfly_rank() const;
  Index count(Kind k) const;
};

/// True if both trees have the same tiling and leaf kinds agree up to
/// dense/lu.
bool same_tiling(const HNode& a, const HNode& b);

struct AssembleOptions {
  double tol = 1e-4;
  double chi_s = 3.0;
  Index r_max = 256;
  std::uint64_t seed = 1;
};

class HMatrix {
 public:
  /// `kernel` is indexed in original point order.
  static HMatrix assemble(const KernelSpec& kernel, std::shared_ptr<const ClusterTree> tree,
                          const BlockPartition& partition, const AssembleOptions& opts);

  Index size() const { return root_->rows; }
  const HNode& root() const { return *root_; }
  const ClusterTree& tree() const { return *tree_; }
  std::shared_ptr<const ClusterTree> tree_ptr() const { return tree_; }
  const AssembleOptions& options() const { return opts_; }

  /// Tree-ordered action.
  CMat apply(const CMat& X) const;
  CMat apply_transpose(const CMat& X) const;
  /// Action in original point order.
  CMat apply_original(const CMat& X) const;

  std::int64_t stored_entries() const { return root_->stored_entries(); }
  Index max_rank() const { return root_->max_butterfly_rank(); }
  LinearOperator as_operator() const;

 private:
  std::shared_ptr<const HNode> root_;
  std::shared_ptr<const ClusterTree> tree_;
  AssembleOptions opts_;
};

/// Entry budget C * N * log2(N)^2 used by the storage checks.
double nlog2sq(Index n);

}  // namespace bflu
