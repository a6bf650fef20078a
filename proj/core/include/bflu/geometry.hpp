#pragma once

#include <array>
#include <filesystem>
#include <string>
#include <vector>

#include "bflu/types.hpp"

namespace bflu {

using Point = std::array<double, 3>;

/// Point set in 2D or 3D. The third coordinate of 2D points is always zero.
struct PointCloud {
  int dimension = 2;
  std::vector<Point> points;

  Index size() const { return static_cast<Index>(points.size()); }
  void validate() const;
};

double distance(const Point& a, const Point& b);

struct ClusterNode {
  int level = 0;
  Index begin = 0;  // tree-ordered index range [begin, end)
  Index end = 0;
  Point center{};
  double radius = 0.0;
  int parent = -1;
  std::array<int, 2> children{-1, -1};

  Index size() const { return end - begin; }
  bool is_leaf() const { return children[0] < 0; }
};

/// Balanced binary geometric tree over the unknowns. Node 0 is the root.
class ClusterTree {
 public:
  ClusterTree() = default;

  const std::vector<ClusterNode>& nodes() const { return nodes_; }
  const ClusterNode& node(int id) const { return nodes_[static_cast<std::size_t>(id)]; }
  int root() const { return 0; }
  int depth() const { return depth_; }
  Index size() const { return static_cast<Index>(perm_.size()); }
  Index leaf_size() const { return leaf_size_; }

  /// perm()[tree_index] = original index.
  const std::vector<Index>& perm() const { return perm_; }
  /// inverse_perm()[original_index] = tree index.
  const std::vector<Index>& inverse_perm() const { return iperm_; }

  /// Node ids at a given level, ordered by index range.
  std::vector<int> level_nodes(int level) const;
  /// Descendants of `id` that sit `down` levels below it, in index order.
  std::vector<int> descendants(int id, int down) const;

  /// Points reordered into tree order.
  PointCloud tree_ordered(const PointCloud& cloud) const;

  template <class V>
  V to_tree_order(const V& original) const {
    V out(original.rows(), original.cols());
    for (Index t = 0; t < size(); ++t) out.row(t) = original.row(perm_[static_cast<std::size_t>(t)]);
    return out;
  }
  template <class V>
  V to_original_order(const V& tree) const {
    V out(tree.rows(), tree.cols());
    for (Index t = 0; t < size(); ++t) out.row(perm_[static_cast<std::size_t>(t)]) = tree.row(t);
    return out;
  }

 private:
  friend ClusterTree build_cluster_tree(const PointCloud&, Index);
  std::vector<ClusterNode> nodes_;
  std::vector<Index> perm_;
  std::vector<Index> iperm_;
  int depth_ = 0;
  Index leaf_size_ = 1;
};

/// Depth of the tree built for `n` points: ceil(log2(max(1, n / leaf_size))).
int tree_depth(Index n, Index leaf_size);

ClusterTree build_cluster_tree(const PointCloud& cloud, Index leaf_size);

struct BlockPair {
  int level = 0;
  int source = 0;    // column cluster
  int observer = 0;  // row cluster
};

struct BlockPartition {
  std::vector<BlockPair> far_pairs;
  std::vector<BlockPair> near_pairs;
  double chi = 2.0;
};

/// Far-field test between two same-level clusters.
bool is_far(const ClusterNode& a, const ClusterNode& b, double chi);

BlockPartition build_block_partition(const ClusterTree& tree, double chi);

// Built-in shapes.
PointCloud make_circle(double radius, Index n);
PointCloud make_arc(double radius, double angle_begin, double angle_end, Index n);
PointCloud make_sphere(double radius, Index n);

/// Shape descriptor: "circle:R:n", "arc:R:a0:a1:n", "sphere:R:n" or "file:PATH".
PointCloud generate_geometry(const std::string& descriptor);

PointCloud load_geometry(const std::filesystem::path& path);
void save_geometry(const PointCloud& cloud, const std::filesystem::path& path);

}  // namespace bflu
