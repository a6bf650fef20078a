#pragma once

#include <memory>

#include "bflu/butterfly.hpp"
#include "bflu/linalg.hpp"
#include "bflu/randomized.hpp"

namespace bflu::testing {

// Butterfly with Gaussian blocks, every rank r.
inline Butterfly random_butterfly(int L, Index m, Index n, Index r, std::uint64_t seed) {
  const auto shape = ButterflyShape::uniform(m, n, L);
  Butterfly b = Butterfly::zero(L, shape.row_offsets, shape.col_offsets);
  Rng rng(seed);
  for (Index i = 0; i < b.leaves(); ++i) {
    b.P()[static_cast<std::size_t>(i)] = random_gaussian(shape.row_offsets[i + 1] - shape.row_offsets[i], r, rng);
    b.Q()[static_cast<std::size_t>(i)] = random_gaussian(r, shape.col_offsets[i + 1] - shape.col_offsets[i], rng);
  }
  for (auto& level : b.R())
    for (auto& blk : level) blk = random_gaussian(r, 2 * r, rng);
  b.check();
  return b;
}

// Helmholtz block between two well separated clusters of a circle, in tree order.
struct HelmholtzBlock {
  std::shared_ptr<const ClusterTree> tree;
  KernelSpec kernel;  // tree order
  int src = 0, obs = 0;

  CMat dense() const {
    const auto& o = tree->node(obs);
    const auto& s = tree->node(src);
    return eval_block(kernel, o.begin, o.size(), s.begin, s.size());
  }
};

inline HelmholtzBlock helmholtz_block(Index n, double k, Index leaf, int level) {
  const auto cloud = make_circle(1.0, n);
  HelmholtzBlock h;
  h.tree = std::make_shared<const ClusterTree>(build_cluster_tree(cloud, leaf));
  h.kernel = KernelSpec::helmholtz2d(cloud, k).permuted(h.tree->perm());
  const auto nodes = h.tree->level_nodes(level);
  h.src = nodes.front();
  double best = -1.0;
  for (int o : nodes) {
    const double d = distance(h.tree->node(o).center, h.tree->node(h.src).center);
    if (d > best) best = d, h.obs = o;
  }
  return h;
}

inline double rel_err(const CMat& a, const CMat& b) { return (a - b).norm() / b.norm(); }

}  // namespace bflu::testing
