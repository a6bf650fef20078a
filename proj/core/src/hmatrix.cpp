#include "bflu/hmatrix.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <utility>

namespace bflu {

namespace {

struct Overlap {
  Index r0, nr, c0, nc;
  bool empty() const { return nr <= 0 || nc <= 0; }
};

Overlap overlap(const HNode& n, Index r0, Index nr, Index c0, Index nc) {
  const Index a = std::max(r0, n.row0), b = std::min(r0 + nr, n.row0 + n.rows);
  const Index c = std::max(c0, n.col0), d = std::min(c0 + nc, n.col0 + n.cols);
  return {a, b - a, c, d - c};
}

void check_range(const HNode& n, Index r0, Index nr, Index c0, Index nc) {
  if (nr < 0 || nc < 0 || r0 < n.row0 || c0 < n.col0 || r0 + nr > n.row0 + n.rows || c0 + nc > n.col0 + n.cols)
    throw InvalidInput("apply_block: range outside the block");
}

}  // namespace

CMat HNode::apply_block(Index r0, Index nr, Index c0, Index nc, const CMat& X) const {
  check_range(*this, r0, nr, c0, nc);
  if (X.rows() != nc) throw InvalidInput("apply_block: shape mismatch");
  switch (kind) {
    case Kind::dense:
      return dense.block(r0 - row0, c0 - col0, nr, nc) * X;
    case Kind::butterfly:
      return butterfly->apply_sub(r0 - row0, nr, c0 - col0, nc, X);
    case Kind::lu:
      throw InvalidInput("apply_block: factorized diagonal block has no plain action");
    case Kind::partitioned:
      break;
  }
  CMat out = CMat::Zero(nr, X.cols());
  for (const auto& ch : children) {
    const Overlap o = overlap(ch, r0, nr, c0, nc);
    if (o.empty()) continue;
    out.middleRows(o.r0 - r0, o.nr) += ch.apply_block(o.r0, o.nr, o.c0, o.nc, X.middleRows(o.c0 - c0, o.nc));
  }
  return out;
}

CMat HNode::apply_block_transpose(Index r0, Index nr, Index c0, Index nc, const CMat& X) const {
  check_range(*this, r0, nr, c0, nc);
  if (X.rows() != nr) throw InvalidInput("apply_block_transpose: shape mismatch");
  switch (kind) {
    case Kind::dense:
      return dense.block(r0 - row0, c0 - col0, nr, nc).transpose() * X;
    case Kind::butterfly:
      return butterfly->apply_transpose_sub(r0 - row0, nr, c0 - col0, nc, X);
    case Kind::lu:
      throw InvalidInput("apply_block_transpose: factorized diagonal block has no plain action");
    case Kind::partitioned:
      break;
  }
  CMat out = CMat::Zero(nc, X.cols());
  for (const auto& ch : children) {
    const Overlap o = overlap(ch, r0, nr, c0, nc);
    if (o.empty()) continue;
    out.middleRows(o.c0 - c0, o.nc) +=
        ch.apply_block_transpose(o.r0, o.nr, o.c0, o.nc, X.middleRows(o.r0 - r0, o.nr));
  }
  return out;
}

std::int64_t HNode::stored_entries() const {
  switch (kind) {
    case Kind::dense:
    case Kind::lu:
      return static_cast<std::int64_t>(rows) * cols;
    case Kind::butterfly:
      return butterfly->stored_entries();
    case Kind::partitioned:
      break;
  }
  std::int64_t s = 0;
  for (const auto& ch : children) s += ch.stored_entries();
  return s;
}

Index HNode::max_butterfly_rank() const {
  if (kind == Kind::butterfly) return storage_stats(*butterfly).max_rank;
  Index r = 0;
  for (const auto& ch : children) r = std::max(r, ch.max_butterfly_rank());
  return r;
}

Index HNode::count(Kind k) const {
  Index c = kind == k ? 1 : 0;
  for (const auto& ch : children) c += ch.count(k);
  return c;
}

bool same_tiling(const HNode& a, const HNode& b) {
  if (a.row0 != b.row0 || a.col0 != b.col0 || a.rows != b.rows || a.cols != b.cols) return false;
  auto norm = [](HNode::Kind k) { return k == HNode::Kind::lu ? HNode::Kind::dense : k; };
  if (norm(a.kind) != norm(b.kind)) return false;
  if (a.children.size() != b.children.size()) return false;
  for (std::size_t t = 0; t < a.children.size(); ++t)
    if (!same_tiling(a.children[t], b.children[t])) return false;
  return true;
}

namespace {

struct Builder {
  const KernelSpec& kernel;  // tree order
  const ClusterTree& tree;
  const AssembleOptions& opts;
  std::map<std::pair<int, int>, bool> pairs;  // (observer, source) -> far
  std::size_t used = 0;

  HNode build(int obs, int src) {
    const auto& o = tree.node(obs);
    const auto& s = tree.node(src);
    HNode n;
    n.observer = obs;
    n.source = src;
    n.level = o.level;
    n.row0 = o.begin;
    n.col0 = s.begin;
    n.rows = o.size();
    n.cols = s.size();
    const auto it = pairs.find({obs, src});
    if (it != pairs.end()) {
      ++used;
      if (it->second) {
        n.kind = HNode::Kind::butterfly;
        DirectOptions d;
        d.tol = opts.tol;
        d.chi_s = opts.chi_s;
        d.r_max = opts.r_max;
        d.seed = opts.seed * 0x100000001B3ULL + static_cast<std::uint64_t>(obs) * 65536u + static_cast<std::uint64_t>(src);
        try {
          n.butterfly = std::make_shared<const Butterfly>(
              construct_direct(kernel, tree, src, obs, tree.depth() - o.level, d));
        } catch (const RankOverflow& e) {
          throw RankOverflow("far block (observer " + std::to_string(obs) + ", source " + std::to_string(src) +
                                 ", level " + std::to_string(o.level) + "): " + e.what(),
                             e.needed());
        }
      } else {
        n.kind = HNode::Kind::dense;
        n.dense = eval_block(kernel, n.row0, n.rows, n.col0, n.cols);
      }
      return n;
    }
    if (o.is_leaf() || s.is_leaf())
      throw InvalidInput("block partition does not cover leaf pair (" + std::to_string(obs) + ", " +
                         std::to_string(src) + ")");
    n.kind = HNode::Kind::partitioned;
    n.children.reserve(4);
    for (int oc : o.children)
      for (int sc : s.children) n.children.push_back(build(oc, sc));
    return n;
  }
};

}  // namespace

HMatrix HMatrix::assemble(const KernelSpec& kernel, std::shared_ptr<const ClusterTree> tree,
                          const BlockPartition& partition, const AssembleOptions& opts) {
  if (!tree) throw InvalidInput("assemble: null cluster tree");
  if (kernel.size() != tree->size()) throw InvalidInput("assemble: kernel and tree sizes differ");
  if (!(opts.tol > 0.0 && opts.tol < 1.0)) throw InvalidInput("assemble: tol must lie in (0, 1)");
  const KernelSpec kt = kernel.permuted(tree->perm());
  Builder b{kt, *tree, opts, {}, 0};
  for (const auto& p : partition.far_pairs) b.pairs[{p.observer, p.source}] = true;
  for (const auto& p : partition.near_pairs) {
    if (!b.pairs.emplace(std::make_pair(p.observer, p.source), false).second)
      throw InvalidInput("block partition lists a pair twice");
  }
  HMatrix h;
  h.tree_ = std::move(tree);
  h.opts_ = opts;
  h.root_ = std::make_shared<const HNode>(b.build(h.tree_->root(), h.tree_->root()));
  if (b.used != b.pairs.size()) throw InvalidInput("block partition has pairs outside the block tree");
  return h;
}

CMat HMatrix::apply(const CMat& X) const {
  if (X.rows() != size()) throw InvalidInput("HMatrix::apply: shape mismatch");
  return root_->apply(X);
}

CMat HMatrix::apply_transpose(const CMat& X) const {
  if (X.rows() != size()) throw InvalidInput("HMatrix::apply_transpose: shape mismatch");
  return root_->apply_transpose(X);
}

CMat HMatrix::apply_original(const CMat& X) const {
  if (X.rows() != size()) throw InvalidInput("HMatrix::apply_original: shape mismatch");
  return tree_->to_original_order(root_->apply(tree_->to_tree_order(X)));
}

LinearOperator HMatrix::as_operator() const {
  auto root = root_;
  return LinearOperator(
      size(), size(), [root](const CMat& X) { return root->apply(X); },
      [root](const CMat& Y) { return root->apply_transpose(Y); });
}

double nlog2sq(Index n) {
  const double l = std::log2(static_cast<double>(std::max<Index>(n, 2)));
  return static_cast<double>(n) * l * l;
}

}  // namespace bflu
