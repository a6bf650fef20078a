#include "bflu/hlu.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <string>

#include "bflu/linalg.hpp"

namespace bflu {

namespace {

void require_diag(const HNode& d, const CMat& B, const char* what) {
  if (B.rows() != d.rows) throw InvalidInput(std::string(what) + ": shape mismatch");
  if (d.kind != HNode::Kind::lu && d.kind != HNode::Kind::partitioned)
    throw InvalidInput(std::string(what) + ": node is not a factorized diagonal block");
}

std::string block_name(const HNode& n) {
  return "block (observer " + std::to_string(n.observer) + ", source " + std::to_string(n.source) + ", level " +
         std::to_string(n.level) + ")";
}

}  // namespace

CMat lower_solve(const HNode& d, const CMat& B) {
  require_diag(d, B, "lower_solve");
  if (d.kind == HNode::Kind::lu) {
    const CMat pb = d.lu->permutationP() * B;
    return d.lu->matrixLU().triangularView<Eigen::UnitLower>().solve(pb);
  }
  const HNode &a = d.child(0, 0), &l21 = d.child(1, 0), &c = d.child(1, 1);
  CMat X(B.rows(), B.cols());
  X.topRows(a.rows) = lower_solve(a, B.topRows(a.rows));
  X.bottomRows(c.rows) = lower_solve(c, B.bottomRows(c.rows) - l21.apply(X.topRows(a.rows)));
  return X;
}

CMat lower_solve_transpose(const HNode& d, const CMat& B) {
  require_diag(d, B, "lower_solve_transpose");
  if (d.kind == HNode::Kind::lu) {
    const CMat z = d.lu->matrixLU().triangularView<Eigen::UnitLower>().transpose().solve(B);
    return d.lu->permutationP().transpose() * z;
  }
  const HNode &a = d.child(0, 0), &l21 = d.child(1, 0), &c = d.child(1, 1);
  CMat X(B.rows(), B.cols());
  X.bottomRows(c.rows) = lower_solve_transpose(c, B.bottomRows(c.rows));
  X.topRows(a.rows) = lower_solve_transpose(a, B.topRows(a.rows) - l21.apply_transpose(X.bottomRows(c.rows)));
  return X;
}

CMat upper_solve(const HNode& d, const CMat& B) {
  require_diag(d, B, "upper_solve");
  if (d.kind == HNode::Kind::lu) return d.lu->matrixLU().triangularView<Eigen::Upper>().solve(B);
  const HNode &a = d.child(0, 0), &u12 = d.child(0, 1), &c = d.child(1, 1);
  CMat X(B.rows(), B.cols());
  X.bottomRows(c.rows) = upper_solve(c, B.bottomRows(c.rows));
  X.topRows(a.rows) = upper_solve(a, B.topRows(a.rows) - u12.apply(X.bottomRows(c.rows)));
  return X;
}

CMat upper_solve_transpose(const HNode& d, const CMat& B) {
  require_diag(d, B, "upper_solve_transpose");
  if (d.kind == HNode::Kind::lu) return d.lu->matrixLU().triangularView<Eigen::Upper>().transpose().solve(B);
  const HNode &a = d.child(0, 0), &u12 = d.child(0, 1), &c = d.child(1, 1);
  CMat X(B.rows(), B.cols());
  X.topRows(a.rows) = upper_solve_transpose(a, B.topRows(a.rows));
  X.bottomRows(c.rows) = upper_solve_transpose(c, B.bottomRows(c.rows) - u12.apply_transpose(X.topRows(a.rows)));
  return X;
}

CMat lower_apply(const HNode& d, const CMat& X) {
  require_diag(d, X, "lower_apply");
  if (d.kind == HNode::Kind::lu) {
    const CMat y = d.lu->matrixLU().triangularView<Eigen::UnitLower>() * X;
    return d.lu->permutationP().transpose() * y;
  }
  const HNode &a = d.child(0, 0), &l21 = d.child(1, 0), &c = d.child(1, 1);
  CMat Y(X.rows(), X.cols());
  Y.topRows(a.rows) = lower_apply(a, X.topRows(a.rows));
  Y.bottomRows(c.rows) = l21.apply(X.topRows(a.rows)) + lower_apply(c, X.bottomRows(c.rows));
  return Y;
}

CMat upper_apply(const HNode& d, const CMat& X) {
  require_diag(d, X, "upper_apply");
  if (d.kind == HNode::Kind::lu) return d.lu->matrixLU().triangularView<Eigen::Upper>() * X;
  const HNode &a = d.child(0, 0), &u12 = d.child(0, 1), &c = d.child(1, 1);
  CMat Y(X.rows(), X.cols());
  Y.topRows(a.rows) = upper_apply(a, X.topRows(a.rows)) + u12.apply(X.bottomRows(c.rows));
  Y.bottomRows(c.rows) = upper_apply(c, X.bottomRows(c.rows));
  return Y;
}

namespace {

// Deferred Schur terms: the target block is reduced by a * b.
struct Pending {
  const HNode* a;
  const HNode* b;
};
using PendingList = std::vector<Pending>;

PendingList with(PendingList p, const HNode& a, const HNode& b) {
  p.push_back({&a, &b});
  return p;
}

CMat pending_apply(const PendingList& p, const HNode& t, const CMat& X) {
  CMat y = CMat::Zero(t.rows, X.cols());
  for (const auto& e : p)
    y += e.a->apply_block(t.row0, t.rows, e.a->col0, e.a->cols,
                          e.b->apply_block(e.b->row0, e.b->rows, t.col0, t.cols, X));
  return y;
}

CMat pending_apply_transpose(const PendingList& p, const HNode& t, const CMat& Y) {
  CMat x = CMat::Zero(t.cols, Y.cols());
  for (const auto& e : p)
    x += e.b->apply_block_transpose(e.b->row0, e.b->rows, t.col0, t.cols,
                                    e.a->apply_block_transpose(t.row0, t.rows, e.a->col0, e.a->cols, Y));
  return x;
}

// Dense value of src - pending.
CMat reduced_dense(const HNode& src, const PendingList& p) {
  CMat A = src.dense;
  if (!p.empty()) A -= pending_apply(p, src, CMat::Identity(src.cols, src.cols));
  return A;
}

HNode skeleton(const HNode& src) {
  HNode n;
  n.kind = src.kind;
  n.observer = src.observer;
  n.source = src.source;
  n.level = src.level;
  n.row0 = src.row0;
  n.col0 = src.col0;
  n.rows = src.rows;
  n.cols = src.cols;
  n.children.reserve(src.children.size());
  for (const auto& ch : src.children) n.children.push_back(skeleton(ch));
  return n;
}

class Factorizer {
 public:
  Factorizer(const LUOptions& o, LUStats& st, Index base_rank)
      : o_(o), st_(st),
        base_(std::clamp<Index>(static_cast<Index>(std::ceil(o.rank_factor * static_cast<double>(std::max<Index>(1, base_rank)))),
                                1, o.r_max)) {
    st_.working_rank = base_;
  }

  void diag(const HNode& src, HNode& dst, const PendingList& p) {
    if (src.kind == HNode::Kind::partitioned) {
      diag(src.child(0, 0), dst.child(0, 0), p);
      lower(dst.child(0, 0), src.child(0, 1), dst.child(0, 1), p);
      upper(dst.child(0, 0), src.child(1, 0), dst.child(1, 0), p);
      diag(src.child(1, 1), dst.child(1, 1), with(p, dst.child(1, 0), dst.child(0, 1)));
      return;
    }
    if (src.kind != HNode::Kind::dense) throw FactorizationFailure("diagonal " + block_name(src) + " is not dense");
    auto lu = std::make_shared<Eigen::PartialPivLU<CMat>>(reduced_dense(src, p));
    const auto d = lu->matrixLU().diagonal();
    for (Index t = 0; t < d.size(); ++t)
      if (!std::isfinite(std::abs(d(t))) || std::abs(d(t)) == 0.0)
        throw FactorizationFailure("singular diagonal " + block_name(src) + " (pivot " + std::to_string(t) + ")");
    dst.kind = HNode::Kind::lu;
    dst.lu = std::move(lu);
  }

  // dst = L^-1 (src - p), L from the factorized diagonal node f.
  void lower(const HNode& f, const HNode& src, HNode& dst, const PendingList& p) {
    switch (src.kind) {
      case HNode::Kind::partitioned:
        for (int j = 0; j < 2; ++j) {
          lower(f.child(0, 0), src.child(0, j), dst.child(0, j), p);
          lower(f.child(1, 1), src.child(1, j), dst.child(1, j), with(p, f.child(1, 0), dst.child(0, j)));
        }
        return;
      case HNode::Kind::dense:
        dst.dense = lower_solve(f, reduced_dense(src, p));
        return;
      case HNode::Kind::butterfly: {
        const LinearOperator op(
            src.rows, src.cols,
            [&](const CMat& X) -> CMat { return lower_solve(f, src.apply(X) - pending_apply(p, src, X)); },
            [&](const CMat& Y) -> CMat {
              const CMat z = lower_solve_transpose(f, Y);
              return src.apply_transpose(z) - pending_apply_transpose(p, src, z);
            });
        dst.butterfly = reconstruct(src, op);
        return;
      }
      case HNode::Kind::lu:
        break;
    }
    throw FactorizationFailure("unexpected factor block in " + block_name(src));
  }

  // dst = (src - p) U^-1, U from f.
  void upper(const HNode& f, const HNode& src, HNode& dst, const PendingList& p) {
    switch (src.kind) {
      case HNode::Kind::partitioned:
        for (int i = 0; i < 2; ++i) {
          upper(f.child(0, 0), src.child(i, 0), dst.child(i, 0), p);
          upper(f.child(1, 1), src.child(i, 1), dst.child(i, 1), with(p, dst.child(i, 0), f.child(0, 1)));
        }
        return;
      case HNode::Kind::dense:
        dst.dense = upper_solve_transpose(f, reduced_dense(src, p).transpose()).transpose();
        return;
      case HNode::Kind::butterfly: {
        const LinearOperator op(
            src.rows, src.cols,
            [&](const CMat& X) -> CMat {
              const CMat z = upper_solve(f, X);
              return src.apply(z) - pending_apply(p, src, z);
            },
            [&](const CMat& Y) -> CMat {
              return upper_solve_transpose(f, src.apply_transpose(Y) - pending_apply_transpose(p, src, Y));
            });
        dst.butterfly = reconstruct(src, op);
        return;
      }
      case HNode::Kind::lu:
        break;
    }
    throw FactorizationFailure("unexpected factor block in " + block_name(src));
  }

 private:
  // One working rank per butterfly depth, starting at rank_factor times the
  // largest rank in H. It follows the recovered ranks upward (LU blocks are
  // usually richer than their sources) and is raised 4x after a failure.
  std::shared_ptr<const Butterfly> reconstruct(const HNode& src, const LinearOperator& op) {
    ReconstructionOptions ro;
    ro.c = o_.c;
    ro.eps = o_.eps;
    ro.max_iter = o_.max_iter;
    ro.level_threshold = o_.level_threshold;
    ro.r_max = o_.r_max;
    ro.pinv_tol = o_.pinv_tol;
    ro.rank_tol = o_.rank_tol;
    ro.seed = o_.seed * 0x9E3779B97F4A7C15ULL + 104729u * static_cast<std::uint64_t>(++count_);
    const ButterflyShape shape = ButterflyShape::of(*src.butterfly);
    Index& r = rank_.try_emplace(shape.levels, base_).first->second;
    for (;;) {
      ro.r = r;
      try {
        auto [b, rep] = reconstruct_auto(op, shape, ro);
        ++st_.reconstructions;
        if (rep.scheme == Scheme::iterative) {
          ++st_.iterative;
          st_.k_iter.push_back(rep.k_iter);
        }
        if (rep.fallback) ++st_.fallbacks;
        st_.retries += rep.retries;
        st_.worst_block_residual = std::max(st_.worst_block_residual, rep.probe_residual);
        const auto got = static_cast<double>(storage_stats(b).max_rank);
        r = std::max(r, std::min(rep.rank, static_cast<Index>(std::ceil(o_.rank_factor * got))));
        st_.working_rank = std::max(st_.working_rank, r);
        return std::make_shared<const Butterfly>(std::move(b));
      } catch (const ReconstructionFailure& e) {
        if (r >= o_.r_max)
          throw FactorizationFailure("reconstruction failed for " + block_name(src) + " with " +
                                     std::to_string(shape.levels) + " butterfly levels at r_max " +
                                     std::to_string(o_.r_max) + ": " + e.what());
        r = std::min(o_.r_max, 4 * r);
        ++st_.escalations;
      }
    }
  }

  const LUOptions& o_;
  LUStats& st_;
  Index base_;
  std::map<int, Index> rank_;
  std::uint64_t count_ = 0;
};

}  // namespace

HLUFactors::HLUFactors(std::shared_ptr<const HNode> root, std::shared_ptr<const ClusterTree> tree, LUStats stats)
    : root_(std::move(root)), tree_(std::move(tree)), stats_(std::move(stats)) {
  if (!root_ || !tree_) throw InvalidInput("HLUFactors: null root or tree");
}

CMat HLUFactors::solve(const CMat& B) const {
  if (B.rows() != size()) throw InvalidInput("solve: right-hand side has " + std::to_string(B.rows()) + " rows");
  // columns one at a time so a batch matches single-column calls exactly
  CMat X(B.rows(), B.cols());
  for (Index j = 0; j < B.cols(); ++j) X.col(j) = upper_solve(*root_, lower_solve(*root_, B.col(j)));
  return X;
}

CMat HLUFactors::solve_original(const CMat& B) const {
  if (B.rows() != size()) throw InvalidInput("solve: right-hand side has " + std::to_string(B.rows()) + " rows");
  return tree_->to_original_order(solve(tree_->to_tree_order(B)));
}

CMat HLUFactors::apply(const CMat& X) const {
  if (X.rows() != size()) throw InvalidInput("HLUFactors::apply: shape mismatch");
  return lower_apply(*root_, upper_apply(*root_, X));
}

HLUFactors factorize(const HMatrix& H, const LUOptions& opts) {
  if (!(opts.delta > 0.0 && opts.delta < 1.0) || !(opts.eps > 0.0 && opts.eps < 1.0))
    throw InvalidInput("factorize: tolerances must lie in (0, 1)");
  if (opts.r_max < 1 || opts.c < 0 || opts.max_iter < 1 || !(opts.rank_factor > 0.0) || opts.n_probe < 1 ||
      opts.rank_tol < 0.0)
    throw InvalidInput("factorize: invalid options");
  if (H.root().rows != H.root().cols) throw InvalidInput("factorize: matrix must be square");
  LUStats st;
  auto root = std::make_shared<HNode>(skeleton(H.root()));
  Factorizer(opts, st, H.max_rank()).diag(H.root(), *root, {});
  HLUFactors F(std::move(root), H.tree_ptr(), st);
  const double res = factorization_residual(F, H, opts.n_probe, opts.seed ^ 0x5DEECE66DULL);
  if (!(res <= opts.delta))
    throw FactorizationFailure("factorization probe residual " + std::to_string(res) + " above delta " +
                               std::to_string(opts.delta));
  st.probe_residual = res;
  return HLUFactors(F.root_ptr(), H.tree_ptr(), st);
}

CMat solve_corrected(const HLUFactors& F, const HMatrix& H, const CMat& B) {
  CMat x = F.solve_original(B);
  x += F.solve_original(B - H.apply_original(x));
  return x;
}

double factorization_residual(const HLUFactors& F, const HMatrix& H, Index n_probe, std::uint64_t seed) {
  if (F.size() != H.size()) throw InvalidInput("factorization_residual: size mismatch");
  Rng rng(seed);
  const CMat X = random_gaussian(H.size(), n_probe, rng);
  const CMat hx = H.apply(X);
  const double den = hx.norm();
  const double num = (F.apply(X) - hx).norm();
  if (den == 0.0) return num == 0.0 ? 0.0 : std::numeric_limits<double>::infinity();
  return num / den;
}

Butterfly butterfly_add(const Butterfly& a, const Butterfly& b, const ReconstructionOptions& opts) {
  if (a.rows() != b.rows() || a.cols() != b.cols() || a.levels() != b.levels())
    throw InvalidInput("butterfly_add: dimension or level mismatch");
  auto pa = std::make_shared<const Butterfly>(a);
  auto pb = std::make_shared<const Butterfly>(b);
  const auto op = LinearOperator::sum(LinearOperator::butterfly(pa), LinearOperator::butterfly(pb));
  return reconstruct_auto(op, ButterflyShape::of(a), opts).first;
}

Butterfly butterfly_mul(const Butterfly& b, const LinearOperator& a, Side side, const ReconstructionOptions& opts) {
  auto pb = std::make_shared<const Butterfly>(b);
  if (side == Side::left) {
    if (a.rows() != b.cols()) throw InvalidInput("butterfly_mul: B * A dimension mismatch");
    const LinearOperator op(
        b.rows(), a.cols(), [pb, a](const CMat& X) -> CMat { return pb->apply(a.apply(X)); },
        [pb, a](const CMat& Y) -> CMat { return a.apply_transpose(pb->apply_transpose(Y)); });
    const ButterflyShape shape =
        a.cols() == b.cols() ? ButterflyShape::of(b) : ButterflyShape::uniform(b.rows(), a.cols(), b.levels());
    return reconstruct_auto(op, shape, opts).first;
  }
  if (a.cols() != b.rows()) throw InvalidInput("butterfly_mul: A * B dimension mismatch");
  const LinearOperator op(
      a.rows(), b.cols(), [pb, a](const CMat& X) -> CMat { return a.apply(pb->apply(X)); },
      [pb, a](const CMat& Y) -> CMat { return pb->apply_transpose(a.apply_transpose(Y)); });
  const ButterflyShape shape =
      a.rows() == b.rows() ? ButterflyShape::of(b) : ButterflyShape::uniform(a.rows(), b.cols(), b.levels());
  return reconstruct_auto(op, shape, opts).first;
}

Butterfly triangular_solve(const HNode& diag, const Butterfly& b, Triangle t, const ReconstructionOptions& opts) {
  auto pb = std::make_shared<const Butterfly>(b);
  const HNode* d = &diag;
  if (t == Triangle::lower) {
    if (diag.rows != b.rows()) throw InvalidInput("triangular_solve: L^-1 B dimension mismatch");
    const LinearOperator op(
        b.rows(), b.cols(), [pb, d](const CMat& X) -> CMat { return lower_solve(*d, pb->apply(X)); },
        [pb, d](const CMat& Y) -> CMat { return pb->apply_transpose(lower_solve_transpose(*d, Y)); });
    return reconstruct_auto(op, ButterflyShape::of(b), opts).first;
  }
  if (diag.cols != b.cols()) throw InvalidInput("triangular_solve: B U^-1 dimension mismatch");
  const LinearOperator op(
      b.rows(), b.cols(), [pb, d](const CMat& X) -> CMat { return pb->apply(upper_solve(*d, X)); },
      [pb, d](const CMat& Y) -> CMat { return upper_solve_transpose(*d, pb->apply_transpose(Y)); });
  return reconstruct_auto(op, ButterflyShape::of(b), opts).first;
}

}  // namespace bflu
