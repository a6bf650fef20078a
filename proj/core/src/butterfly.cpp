#include "bflu/butterfly.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "bflu/linalg.hpp"

namespace bflu {

namespace {

// First leaf index whose offset equals `pos`; -1 if `pos` is not a leaf boundary.
Index boundary_lo(const std::vector<Index>& off, Index pos) {
  auto it = std::lower_bound(off.begin(), off.end(), pos);
  if (it == off.end() || *it != pos) return -1;
  return static_cast<Index>(it - off.begin());
}

Index boundary_hi(const std::vector<Index>& off, Index pos) {
  auto it = std::upper_bound(off.begin(), off.end(), pos);
  if (it == off.begin() || *(it - 1) != pos) return -1;
  return static_cast<Index>(it - off.begin()) - 1;
}

bool overlaps(Index a0, Index a1, Index b0, Index b1) { return a0 < b1 && b0 < a1; }

struct LeafWindow {
  Index ra, rb, ca, cb;  // leaf ranges [ra, rb) and [ca, cb)
};

}  // namespace

Butterfly Butterfly::zero(int levels, std::vector<Index> row_offsets, std::vector<Index> col_offsets) {
  if (levels < 0 || levels > 30) throw InvalidInput("butterfly levels out of range");
  const Index nl = Index{1} << levels;
  if (static_cast<Index>(row_offsets.size()) != nl + 1 || static_cast<Index>(col_offsets.size()) != nl + 1)
    throw InvalidInput("butterfly offsets must have 2^L + 1 entries");
  Butterfly b;
  b.levels_ = levels;
  b.row_offsets_ = std::move(row_offsets);
  b.col_offsets_ = std::move(col_offsets);
  b.Q_.resize(static_cast<std::size_t>(nl));
  b.P_.resize(static_cast<std::size_t>(nl));
  for (Index k = 0; k < nl; ++k) {
    b.Q_[static_cast<std::size_t>(k)] = CMat::Zero(0, b.col_offsets_[k + 1] - b.col_offsets_[k]);
    b.P_[static_cast<std::size_t>(k)] = CMat::Zero(b.row_offsets_[k + 1] - b.row_offsets_[k], 0);
  }
  b.R_.assign(static_cast<std::size_t>(levels), std::vector<CMat>(static_cast<std::size_t>(nl), CMat(0, 0)));
  return b;
}

std::pair<Index, Index> Butterfly::observer_range(int d, Index i) const {
  const Index w = Index{1} << (levels_ - d);
  return {row_offsets_[i * w], row_offsets_[(i + 1) * w]};
}

std::pair<Index, Index> Butterfly::source_range(int d, Index k) const {
  const Index w = Index{1} << d;
  return {col_offsets_[k * w], col_offsets_[(k + 1) * w]};
}

Index Butterfly::rank(int d, Index p) const {
  if (d == 0) return Q_[static_cast<std::size_t>(p)].rows();
  return R_[static_cast<std::size_t>(d - 1)][static_cast<std::size_t>(p)].rows();
}

void Butterfly::check() const {
  const Index nl = leaves();
  if (static_cast<Index>(Q_.size()) != nl || static_cast<Index>(P_.size()) != nl ||
      static_cast<int>(R_.size()) != levels_)
    throw InvalidInput("butterfly: wrong number of factor blocks");
  for (Index k = 0; k < nl; ++k)
    if (Q_[static_cast<std::size_t>(k)].cols() != col_offsets_[k + 1] - col_offsets_[k])
      throw InvalidInput("butterfly: Q block " + std::to_string(k) + " has wrong column count");
  for (int d = 1; d <= levels_; ++d) {
    const Index nk = Index{1} << (levels_ - d);
    const auto& Rd = R_[static_cast<std::size_t>(d - 1)];
    if (static_cast<Index>(Rd.size()) != nl) throw InvalidInput("butterfly: wrong R level size");
    for (Index p = 0; p < nl; ++p) {
      const Index i = p / nk, k = p % nk;
      const Index p1 = (i / 2) * (2 * nk) + 2 * k;
      if (Rd[static_cast<std::size_t>(p)].cols() != rank(d - 1, p1) + rank(d - 1, p1 + 1))
        throw InvalidInput("butterfly: R block at level " + std::to_string(d) + " does not chain");
    }
  }
  for (Index i = 0; i < nl; ++i) {
    const auto& Pi = P_[static_cast<std::size_t>(i)];
    if (Pi.rows() != row_offsets_[i + 1] - row_offsets_[i] || Pi.cols() != rank(levels_, i))
      throw InvalidInput("butterfly: P block " + std::to_string(i) + " has wrong shape");
  }
}

CMat Butterfly::apply(const CMat& X) const { return apply_sub(0, rows(), 0, cols(), X); }

CMat Butterfly::apply_transpose(const CMat& X) const { return apply_transpose_sub(0, rows(), 0, cols(), X); }

CMat Butterfly::apply_sub(Index r0, Index nr, Index c0, Index nc, const CMat& X) const {
  if (X.rows() != nc) throw InvalidInput("butterfly apply: operand has wrong row count");
  const Index ra = boundary_lo(row_offsets_, r0), rb = boundary_hi(row_offsets_, r0 + nr);
  const Index ca = boundary_lo(col_offsets_, c0), cb = boundary_hi(col_offsets_, c0 + nc);
  if (ra < 0 || rb < 0 || ca < 0 || cb < 0) throw InvalidInput("butterfly apply: range not leaf aligned");
  const Index q = X.cols();
  const Index nl = leaves();
  const auto L = levels_;

  std::vector<CMat> v(static_cast<std::size_t>(nl));
  std::vector<char> on(static_cast<std::size_t>(nl), 0);
  for (Index k = ca; k < cb; ++k) {
    const Index nk = col_offsets_[k + 1] - col_offsets_[k];
    v[static_cast<std::size_t>(k)] = Q_[static_cast<std::size_t>(k)] * X.middleRows(col_offsets_[k] - c0, nk);
    on[static_cast<std::size_t>(k)] = 1;
  }
  for (int d = 1; d <= L; ++d) {
    const Index ngk = Index{1} << (L - d);
    const Index obs_w = ngk;
    std::vector<CMat> nv(static_cast<std::size_t>(nl));
    std::vector<char> non(static_cast<std::size_t>(nl), 0);
    const auto& Rd = R_[static_cast<std::size_t>(d - 1)];
    for (Index i = 0; i < (Index{1} << d); ++i) {
      if (!overlaps(i * obs_w, (i + 1) * obs_w, ra, rb)) continue;
      for (Index k = 0; k < ngk; ++k) {
        const Index p = i * ngk + k;
        const Index p1 = (i / 2) * (2 * ngk) + 2 * k, p2 = p1 + 1;
        const bool a1 = on[static_cast<std::size_t>(p1)], a2 = on[static_cast<std::size_t>(p2)];
        if (!a1 && !a2) continue;
        const auto& R = Rd[static_cast<std::size_t>(p)];
        const Index r1 = rank(d - 1, p1);
        CMat out = CMat::Zero(R.rows(), q);
        if (a1 && r1 > 0) out.noalias() += R.leftCols(r1) * v[static_cast<std::size_t>(p1)];
        if (a2 && R.cols() > r1) out.noalias() += R.rightCols(R.cols() - r1) * v[static_cast<std::size_t>(p2)];
        nv[static_cast<std::size_t>(p)] = std::move(out);
        non[static_cast<std::size_t>(p)] = 1;
      }
    }
    v.swap(nv);
    on.swap(non);
  }
  CMat Y = CMat::Zero(nr, q);
  for (Index i = ra; i < rb; ++i) {
    if (!on[static_cast<std::size_t>(i)]) continue;
    const Index mi = row_offsets_[i + 1] - row_offsets_[i];
    if (mi == 0) continue;
    Y.middleRows(row_offsets_[i] - r0, mi).noalias() = P_[static_cast<std::size_t>(i)] * v[static_cast<std::size_t>(i)];
  }
  return Y;
}

CMat Butterfly::apply_transpose_sub(Index r0, Index nr, Index c0, Index nc, const CMat& X) const {
  if (X.rows() != nr) throw InvalidInput("butterfly transpose apply: operand has wrong row count");
  const Index ra = boundary_lo(row_offsets_, r0), rb = boundary_hi(row_offsets_, r0 + nr);
  const Index ca = boundary_lo(col_offsets_, c0), cb = boundary_hi(col_offsets_, c0 + nc);
  if (ra < 0 || rb < 0 || ca < 0 || cb < 0) throw InvalidInput("butterfly apply: range not leaf aligned");
  const Index q = X.cols();
  const Index nl = leaves();
  const auto L = levels_;

  std::vector<CMat> w(static_cast<std::size_t>(nl));
  std::vector<char> on(static_cast<std::size_t>(nl), 0);
  for (Index i = ra; i < rb; ++i) {
    const Index mi = row_offsets_[i + 1] - row_offsets_[i];
    w[static_cast<std::size_t>(i)] =
        P_[static_cast<std::size_t>(i)].transpose() * X.middleRows(row_offsets_[i] - r0, mi);
    on[static_cast<std::size_t>(i)] = 1;
  }
  for (int d = L; d >= 1; --d) {
    const Index ngk = Index{1} << (L - d);
    std::vector<CMat> nw(static_cast<std::size_t>(nl));
    std::vector<char> non(static_cast<std::size_t>(nl), 0);
    const auto& Rd = R_[static_cast<std::size_t>(d - 1)];
    const Index src_w = Index{1} << (d - 1);  // leaves per source group at level d-1
    for (Index p = 0; p < nl; ++p) {
      if (!on[static_cast<std::size_t>(p)]) continue;
      const Index i = p / ngk, k = p % ngk;
      const Index p1 = (i / 2) * (2 * ngk) + 2 * k;
      const auto& R = Rd[static_cast<std::size_t>(p)];
      const Index r1 = rank(d - 1, p1);
      for (int c = 0; c < 2; ++c) {
        const Index kc = 2 * k + c;
        if (!overlaps(kc * src_w, (kc + 1) * src_w, ca, cb)) continue;
        const Index pc = p1 + c;
        const Index rc = c == 0 ? r1 : R.cols() - r1;
        auto& dst = nw[static_cast<std::size_t>(pc)];
        if (!non[static_cast<std::size_t>(pc)]) {
          dst = CMat::Zero(rc, q);
          non[static_cast<std::size_t>(pc)] = 1;
        }
        if (rc > 0 && R.rows() > 0)
          dst.noalias() += R.middleCols(c == 0 ? 0 : r1, rc).transpose() * w[static_cast<std::size_t>(p)];
      }
    }
    w.swap(nw);
    on.swap(non);
  }
  CMat Y = CMat::Zero(nc, q);
  for (Index k = ca; k < cb; ++k) {
    if (!on[static_cast<std::size_t>(k)]) continue;
    const Index nk = col_offsets_[k + 1] - col_offsets_[k];
    if (nk == 0) continue;
    Y.middleRows(col_offsets_[k] - c0, nk).noalias() =
        Q_[static_cast<std::size_t>(k)].transpose() * w[static_cast<std::size_t>(k)];
  }
  return Y;
}

void Butterfly::scale(Complex s) {
  for (auto& p : P_) p *= s;
}

std::int64_t Butterfly::stored_entries() const {
  std::int64_t total = 0;
  for (const auto& m : P_) total += m.size();
  for (const auto& m : Q_) total += m.size();
  for (const auto& lvl : R_)
    for (const auto& m : lvl) total += m.size();
  return total;
}

ButterflyStats storage_stats(const Butterfly& b) {
  ButterflyStats s;
  s.entries = b.stored_entries();
  s.per_level_ranks.assign(static_cast<std::size_t>(b.levels()) + 1, 0);
  for (int d = 0; d <= b.levels(); ++d)
    for (Index p = 0; p < b.leaves(); ++p)
      s.per_level_ranks[static_cast<std::size_t>(d)] =
          std::max(s.per_level_ranks[static_cast<std::size_t>(d)], b.rank(d, p));
  for (Index r : s.per_level_ranks) s.max_rank = std::max(s.max_rank, r);
  return s;
}

CMat to_dense(const Butterfly& b, std::int64_t max_entries) {
  if (static_cast<std::int64_t>(b.rows()) * b.cols() > max_entries)
    throw InvalidInput("to_dense: " + std::to_string(b.rows()) + " x " + std::to_string(b.cols()) +
                       " exceeds the dense size cap");
  return b.apply(CMat::Identity(b.cols(), b.cols()));
}

namespace {

std::vector<Index> sample_rows(Index begin, Index end, Index count, Rng& rng) {
  std::vector<Index> all(static_cast<std::size_t>(end - begin));
  std::iota(all.begin(), all.end(), begin);
  if (count >= end - begin) return all;
  std::vector<Index> out;
  out.reserve(static_cast<std::size_t>(count));
  std::sample(all.begin(), all.end(), std::back_inserter(out), count, rng);
  return out;
}

Index sample_count(Index available, Index candidates, const DirectOptions& o) {
  const double want = std::ceil(o.chi_s * static_cast<double>(std::min(candidates, o.r_max)));
  return std::min<Index>(available, std::max<Index>(1, static_cast<Index>(want)));
}

std::vector<Index> pick(const std::vector<Index>& from, const std::vector<Index>& which) {
  std::vector<Index> out;
  out.reserve(which.size());
  for (Index w : which) out.push_back(from[static_cast<std::size_t>(w)]);
  return out;
}

}  // namespace

Butterfly construct_direct(const KernelSpec& kernel, const ClusterTree& tree, int src_node, int obs_node,
                           int levels, const DirectOptions& opts) {
  if (!(opts.tol > 0.0 && opts.tol < 1.0)) throw InvalidInput("construct_direct: tol must lie in (0, 1)");
  if (!(opts.chi_s >= 1.0)) throw InvalidInput("construct_direct: chi_s must be at least 1");
  if (opts.r_max < 1) throw InvalidInput("construct_direct: r_max must be positive");
  if (kernel.size() != tree.size()) throw InvalidInput("construct_direct: kernel and tree sizes differ");
  const auto n_nodes = static_cast<int>(tree.nodes().size());
  if (src_node < 0 || src_node >= n_nodes || obs_node < 0 || obs_node >= n_nodes)
    throw InvalidInput("construct_direct: node id out of range");

  const auto row_leaves = tree.descendants(obs_node, levels);
  const auto col_leaves = tree.descendants(src_node, levels);
  const Index nl = static_cast<Index>(row_leaves.size());
  const Index row_base = tree.node(obs_node).begin, col_base = tree.node(src_node).begin;
  std::vector<Index> roff(static_cast<std::size_t>(nl) + 1), coff(static_cast<std::size_t>(nl) + 1);
  for (Index t = 0; t < nl; ++t) {
    roff[static_cast<std::size_t>(t)] = tree.node(row_leaves[static_cast<std::size_t>(t)]).begin - row_base;
    coff[static_cast<std::size_t>(t)] = tree.node(col_leaves[static_cast<std::size_t>(t)]).begin - col_base;
  }
  roff.back() = tree.node(obs_node).size();
  coff.back() = tree.node(src_node).size();

  Butterfly b = Butterfly::zero(levels, roff, coff);
  Rng rng(opts.seed);

  auto skeletonize = [&](const std::vector<Index>& obs_rows, const std::vector<Index>& cand, const char* what,
                         int d, Index p) {
    CMat M = eval_block(kernel, obs_rows, cand);
    try {
      return rrqr_skeleton(M, opts.tol, opts.r_max);
    } catch (const RankOverflow& e) {
      throw RankOverflow(std::string("construct_direct: ") + what + " block (level " + std::to_string(d) +
                             ", pair " + std::to_string(p) + ") needs rank " + std::to_string(e.needed()) +
                             " > r_max " + std::to_string(opts.r_max),
                         e.needed());
    }
  };

  // Skeleton column sets (absolute tree indices) per pair of the current level.
  std::vector<std::vector<Index>> J(static_cast<std::size_t>(nl));
  const Index obs_begin = row_base, obs_end = row_base + roff.back();
  for (Index k = 0; k < nl; ++k) {
    std::vector<Index> cand(static_cast<std::size_t>(coff[static_cast<std::size_t>(k) + 1] -
                                                     coff[static_cast<std::size_t>(k)]));
    std::iota(cand.begin(), cand.end(), col_base + coff[static_cast<std::size_t>(k)]);
    if (cand.empty()) continue;
    const auto rows = sample_rows(obs_begin, obs_end,
                                  sample_count(obs_end - obs_begin, static_cast<Index>(cand.size()), opts), rng);
    if (rows.empty()) continue;
    Skeleton sk = skeletonize(rows, cand, "source", 0, k);
    J[static_cast<std::size_t>(k)] = pick(cand, sk.columns);
    b.Q()[static_cast<std::size_t>(k)] = std::move(sk.interp);
  }

  for (int d = 1; d <= levels; ++d) {
    const Index ngk = Index{1} << (levels - d);
    std::vector<std::vector<Index>> nJ(static_cast<std::size_t>(nl));
    auto& Rd = b.R()[static_cast<std::size_t>(d - 1)];
    for (Index i = 0; i < (Index{1} << d); ++i) {
      const auto [o0, o1] = b.observer_range(d, i);
      for (Index k = 0; k < ngk; ++k) {
        const Index p = i * ngk + k;
        const Index p1 = (i / 2) * (2 * ngk) + 2 * k;
        std::vector<Index> cand = J[static_cast<std::size_t>(p1)];
        const auto& j2 = J[static_cast<std::size_t>(p1) + 1];
        cand.insert(cand.end(), j2.begin(), j2.end());
        if (cand.empty() || o1 == o0) {
          Rd[static_cast<std::size_t>(p)] = CMat::Zero(0, static_cast<Index>(cand.size()));
          continue;
        }
        const auto rows = sample_rows(row_base + o0, row_base + o1,
                                      sample_count(o1 - o0, static_cast<Index>(cand.size()), opts), rng);
        Skeleton sk = skeletonize(rows, cand, "transfer", d, p);
        nJ[static_cast<std::size_t>(p)] = pick(cand, sk.columns);
        Rd[static_cast<std::size_t>(p)] = std::move(sk.interp);
      }
    }
    J.swap(nJ);
  }

  for (Index i = 0; i < nl; ++i) {
    const auto& cols = J[static_cast<std::size_t>(i)];
    std::vector<Index> rows(static_cast<std::size_t>(roff[static_cast<std::size_t>(i) + 1] -
                                                     roff[static_cast<std::size_t>(i)]));
    std::iota(rows.begin(), rows.end(), row_base + roff[static_cast<std::size_t>(i)]);
    b.P()[static_cast<std::size_t>(i)] = eval_block(kernel, rows, cols);
  }
  b.check();
  return b;
}

}  // namespace bflu
