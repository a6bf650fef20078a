#include "bflu/randomized.hpp"

#include <cmath>
#include <limits>

#include "bflu/linalg.hpp"

namespace bflu {

namespace {

using Level = std::vector<CMat>;

RVec singular_values(const CMat& M) {
  if (M.size() == 0) return RVec();
  return Eigen::BDCSVD<CMat>(M).singularValues();
}

// Count of singular values above `thresh`, kept within [1, cap].
Index numerical_rank(const RVec& sv, double thresh, Index cap) {
  Index k = 0;
  while (k < sv.size() && sv(k) > thresh) ++k;
  return std::min(cap, std::max<Index>(1, k));
}

constexpr std::uint64_t kProbeSalt = 0x9E3779B97F4A7C15ULL;

Index ceil_half(int L) { return (L + 1) / 2; }

// Indices of the two inputs (level d-1) and two outputs (level d) of group (j, K).
struct Group {
  Index in1, in2, o1, o2;
};

Group group_at(int L, int d, Index j, Index K) {
  const Index ngk = Index{1} << (L - d);
  const Index in1 = j * (2 * ngk) + 2 * K;
  return {in1, in1 + 1, (2 * j) * ngk + K, (2 * j + 1) * ngk + K};
}

CMat vstack(const CMat& a, const CMat& b) {
  CMat out(a.rows() + b.rows(), std::max(a.cols(), b.cols()));
  if (a.rows()) out.topRows(a.rows()) = a;
  if (b.rows()) out.bottomRows(b.rows()) = b;
  return out;
}

CMat hstack(const CMat& a, const CMat& b) {
  CMat out(std::max(a.rows(), b.rows()), a.cols() + b.cols());
  if (a.cols()) out.leftCols(a.cols()) = a;
  if (b.cols()) out.rightCols(b.cols()) = b;
  return out;
}

class Tracker {
 public:
  Tracker(double tol, Index* count) : tol_(tol), count_(count) {}
  CMat pinv(const CMat& M) const {
    if (count_ && M.size() > 0) {
      const Index full = std::min(M.rows(), M.cols());
      if (10 * pinv_dropped(M, tol_) > full) ++*count_;
    }
    return pinv_trunc(M, tol_);
  }

 private:
  double tol_;
  Index* count_;
};

// X^d from X^{d-1}: X_o = R_o [X_in1; X_in2].
Level forward_level(const Butterfly& b, int d, const Level& prev) {
  const Index nl = b.leaves();
  const Index ngk = Index{1} << (b.levels() - d);
  Level out(static_cast<std::size_t>(nl));
  const auto& Rd = b.R()[static_cast<std::size_t>(d - 1)];
  for (Index p = 0; p < nl; ++p) {
    const Index i = p / ngk, k = p % ngk;
    const Index p1 = (i / 2) * (2 * ngk) + 2 * k;
    const auto& R = Rd[static_cast<std::size_t>(p)];
    const auto& x1 = prev[static_cast<std::size_t>(p1)];
    const auto& x2 = prev[static_cast<std::size_t>(p1 + 1)];
    const Index q = std::max(x1.cols(), x2.cols());
    CMat y = CMat::Zero(R.rows(), q);
    if (x1.rows()) y.noalias() += R.leftCols(x1.rows()) * x1;
    if (x2.rows()) y.noalias() += R.rightCols(x2.rows()) * x2;
    out[static_cast<std::size_t>(p)] = std::move(y);
  }
  return out;
}

// Z^{d-1} from Z^d for row-vector partial products: Z_in += Z_o R_o(:, in).
Level backward_level(const Butterfly& b, int d, const Level& cur, Index q) {
  const Index nl = b.leaves();
  const Index ngk = Index{1} << (b.levels() - d);
  Level out(static_cast<std::size_t>(nl));
  for (Index p = 0; p < nl; ++p) out[static_cast<std::size_t>(p)] = CMat::Zero(q, b.rank(d - 1, p));
  const auto& Rd = b.R()[static_cast<std::size_t>(d - 1)];
  for (Index p = 0; p < nl; ++p) {
    const Index i = p / ngk, k = p % ngk;
    const Index p1 = (i / 2) * (2 * ngk) + 2 * k;
    const auto& R = Rd[static_cast<std::size_t>(p)];
    const auto& z = cur[static_cast<std::size_t>(p)];
    const Index r1 = b.rank(d - 1, p1);
    if (R.rows() == 0) continue;
    if (r1) out[static_cast<std::size_t>(p1)].noalias() += z * R.leftCols(r1);
    if (R.cols() > r1) out[static_cast<std::size_t>(p1 + 1)].noalias() += z * R.rightCols(R.cols() - r1);
  }
  return out;
}

Level right_inputs(const Butterfly& b, const CMat& V_R) {
  Level x(static_cast<std::size_t>(b.leaves()));
  for (Index k = 0; k < b.leaves(); ++k) {
    const auto [c0, c1] = b.source_range(0, k);
    x[static_cast<std::size_t>(k)] = b.Q()[static_cast<std::size_t>(k)] * V_R.middleRows(c0, c1 - c0);
  }
  return x;
}

Level left_inputs(const Butterfly& b, const CMat& V_L) {
  Level z(static_cast<std::size_t>(b.leaves()));
  for (Index i = 0; i < b.leaves(); ++i) {
    const auto [r0, r1] = b.observer_range(b.levels(), i);
    z[static_cast<std::size_t>(i)] = V_L.middleCols(r0, r1 - r0) * b.P()[static_cast<std::size_t>(i)];
  }
  return z;
}

double ratio(double num, double den) {
  if (den == 0.0) return num == 0.0 ? 0.0 : std::numeric_limits<double>::infinity();
  return num / den;
}

double sketch_residual(const Butterfly& b, const Sketch& s) {
  const double num = (b.apply(s.V_R) - s.U_R).norm() + (b.apply_transpose(s.V_L.transpose()).transpose() - s.U_L).norm();
  return ratio(num, s.U_R.norm() + s.U_L.norm());
}

void set_group_rows(Butterfly& b, int d, const Group& g, const CMat& G) {
  auto& Rd = b.R()[static_cast<std::size_t>(d - 1)];
  const Index r1 = Rd[static_cast<std::size_t>(g.o1)].rows();
  Rd[static_cast<std::size_t>(g.o1)] = G.topRows(r1);
  Rd[static_cast<std::size_t>(g.o2)] = G.bottomRows(G.rows() - r1);
}

CMat group_matrix(const Butterfly& b, int d, const Group& g) {
  const auto& Rd = b.R()[static_cast<std::size_t>(d - 1)];
  return vstack(Rd[static_cast<std::size_t>(g.o1)], Rd[static_cast<std::size_t>(g.o2)]);
}

void check_shape(const ButterflyShape& s, Index m, Index n) {
  const Index nl = Index{1} << s.levels;
  if (s.levels < 0 || static_cast<Index>(s.row_offsets.size()) != nl + 1 ||
      static_cast<Index>(s.col_offsets.size()) != nl + 1)
    throw InvalidInput("butterfly shape: offsets must have 2^L + 1 entries");
  if (s.row_offsets.front() != 0 || s.col_offsets.front() != 0 || s.row_offsets.back() != m ||
      s.col_offsets.back() != n)
    throw InvalidInput("butterfly shape does not match the operator dimensions");
}

}  // namespace

std::string to_string(Scheme s) { return s == Scheme::iterative ? "iterative" : "non_iterative"; }

Sketch draw_sketch(const LinearOperator& op, Index n_rnd, std::uint64_t seed) {
  if (n_rnd < 1 || n_rnd > std::min(op.rows(), op.cols()))
    throw InvalidInput("draw_sketch: n_rnd " + std::to_string(n_rnd) + " must lie in [1, min(m, n)]");
  Rng rng(seed);
  Sketch s;
  s.n_rnd = n_rnd;
  s.seed = seed;
  s.V_R = random_gaussian(op.cols(), n_rnd, rng);
  s.V_L = random_gaussian(n_rnd, op.rows(), rng);
  s.U_R = op.apply(s.V_R);
  s.U_L = op.apply_left(s.V_L);
  return s;
}

ButterflyShape ButterflyShape::uniform(Index m, Index n, int levels) {
  if (levels < 0 || levels > 30) throw InvalidInput("butterfly levels out of range");
  const Index nl = Index{1} << levels;
  ButterflyShape s;
  s.levels = levels;
  for (Index t = 0; t <= nl; ++t) {
    s.row_offsets.push_back(t * m / nl);
    s.col_offsets.push_back(t * n / nl);
  }
  return s;
}

Index pair_rank(const ButterflyShape& shape, Index r, int d, Index p) {
  const int L = shape.levels;
  const Index ngk = Index{1} << (L - d);
  const Index i = p / ngk, k = p % ngk;
  const Index rw = ngk, cw = Index{1} << d;
  const Index mo = shape.row_offsets[static_cast<std::size_t>((i + 1) * rw)] -
                   shape.row_offsets[static_cast<std::size_t>(i * rw)];
  const Index ns = shape.col_offsets[static_cast<std::size_t>((k + 1) * cw)] -
                   shape.col_offsets[static_cast<std::size_t>(k * cw)];
  return std::min({r, mo, ns});
}

Butterfly recover_projections(const Sketch& sketch, const ButterflyShape& shape, Index r, std::uint64_t seed,
                              double pinv_tol, Index* ill_conditioned, double rank_tol) {
  if (r < 1) throw InvalidInput("recover_projections: r must be positive");
  if (sketch.n_rnd < r) throw InvalidInput("recover_projections: n_rnd below the requested rank");
  if (rank_tol < 0.0) throw InvalidInput("recover_projections: rank_tol must be non-negative");
  check_shape(shape, sketch.U_R.rows(), sketch.U_L.cols());
  const int L = shape.levels;
  Butterfly b = Butterfly::zero(L, shape.row_offsets, shape.col_offsets);
  const Index nl = b.leaves();
  Tracker pinv(pinv_tol, ill_conditioned);
  Rng rng(seed);

  // Outer ranks: r, or the numerical rank of each sketch block when adaptive.
  std::vector<Index> rP(static_cast<std::size_t>(nl)), rQ(static_cast<std::size_t>(nl));
  for (Index t = 0; t < nl; ++t) {
    rP[static_cast<std::size_t>(t)] = pair_rank(shape, r, L, t);
    rQ[static_cast<std::size_t>(t)] = pair_rank(shape, r, 0, t);
  }
  if (rank_tol > 0.0) {
    std::vector<RVec> svP, svQ;
    double top = 0.0;
    for (Index t = 0; t < nl; ++t) {
      const auto [r0, r1] = b.observer_range(L, t);
      const auto [c0, c1] = b.source_range(0, t);
      svP.push_back(singular_values(sketch.U_R.middleRows(r0, r1 - r0)));
      svQ.push_back(singular_values(sketch.U_L.middleCols(c0, c1 - c0)));
      if (svP.back().size()) top = std::max(top, svP.back()(0));
      if (svQ.back().size()) top = std::max(top, svQ.back()(0));
    }
    for (Index t = 0; t < nl; ++t) {
      auto& a = rP[static_cast<std::size_t>(t)];
      auto& q = rQ[static_cast<std::size_t>(t)];
      a = numerical_rank(svP[static_cast<std::size_t>(t)], rank_tol * top, a);
      q = numerical_rank(svQ[static_cast<std::size_t>(t)], rank_tol * top, q);
    }
  }

  for (Index i = 0; i < nl; ++i) {
    const auto [r0, r1] = b.observer_range(L, i);
    const CMat Pbar = random_gaussian(r1 - r0, rP[static_cast<std::size_t>(i)], rng);
    const auto U = sketch.U_R.middleRows(r0, r1 - r0);
    b.P()[static_cast<std::size_t>(i)] = U * pinv.pinv(Pbar.transpose() * U);
  }
  for (Index k = 0; k < nl; ++k) {
    const auto [c0, c1] = b.source_range(0, k);
    const CMat Qbar = random_gaussian(rQ[static_cast<std::size_t>(k)], c1 - c0, rng);
    const auto U = sketch.U_L.middleCols(c0, c1 - c0);
    b.Q()[static_cast<std::size_t>(k)] = pinv.pinv(U * Qbar.transpose()) * U;
  }
  if (rank_tol > 0.0) return b;  // interior shapes are decided by the caller
  for (int d = 1; d <= L; ++d) {
    const Index ngk = Index{1} << (L - d);
    for (Index p = 0; p < nl; ++p) {
      const Index i = p / ngk, k = p % ngk;
      const Index p1 = (i / 2) * (2 * ngk) + 2 * k;
      b.R()[static_cast<std::size_t>(d - 1)][static_cast<std::size_t>(p)] =
          CMat::Zero(pair_rank(shape, r, d, p), pair_rank(shape, r, d - 1, p1) + pair_rank(shape, r, d - 1, p1 + 1));
    }
  }
  return b;
}

std::pair<Butterfly, ReconstructionReport> reconstruct_iterative(const LinearOperator& op,
                                                                 const ButterflyShape& shape,
                                                                 const ReconstructionOptions& opts) {
  const int L = shape.levels;
  if (L < 1) throw InvalidInput("reconstruct_iterative: L must be at least 1");
  if (opts.r < 1 || opts.c < 0 || opts.max_iter < 1 || !(opts.eps > 0.0))
    throw InvalidInput("reconstruct_iterative: invalid options");
  check_shape(shape, op.rows(), op.cols());
  const Index n_rnd = (L + 1) * opts.r + opts.c;
  if (n_rnd > std::min(op.rows(), op.cols()))
    throw InvalidInput("reconstruct_iterative: n_rnd = (L+1) r + c = " + std::to_string(n_rnd) +
                       " exceeds min(m, n)");

  const auto f0 = op.forward_applies(), t0 = op.transpose_applies();
  ReconstructionReport rep;
  rep.scheme = Scheme::iterative;
  rep.rank = opts.r;
  rep.n_rnd = n_rnd;

  const Sketch sk = draw_sketch(op, n_rnd, opts.seed);
  Butterfly b = recover_projections(sk, shape, opts.r, opts.seed + 1, opts.pinv_tol, &rep.ill_conditioned_blocks);
  Tracker pinv(opts.pinv_tol, nullptr);
  const Index nl = b.leaves();

  Rng rng(opts.seed + 2);
  for (auto& lvl : b.R())
    for (auto& R : lvl) R = random_gaussian(R.rows(), R.cols(), rng);

  const Level X0 = right_inputs(b, sk.V_R);
  const Level ZL = left_inputs(b, sk.V_L);
  Level TL(static_cast<std::size_t>(nl)), S0(static_cast<std::size_t>(nl));
  for (Index i = 0; i < nl; ++i) {
    const auto [r0, r1] = b.observer_range(L, i);
    TL[static_cast<std::size_t>(i)] = pinv.pinv(b.P()[static_cast<std::size_t>(i)]) * sk.U_R.middleRows(r0, r1 - r0);
  }
  for (Index k = 0; k < nl; ++k) {
    const auto [c0, c1] = b.source_range(0, k);
    S0[static_cast<std::size_t>(k)] = sk.U_L.middleCols(c0, c1 - c0) * pinv.pinv(b.Q()[static_cast<std::size_t>(k)]);
  }

  auto partial_right = [&](int upto) {
    Level x = X0;
    for (int d = 1; d <= upto; ++d) x = forward_level(b, d, x);
    return x;
  };
  auto partial_left = [&](int downto) {
    Level z = ZL;
    for (int d = L; d > downto; --d) z = backward_level(b, d, z, n_rnd);
    return z;
  };
  auto update_left = [&](int e, const Level& S) {
    const Level Z = partial_left(e);
    for (Index j = 0; j < (Index{1} << (e - 1)); ++j)
      for (Index K = 0; K < (Index{1} << (L - e)); ++K) {
        const Group g = group_at(L, e, j, K);
        const CMat Zo = hstack(Z[static_cast<std::size_t>(g.o1)], Z[static_cast<std::size_t>(g.o2)]);
        const CMat Si = hstack(S[static_cast<std::size_t>(g.in1)], S[static_cast<std::size_t>(g.in2)]);
        set_group_rows(b, e, g, pinv.pinv(Zo) * Si);
      }
  };

  const int stop = static_cast<int>(ceil_half(L)) + 1;
  bool converged = false;
  for (int it = 1; it <= opts.max_iter; ++it) {
    Level T = TL, S = S0;
    for (int d = L; d >= stop; --d) {
      const Index ngk = Index{1} << (L - d);
      const Index nj = Index{1} << (d - 1);
      // right update of R^d
      const Level X = partial_right(d - 1);
      Level Tn(static_cast<std::size_t>(nl));
      for (Index j = 0; j < nj; ++j)
        for (Index K = 0; K < ngk; ++K) {
          const Group g = group_at(L, d, j, K);
          const CMat Xi = vstack(X[static_cast<std::size_t>(g.in1)], X[static_cast<std::size_t>(g.in2)]);
          const CMat To = vstack(T[static_cast<std::size_t>(g.o1)], T[static_cast<std::size_t>(g.o2)]);
          const CMat G = To * pinv.pinv(Xi);
          set_group_rows(b, d, g, G);
          const CMat Ti = pinv.pinv(G) * To;
          const Index r1 = X[static_cast<std::size_t>(g.in1)].rows();
          Tn[static_cast<std::size_t>(g.in1)] = Ti.topRows(r1);
          Tn[static_cast<std::size_t>(g.in2)] = Ti.bottomRows(Ti.rows() - r1);
        }
      T = std::move(Tn);

      // paired left update of R^e
      const int e = L - d + 1;
      update_left(e, S);
      Level Sn(static_cast<std::size_t>(nl));
      const Index ngk_e = Index{1} << (L - e);
      for (Index j = 0; j < (Index{1} << (e - 1)); ++j)
        for (Index K = 0; K < ngk_e; ++K) {
          const Group g = group_at(L, e, j, K);
          const CMat Si = hstack(S[static_cast<std::size_t>(g.in1)], S[static_cast<std::size_t>(g.in2)]);
          const CMat So = Si * pinv.pinv(group_matrix(b, e, g));
          const Index r1 = b.rank(e, g.o1);
          Sn[static_cast<std::size_t>(g.o1)] = So.leftCols(r1);
          Sn[static_cast<std::size_t>(g.o2)] = So.rightCols(So.cols() - r1);
        }
      S = std::move(Sn);
    }
    if (L % 2 == 1) update_left(static_cast<int>(ceil_half(L)), S);

    const double res = sketch_residual(b, sk);
    rep.residual_history.push_back(res);
    rep.residual = res;
    rep.k_iter = it;
    if (res <= opts.eps) {
      converged = true;
      break;
    }
  }
  rep.forward_applies = op.forward_applies() - f0;
  rep.transpose_applies = op.transpose_applies() - t0;
  if (!converged)
    throw NonConvergence("iterative reconstruction: residual " + std::to_string(rep.residual) + " above " +
                         std::to_string(opts.eps) + " after " + std::to_string(opts.max_iter) + " sweeps");
  return {std::move(b), rep};
}

std::pair<Butterfly, ReconstructionReport> reconstruct_noniterative(const LinearOperator& op,
                                                                    const ButterflyShape& shape,
                                                                    const ReconstructionOptions& opts) {
  const int L = shape.levels;
  if (L < 0) throw InvalidInput("reconstruct_noniterative: negative level count");
  if (opts.r < 1 || opts.c < 0 || opts.rank_tol < 0.0) throw InvalidInput("reconstruct_noniterative: invalid options");
  check_shape(shape, op.rows(), op.cols());
  const Index n_rnd = std::min(opts.r + opts.c, std::min(op.rows(), op.cols()));
  const Index r = std::min(opts.r, n_rnd);
  const bool adaptive = opts.rank_tol > 0.0;

  const auto f0 = op.forward_applies(), t0 = op.transpose_applies();
  ReconstructionReport rep;
  rep.scheme = Scheme::non_iterative;
  rep.rank = r;
  rep.n_rnd = n_rnd;
  rep.k_iter = 1;

  const Sketch sk = draw_sketch(op, n_rnd, opts.seed);
  Butterfly b = recover_projections(sk, shape, r, opts.seed + 1, opts.pinv_tol, &rep.ill_conditioned_blocks,
                                    opts.rank_tol);
  Tracker pinv(opts.pinv_tol, &rep.ill_conditioned_blocks);
  const Index nl = b.leaves();
  const Index m_rows = op.rows(), n_cols = op.cols();
  Rng rng(opts.seed + 3);
  const int half = L / 2;
  auto finish = [&]() {
    b.check();
    rep.residual = sketch_residual(b, sk);
    rep.forward_applies = op.forward_applies() - f0;
    rep.transpose_applies = op.transpose_applies() - t0;
    return std::pair<Butterfly, ReconstructionReport>{std::move(b), rep};
  };
  // Rank of one pair: r-capped, or adaptive against the level's largest singular value.
  auto choose = [&](const RVec& sv, double top, Index cap) {
    cap = std::min<Index>(cap, sv.size());
    return adaptive ? numerical_rank(sv, opts.rank_tol * top, cap) : cap;
  };

  if (L == 0) {
    // Plain low rank: B ~ (B V) pinv(Q V) Q with Q spanning the row space.
    b.P()[0] = sk.U_R * pinv.pinv(b.Q()[0] * sk.V_R);
    return finish();
  }

  // Left half: E^d_p = R^d_p blockdiag(E^{d-1}_{p1}, E^{d-1}_{p2}), explicit row bases.
  Level E = b.Q();
  for (int d = 1; d <= half; ++d) {
    const Index ngk = Index{1} << (L - d);
    Level Epinv(static_cast<std::size_t>(nl));
    for (Index p = 0; p < nl; ++p) Epinv[static_cast<std::size_t>(p)] = pinv.pinv(E[static_cast<std::size_t>(p)]);
    std::vector<Eigen::BDCSVD<CMat>> svd(static_cast<std::size_t>(nl));
    double top = 0.0;
    for (Index i = 0; i < (Index{1} << d); ++i) {
      const auto [o0, o1] = b.observer_range(d, i);
      CMat V = CMat::Zero(n_rnd, m_rows);
      V.middleCols(o0, o1 - o0) = random_gaussian(n_rnd, o1 - o0, rng);
      const CMat U = op.apply_left(V);
      for (Index k = 0; k < ngk; ++k) {
        const Index p = i * ngk + k;
        const Index p1 = (i / 2) * (2 * ngk) + 2 * k, p2 = p1 + 1;
        const auto [a0, a1] = b.source_range(d - 1, 2 * k);
        const auto [c0, c1] = b.source_range(d - 1, 2 * k + 1);
        const CMat M = hstack(U.middleCols(a0, a1 - a0) * Epinv[static_cast<std::size_t>(p1)],
                              U.middleCols(c0, c1 - c0) * Epinv[static_cast<std::size_t>(p2)]);
        auto& s = svd[static_cast<std::size_t>(p)];
        s.compute(M, Eigen::ComputeThinV);
        if (s.singularValues().size()) top = std::max(top, s.singularValues()(0));
      }
    }
    Level En(static_cast<std::size_t>(nl));
    auto& Rd = b.R()[static_cast<std::size_t>(d - 1)];
    for (Index i = 0; i < (Index{1} << d); ++i)
      for (Index k = 0; k < ngk; ++k) {
        const Index p = i * ngk + k;
        const Index p1 = (i / 2) * (2 * ngk) + 2 * k, p2 = p1 + 1;
        const auto [a0, a1] = b.source_range(d - 1, 2 * k);
        const auto [c0, c1] = b.source_range(d - 1, 2 * k + 1);
        const auto& s = svd[static_cast<std::size_t>(p)];
        const Index rp = choose(s.singularValues(), top, pair_rank(shape, r, d, p));
        // Orthonormal rows spanning the dominant row space.
        CMat R = s.matrixV().leftCols(rp).adjoint();
        const Index r1 = E[static_cast<std::size_t>(p1)].rows();
        CMat Ep(rp, c1 - a0);
        Ep.leftCols(a1 - a0) = R.leftCols(r1) * E[static_cast<std::size_t>(p1)];
        Ep.rightCols(c1 - c0) = R.rightCols(R.cols() - r1) * E[static_cast<std::size_t>(p2)];
        Rd[static_cast<std::size_t>(p)] = std::move(R);
        En[static_cast<std::size_t>(p)] = std::move(Ep);
      }
    E = std::move(En);
  }

  // Right half: F^{d-1}_(j,k') = blockdiag(F_(2j,K), F_(2j+1,K)) R^d_g(:, half), explicit column bases.
  Level F = b.P();
  for (int d = L; d > half; --d) {
    const Index ngk = Index{1} << (L - d);
    const Index nj = Index{1} << (d - 1);
    Level Fpinv(static_cast<std::size_t>(nl));
    for (Index p = 0; p < nl; ++p) Fpinv[static_cast<std::size_t>(p)] = pinv.pinv(F[static_cast<std::size_t>(p)]);
    // Column block of R^d for input pair `in`; computed before ranks are chosen.
    Level C(static_cast<std::size_t>(nl));
    std::vector<Eigen::BDCSVD<CMat>> svd(static_cast<std::size_t>(nl));
    double top = 0.0;
    for (Index kp = 0; kp < 2 * ngk; ++kp) {
      const auto [s0, s1] = b.source_range(d - 1, kp);
      CMat V = CMat::Zero(n_cols, n_rnd);
      V.middleRows(s0, s1 - s0) = random_gaussian(s1 - s0, n_rnd, rng);
      const CMat U = op.apply(V);
      const Index K = kp / 2;
      for (Index j = 0; j < nj; ++j) {
        const Index o1 = (2 * j) * ngk + K, o2 = (2 * j + 1) * ngk + K;
        const Index in = j * (2 * ngk) + kp;
        const auto [u0, u1] = b.observer_range(d, 2 * j);
        const auto [w0, w1] = b.observer_range(d, 2 * j + 1);
        const CMat N = vstack(Fpinv[static_cast<std::size_t>(o1)] * U.middleRows(u0, u1 - u0),
                              Fpinv[static_cast<std::size_t>(o2)] * U.middleRows(w0, w1 - w0));
        if (d - 1 == half) {
          C[static_cast<std::size_t>(in)] = N * pinv.pinv(E[static_cast<std::size_t>(in)] * V.middleRows(s0, s1 - s0));
        } else {
          auto& s = svd[static_cast<std::size_t>(in)];
          s.compute(N, Eigen::ComputeThinU);
          if (s.singularValues().size()) top = std::max(top, s.singularValues()(0));
        }
      }
    }
    if (d - 1 > half)
      for (Index in = 0; in < nl; ++in) {
        const auto& s = svd[static_cast<std::size_t>(in)];
        C[static_cast<std::size_t>(in)] = s.matrixU().leftCols(choose(s.singularValues(), top, pair_rank(shape, r, d - 1, in)));
      }

    Level Fn(static_cast<std::size_t>(nl));
    auto& Rd = b.R()[static_cast<std::size_t>(d - 1)];
    for (Index j = 0; j < nj; ++j)
      for (Index K = 0; K < ngk; ++K) {
        const Index o1 = (2 * j) * ngk + K, o2 = (2 * j + 1) * ngk + K;
        const Index in1 = j * (2 * ngk) + 2 * K, in2 = in1 + 1;
        const Index ro1 = F[static_cast<std::size_t>(o1)].cols();
        const CMat& Ca = C[static_cast<std::size_t>(in1)];
        const CMat& Cb = C[static_cast<std::size_t>(in2)];
        Rd[static_cast<std::size_t>(o1)] = hstack(Ca.topRows(ro1), Cb.topRows(ro1));
        Rd[static_cast<std::size_t>(o2)] = hstack(Ca.bottomRows(Ca.rows() - ro1), Cb.bottomRows(Cb.rows() - ro1));
        if (d - 1 > half) {
          const auto [u0, u1] = b.observer_range(d, 2 * j);
          const auto [w0, w1] = b.observer_range(d, 2 * j + 1);
          for (const Index in : {in1, in2}) {
            const CMat& Ci = C[static_cast<std::size_t>(in)];
            CMat Fi(u1 - u0 + w1 - w0, Ci.cols());
            Fi.topRows(u1 - u0) = F[static_cast<std::size_t>(o1)] * Ci.topRows(ro1);
            Fi.bottomRows(w1 - w0) = F[static_cast<std::size_t>(o2)] * Ci.bottomRows(Ci.rows() - ro1);
            Fn[static_cast<std::size_t>(in)] = std::move(Fi);
          }
        }
      }
    F = std::move(Fn);
  }
  return finish();
}

double measure_residual(const Butterfly& b, const LinearOperator& op, Index n_probe, std::uint64_t seed) {
  if (n_probe < 1) throw InvalidInput("measure_residual: n_probe must be positive");
  if (b.rows() != op.rows() || b.cols() != op.cols()) throw InvalidInput("measure_residual: shape mismatch");
  Rng rng(seed);
  const CMat X = random_gaussian(op.cols(), n_probe, rng);
  const CMat Y = random_gaussian(n_probe, op.rows(), rng);
  const CMat opX = op.apply(X);
  const CMat Yop = op.apply_left(Y);
  const double num = (b.apply(X) - opX).norm() + (b.apply_transpose(Y.transpose()).transpose() - Yop).norm();
  return ratio(num, opX.norm() + Yop.norm());
}

std::pair<Butterfly, ReconstructionReport> reconstruct_auto(const LinearOperator& op, const ButterflyShape& shape,
                                                            const ReconstructionOptions& opts) {
  auto attempt = [&](Index r) {
    ReconstructionOptions o = opts;
    o.r = r;
    const int L = shape.levels;
    const bool fits = (L + 1) * r + o.c <= std::min(op.rows(), op.cols());
    std::pair<Butterfly, ReconstructionReport> out;
    bool fell_back = false;
    if (L >= 1 && L <= opts.level_threshold && fits) {
      try {
        out = reconstruct_iterative(op, shape, o);
      } catch (const NonConvergence&) {
        fell_back = true;
      }
      if (!fell_back) {
        out.second.probe_residual = measure_residual(out.first, op, o.n_probe, o.seed ^ kProbeSalt);
        return out;
      }
    }
    out = reconstruct_noniterative(op, shape, o);
    out.second.fallback = fell_back;
    out.second.probe_residual = measure_residual(out.first, op, o.n_probe, o.seed ^ kProbeSalt);
    return out;
  };

  // Accept on the scheme's own residual; fresh probes must stay within 3 eps.
  auto ok = [&](const ReconstructionReport& r) { return r.residual <= opts.eps && r.probe_residual <= 3.0 * opts.eps; };
  auto res = attempt(std::min(opts.r, opts.r_max));
  if (ok(res.second)) return res;
  const Index r2 = std::min(2 * opts.r, opts.r_max);
  if (r2 > res.second.rank) {
    res = attempt(r2);
    res.second.retries = 1;
    if (ok(res.second)) return res;
  }
  throw ReconstructionFailed("reconstruction residual " + std::to_string(res.second.residual) + " (fresh probes " +
                                 std::to_string(res.second.probe_residual) + ") above " + std::to_string(opts.eps),
                             res.second);
}

}  // namespace bflu
