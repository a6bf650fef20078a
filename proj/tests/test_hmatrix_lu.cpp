#include <gtest/gtest.h>

#include <cmath>

#include "bflu/hlu.hpp"
#include "bflu/linalg.hpp"
#include "support.hpp"

using namespace bflu;
using bflu::testing::random_butterfly;
using bflu::testing::rel_err;

namespace {

struct Circle {
  PointCloud cloud;
  KernelSpec kernel;  // original order
  std::shared_ptr<const ClusterTree> tree;
  BlockPartition partition;
};

// EFIE circle at 10 points per wavelength.
Circle efie_circle(Index n, Index leaf, double chi = 2.0) {
  const double k = 2.0 * M_PI;
  auto sys = build_efie2d_system(static_cast<double>(n) / (10.0 * k), k, 10.0);
  Circle c{sys.cloud, sys.kernel, nullptr, {}};
  c.tree = std::make_shared<const ClusterTree>(build_cluster_tree(c.cloud, leaf));
  c.partition = build_block_partition(*c.tree, chi);
  return c;
}

CMat dense_of(const Circle& c) { return eval_block(c.kernel, 0, c.cloud.size(), 0, c.cloud.size()); }

HMatrix identity_h(Index n, Index leaf) {
  const auto cloud = make_circle(1.0, n);
  auto tree = std::make_shared<const ClusterTree>(build_cluster_tree(cloud, leaf));
  const auto part = build_block_partition(*tree, 2.0);
  const auto k = KernelSpec::custom(cloud, [](Index i, Index j) { return Complex(i == j ? 1.0 : 0.0); });
  return HMatrix::assemble(k, tree, part, AssembleOptions{});
}

void check_tiling(const HNode& n, const ClusterTree& t, int depth) {
  if (n.kind == HNode::Kind::butterfly) {
    EXPECT_EQ(n.butterfly->levels(), depth - n.level);
    EXPECT_EQ(n.butterfly->rows(), n.rows);
    EXPECT_EQ(n.butterfly->cols(), n.cols);
  }
  EXPECT_EQ(n.row0, t.node(n.observer).begin);
  EXPECT_EQ(n.col0, t.node(n.source).begin);
  for (const auto& ch : n.children) check_tiling(ch, t, depth);
}

}  // namespace

TEST(Assemble, IdentityKernel) {
  const HMatrix H = identity_h(512, 16);
  Rng rng(1);
  const CMat x = random_gaussian(512, 3, rng);
  EXPECT_LE((H.apply_original(x) - x).norm(), 1e-14 * x.norm());
  EXPECT_EQ(H.max_rank(), 0);
}

TEST(Assemble, MatvecAgainstDense) {
  const Circle c = efie_circle(512, 16);
  const HMatrix H = HMatrix::assemble(c.kernel, c.tree, c.partition, AssembleOptions{});
  const CMat A = dense_of(c);
  Rng rng(2);
  const CMat x = random_gaussian(512, 4, rng);
  EXPECT_LE(rel_err(H.apply_original(x), A * x), 1e-3);
  EXPECT_LE(rel_err(H.as_operator().apply(c.tree->to_tree_order(x)), c.tree->to_tree_order(CMat(A * x))), 1e-3);
  // transpose through the tree
  const CMat At = A.transpose();
  const CMat y = c.tree->to_original_order(H.apply_transpose(c.tree->to_tree_order(x)));
  EXPECT_LE(rel_err(y, At * x), 1e-3);
  check_tiling(H.root(), *c.tree, c.tree->depth());
  EXPECT_GT(H.root().count(HNode::Kind::butterfly), 0);
}

TEST(Assemble, TenTimesTolerance) {
  const Circle c = efie_circle(2048, 32);
  AssembleOptions o;
  o.tol = 1e-4;
  const HMatrix H = HMatrix::assemble(c.kernel, c.tree, c.partition, o);
  const CMat A = dense_of(c);
  Rng rng(3);
  const CMat x = random_gaussian(2048, 2, rng);
  EXPECT_LE(rel_err(H.apply_original(x), A * x), 10.0 * o.tol);
}

TEST(Assemble, StorageTracksNLogSquared) {
  double lo = 1e300, hi = 0.0;
  for (Index n : {256, 512, 1024}) {
    const Circle c = efie_circle(n, 16);
    const HMatrix H = HMatrix::assemble(c.kernel, c.tree, c.partition, AssembleOptions{});
    const double r = static_cast<double>(H.stored_entries()) / nlog2sq(n);
    lo = std::min(lo, r);
    hi = std::max(hi, r);
  }
  EXPECT_LT(hi / lo, 2.0);
}

TEST(Assemble, RejectsBadPartition) {
  const Circle c = efie_circle(256, 16);
  BlockPartition p = c.partition;
  p.near_pairs.push_back(p.near_pairs.front());
  EXPECT_THROW(HMatrix::assemble(c.kernel, c.tree, p, AssembleOptions{}), InvalidInput);
  p = c.partition;
  p.far_pairs.pop_back();
  EXPECT_THROW(HMatrix::assemble(c.kernel, c.tree, p, AssembleOptions{}), InvalidInput);
}

TEST(ButterflyAdd, ZeroAndNegation) {
  const Butterfly b = random_butterfly(3, 256, 256, 3, 1);
  const Butterfly z = Butterfly::zero(3, b.row_offsets(), b.col_offsets());
  ReconstructionOptions o;
  o.r = 4;
  o.eps = 1e-8;
  const Butterfly s = butterfly_add(b, z, o);
  EXPECT_LE(measure_residual(s, LinearOperator::butterfly(std::make_shared<const Butterfly>(b)), 10, 2), 1e-10);
  Butterfly nb = b;
  nb.scale(-1.0);
  o.eps = 0.5;  // the exact sum is zero, so any relative target is met
  const Butterfly d = butterfly_add(b, nb, o);
  Rng rng(3);
  const CMat x = random_gaussian(256, 4, rng);
  EXPECT_LE(d.apply(x).norm(), 1e-10 * b.apply(x).norm());
}

TEST(ButterflyAdd, HelmholtzBlocksDenseSum) {
  const auto h = bflu::testing::helmholtz_block(4096, 2.0 * M_PI * 20.0, 32, 2);
  const auto h2 = bflu::testing::helmholtz_block(4096, 2.0 * M_PI * 25.0, 32, 2);
  DirectOptions d;
  const Butterfly a = construct_direct(h.kernel, *h.tree, h.src, h.obs, 3, d);
  const Butterfly b = construct_direct(h2.kernel, *h2.tree, h2.src, h2.obs, 3, d);
  ReconstructionOptions o;
  o.r = 2 * std::max(storage_stats(a).max_rank, storage_stats(b).max_rank);
  o.eps = 1e-3;
  const Butterfly s = butterfly_add(a, b, o);
  EXPECT_LE(rel_err(to_dense(s), to_dense(a) + to_dense(b)), 1e-3);
}

TEST(ButterflyMul, IdentityAndDenseProduct) {
  const Butterfly b = random_butterfly(2, 256, 256, 3, 4);
  ReconstructionOptions o;
  o.r = 4;
  o.eps = 1e-8;
  const Butterfly l = butterfly_mul(b, LinearOperator::identity(256), Side::left, o);
  const auto bop = LinearOperator::butterfly(std::make_shared<const Butterfly>(b));
  EXPECT_LE(measure_residual(l, bop, 10, 1), 1e-10);

  const HMatrix I = identity_h(256, 16);
  const Butterfly r = butterfly_mul(b, I.as_operator(), Side::right, o);
  EXPECT_LE(measure_residual(r, bop, 10, 2), 1e-10);

  // B * A with A a smooth low-rank-plus-identity dense operator
  Rng rng(5);
  const CMat A = CMat::Identity(256, 256) + 0.1 * random_gaussian(256, 2, rng) * random_gaussian(2, 256, rng) / 16.0;
  o.r = 8;
  o.eps = 1e-3;
  const Butterfly p = butterfly_mul(b, LinearOperator::dense(A), Side::left, o);
  const CMat D = to_dense(b) * A;
  EXPECT_LE(rel_err(to_dense(p), D), 1e-3);
  const CMat x = random_gaussian(256, 2, rng);
  EXPECT_LE(rel_err(p.apply(x), to_dense(b) * (A * x)), 1e-3);
}

TEST(TriangularSolve, IdentityAndDenseOracle) {
  const HMatrix I = identity_h(256, 16);
  LUOptions lo;
  const HLUFactors FI = factorize(I, lo);
  const Butterfly b = random_butterfly(2, 256, 256, 3, 6);
  ReconstructionOptions o;
  o.r = 4;
  o.eps = 1e-8;
  const Butterfly x = triangular_solve(FI.root(), b, Triangle::lower, o);
  EXPECT_LE(rel_err(to_dense(x), to_dense(b)), 1e-10);

  const Circle c = efie_circle(512, 16);
  const HMatrix H = HMatrix::assemble(c.kernel, c.tree, c.partition, AssembleOptions{});
  const HLUFactors F = factorize(H, lo);
  const HNode& d = F.root().child(0, 0);  // 256 x 256 diagonal block
  const Butterfly rb = random_butterfly(2, d.rows, 128, 3, 7);
  o.r = 16;
  o.eps = 1e-3;
  const Butterfly lx = triangular_solve(d, rb, Triangle::lower, o);
  const CMat Ld = lower_apply(d, CMat::Identity(d.rows, d.rows));
  const CMat want = Ld.partialPivLu().solve(to_dense(rb));
  EXPECT_LE(rel_err(to_dense(lx), want), 1e-2);
  Rng rng(8);
  const CMat z = random_gaussian(128, 20, rng);
  EXPECT_LE(rel_err(lower_apply(d, lx.apply(z)), rb.apply(z)), 1e-3);

  const Butterfly cb = random_butterfly(2, 128, d.cols, 3, 9);
  const Butterfly ux = triangular_solve(d, cb, Triangle::upper, o);
  const CMat Ud = upper_apply(d, CMat::Identity(d.rows, d.rows));
  const CMat wantu = Ud.transpose().partialPivLu().solve(to_dense(cb).transpose()).transpose();
  EXPECT_LE(rel_err(to_dense(ux), wantu), 1e-2);
}

TEST(Factorize, AllNearMatchesDenseLU) {
  const Circle c = efie_circle(64, 8, 1e6);
  ASSERT_TRUE(c.partition.far_pairs.empty());
  const HMatrix H = HMatrix::assemble(c.kernel, c.tree, c.partition, AssembleOptions{});
  const HLUFactors F = factorize(H, LUOptions{});
  const CMat A = dense_of(c);
  Rng rng(1);
  const CMat b = random_gaussian(64, 5, rng);
  EXPECT_LE(rel_err(F.solve_original(b), A.partialPivLu().solve(b)), 1e-10);
  EXPECT_EQ(F.stats().reconstructions, 0);
}

TEST(Factorize, CircleProbeResidualAndTiling) {
  const Circle c = efie_circle(1024, 32);
  const HMatrix H = HMatrix::assemble(c.kernel, c.tree, c.partition, AssembleOptions{});
  LUOptions lo;
  const HLUFactors F = factorize(H, lo);
  EXPECT_LE(F.stats().probe_residual, lo.delta);
  EXPECT_LE(factorization_residual(F, H, 10, 99), lo.delta);
  EXPECT_TRUE(same_tiling(H.root(), F.root()));
  EXPECT_GE(F.max_rank(), 1);
  // manufactured solution against the dense matrix
  const CMat A = dense_of(c);
  Rng rng(2);
  const CMat x = random_gaussian(1024, 2, rng);
  const CMat b = A * x;
  const CMat y = F.solve_original(b);
  EXPECT_LE(rel_err(y, x), 5e-2);
  EXPECT_LE(rel_err(A * y, b), 1e-2);
  const CMat y2 = solve_corrected(F, H, b);
  EXPECT_LE(rel_err(y2, x), rel_err(y, x));
}

TEST(Factorize, RejectsBadOptions) {
  const HMatrix I = identity_h(64, 8);
  LUOptions lo;
  lo.delta = 1.5;
  EXPECT_THROW(factorize(I, lo), InvalidInput);
}

TEST(Solve, IdentityAndBatchConsistency) {
  const HMatrix I = identity_h(256, 16);
  const HLUFactors FI = factorize(I, LUOptions{});
  Rng rng(4);
  const CMat b = random_gaussian(256, 3, rng);
  EXPECT_LE((FI.solve_original(b) - b).norm(), 1e-14 * b.norm());

  const Circle c = efie_circle(512, 16);
  const HMatrix H = HMatrix::assemble(c.kernel, c.tree, c.partition, AssembleOptions{});
  const HLUFactors F = factorize(H, LUOptions{});
  const CMat B = random_gaussian(512, 100, rng);
  const CMat X = F.solve_original(B);
  for (Index j = 0; j < 100; ++j) {
    const CMat xj = F.solve_original(B.col(j));
    ASSERT_EQ((xj - X.col(j)).norm(), 0.0) << j;
  }
  EXPECT_THROW(F.solve_original(CMat::Zero(10, 1)), InvalidInput);
}

TEST(Factorize, SeedDeterminism) {
  const Circle c = efie_circle(1024, 32);
  const HMatrix H = HMatrix::assemble(c.kernel, c.tree, c.partition, AssembleOptions{});
  const HLUFactors a = factorize(H, LUOptions{});
  const HLUFactors b = factorize(H, LUOptions{});
  Rng rng(6);
  const CMat x = random_gaussian(1024, 2, rng);
  EXPECT_EQ((a.solve(x) - b.solve(x)).norm(), 0.0);
  EXPECT_EQ(a.stored_entries(), b.stored_entries());
}
