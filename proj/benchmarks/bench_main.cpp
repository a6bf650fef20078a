#include <benchmark/benchmark.h>

#include <cmath>
#include <map>
#include <memory>

#include "bflu/hlu.hpp"
#include "bflu/linalg.hpp"
#include "bflu/randomized.hpp"

using namespace bflu;

namespace {

constexpr double kK = 2.0 * M_PI;

struct Setup {
  Efie2dSystem sys;
  std::shared_ptr<const ClusterTree> tree;
  BlockPartition part;
};

// circle at 10 points per wavelength, cached per size
const Setup& setup(Index n) {
  static std::map<Index, std::unique_ptr<Setup>> cache;
  auto& s = cache[n];
  if (!s) {
    s = std::make_unique<Setup>();
    s->sys = build_efie2d_system(static_cast<double>(n) / (10.0 * kK), kK, 10.0);
    s->tree = std::make_shared<const ClusterTree>(build_cluster_tree(s->sys.cloud, 64));
    s->part = build_block_partition(*s->tree, 2.0);
  }
  return *s;
}

void BM_Assemble(benchmark::State& st) {
  const Setup& s = setup(st.range(0));
  for (auto _ : st) {
    HMatrix H = HMatrix::assemble(s.sys.kernel, s.tree, s.part, AssembleOptions{});
    benchmark::DoNotOptimize(H.stored_entries());
  }
  st.SetComplexityN(st.range(0));
}
BENCHMARK(BM_Assemble)->RangeMultiplier(2)->Range(1024, 8192)->Unit(benchmark::kMillisecond)->Complexity();

void BM_Matvec(benchmark::State& st) {
  const Setup& s = setup(st.range(0));
  const HMatrix H = HMatrix::assemble(s.sys.kernel, s.tree, s.part, AssembleOptions{});
  Rng rng(1);
  const CMat x = random_gaussian(st.range(0), 1, rng);
  for (auto _ : st) benchmark::DoNotOptimize(H.apply(x).data());
  st.SetComplexityN(st.range(0));
}
BENCHMARK(BM_Matvec)->RangeMultiplier(2)->Range(1024, 16384)->Unit(benchmark::kMicrosecond)->Complexity();

void BM_Factorize(benchmark::State& st) {
  const Setup& s = setup(st.range(0));
  const HMatrix H = HMatrix::assemble(s.sys.kernel, s.tree, s.part, AssembleOptions{});
  for (auto _ : st) {
    HLUFactors F = factorize(H, LUOptions{});
    benchmark::DoNotOptimize(F.stored_entries());
  }
  st.SetComplexityN(st.range(0));
}
BENCHMARK(BM_Factorize)->RangeMultiplier(2)->Range(1024, 4096)->Unit(benchmark::kMillisecond)->Iterations(1);

void BM_Solve(benchmark::State& st) {
  const Setup& s = setup(st.range(0));
  const HMatrix H = HMatrix::assemble(s.sys.kernel, s.tree, s.part, AssembleOptions{});
  const HLUFactors F = factorize(H, LUOptions{});
  Rng rng(2);
  const CMat b = random_gaussian(st.range(0), 1, rng);
  for (auto _ : st) benchmark::DoNotOptimize(F.solve(b).data());
  st.SetComplexityN(st.range(0));
}
BENCHMARK(BM_Solve)->RangeMultiplier(2)->Range(1024, 4096)->Unit(benchmark::kMicrosecond);

// Helmholtz block compressed directly, then rebuilt from products with each scheme
void BM_Reconstruct(benchmark::State& st) {
  const int L = static_cast<int>(st.range(0));
  const bool iterative = st.range(1) != 0;
  const Index n = 8192;
  const PointCloud cloud = make_circle(static_cast<double>(n) / (10.0 * kK), n);
  const ClusterTree tree = build_cluster_tree(cloud, 32);
  const KernelSpec K = KernelSpec::helmholtz2d(cloud, kK).permuted(tree.perm());
  const auto lv = tree.level_nodes(3);
  int obs = -1;
  for (int o : lv)
    if (is_far(tree.node(lv.front()), tree.node(o), 2.0)) obs = o;
  auto b = std::make_shared<const Butterfly>(construct_direct(K, tree, lv.front(), obs, L, DirectOptions{}));
  const LinearOperator op = LinearOperator::butterfly(b);
  ReconstructionOptions ro;
  ro.r = static_cast<Index>(std::ceil(1.2 * static_cast<double>(storage_stats(*b).max_rank)));
  ro.rank_tol = iterative ? 0.0 : 1e-4;
  for (auto _ : st) {
    try {
      auto res = iterative ? reconstruct_iterative(op, ButterflyShape::of(*b), ro)
                           : reconstruct_noniterative(op, ButterflyShape::of(*b), ro);
      benchmark::DoNotOptimize(res.second.residual);
    } catch (const NonConvergence&) {
      st.SkipWithError("no convergence");
      break;
    }
  }
}
BENCHMARK(BM_Reconstruct)->ArgsProduct({{1, 2, 3, 4}, {0, 1}})->Unit(benchmark::kMillisecond)->Iterations(1);

}  // namespace

BENCHMARK_MAIN();
