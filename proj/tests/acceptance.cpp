// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any fails.
#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <cmath>
#include <cstdio>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "bflu/studies.hpp"
#include "bflu/linalg.hpp"

using namespace bflu;

namespace {

using Clock = std::chrono::steady_clock;
double since(Clock::time_point t) { return std::chrono::duration<double>(Clock::now() - t).count(); }

int failures = 0;

void report(int id, const char* name, bool pass, const std::string& detail) {
  std::printf("criterion %d %-26s %s  %s\n", id, name, pass ? "PASS" : "FAIL", detail.c_str());
  std::fflush(stdout);
  if (!pass) ++failures;
}

std::string f(const char* fmt, double v) {
  char b[64];
  std::snprintf(b, sizeof b, fmt, v);
  return b;
}

double rel(const CMat& a, const CMat& b) { return (a - b).norm() / b.norm(); }

struct Circle {
  Efie2dSystem sys;
  std::shared_ptr<const ClusterTree> tree;
  BlockPartition part;
};

constexpr double kK = 2.0 * M_PI;

Circle circle(Index n, Index leaf = 64, double chi = 2.0) {
  Circle c{build_efie2d_system(static_cast<double>(n) / (10.0 * kK), kK, 10.0), nullptr, {}};
  c.tree = std::make_shared<const ClusterTree>(build_cluster_tree(c.sys.cloud, leaf));
  c.part = build_block_partition(*c.tree, chi);
  return c;
}

// Dense product in row strips without holding the matrix.
CMat dense_apply(const KernelSpec& k, const CMat& x) {
  const Index n = k.size();
  CMat y(n, x.cols());
  for (Index r0 = 0; r0 < n; r0 += 256) {
    const Index nr = std::min<Index>(256, n - r0);
    y.middleRows(r0, nr) = eval_block(k, r0, nr, 0, n) * x;
  }
  return y;
}

void criterion1() {
  const auto t0 = Clock::now();
  const Circle c = circle(4096);
  const HMatrix H = HMatrix::assemble(c.sys.kernel, c.tree, c.part, AssembleOptions{});
  Rng rng(101);
  const CMat x = random_gaussian(4096, 2, rng);
  const double err = rel(H.apply_original(x), dense_apply(c.sys.kernel, x));
  const double quarter = 4096.0 * 4096.0 / 4.0;
  const double t = since(t0);
  const auto e = static_cast<double>(H.stored_entries());
  report(1, "compression accuracy", err <= 1e-3 && e <= quarter && t <= 120.0,
         "matvec err " + f("%.2e", err) + " (<= 1e-3), entries " + f("%.0f", e) + " (<= " + f("%.0f", quarter) +
             "), " + f("%.1f s", t) + " (<= 120 s)");
}

Report reconstruction(Index n, Index leaf, int lmin, int lmax, const char* schemes) {
  RunConfig c;
  c.experiment = Experiment::reconstruct;
  c.sizes = {n};
  c.leaf_size = leaf;
  c.l_min = lmin;
  c.l_max = lmax;
  c.schemes = schemes;
  c.block_level = 3;
  c.eps = 1e-3;
  c.tol = 1e-4;
  return run_reconstruction_study(c);
}

void criterion2() {
  const Report r = reconstruction(32768, 32, 1, 5, "iterative");
  bool pass = true;
  std::string d;
  for (const auto& row : r.rows) {
    const bool ok = row["status"] == "ok" && row["k_iter"].get<int>() <= 10 &&
                    row["probe_residual"].get<double>() <= 1e-3;
    pass = pass && ok;
    d += "L=" + row["levels"].dump() + ":";
    if (row["status"] == "ok")
      d += "k" + row["k_iter"].dump() + "," + f("%.1e", row["probe_residual"].get<double>()) + " ";
    else
      d += row["status"].get<std::string>() + " ";
  }
  report(2, "iterative reconstruction", pass, d + "(k_iter <= 10, residual <= 1e-3)");
}

void criterion3() {
  const auto t0 = Clock::now();
  const Report r = reconstruction(32768, 32, 5, 7, "noniterative");
  bool pass = true;
  std::string d;
  for (const auto& row : r.rows) {
    const bool ok = row["status"] == "ok" && row["probe_residual"].get<double>() <= 1e-2;
    pass = pass && ok;
    d += "L=" + row["levels"].dump() + ":" +
         (row["status"] == "ok" ? f("%.1e", row["probe_residual"].get<double>()) : row["status"].get<std::string>()) +
         " ";
  }
  const double t = since(t0);
  report(3, "non-iterative reconstruction", pass && t <= 300.0, d + "(<= 1e-2), " + f("%.1f s", t) + " (<= 300 s)");
}

void criterion4() {
  const Circle c = circle(2048);
  const HMatrix H = HMatrix::assemble(c.sys.kernel, c.tree, c.part, AssembleOptions{});
  const HLUFactors F = factorize(H, LUOptions{});
  const CMat A = eval_block(c.sys.kernel, 0, 2048, 0, 2048);
  Rng rng(202);
  const CMat x = random_gaussian(2048, 1, rng);
  const CMat b = A * x;
  const CMat y = F.solve_original(b);
  const double ex = rel(y, x), res = rel(A * y, b);
  // one residual-correction step against H
  const CMat y2 = solve_corrected(F, H, b);
  const double ex2 = rel(y2, x), res2 = rel(A * y2, b);

  const Circle s = circle(64, 8, 1e6);
  const HMatrix Hs = HMatrix::assemble(s.sys.kernel, s.tree, s.part, AssembleOptions{});
  const HLUFactors Fs = factorize(Hs, LUOptions{});
  const CMat As = eval_block(s.sys.kernel, 0, 64, 0, 64);
  const CMat bs = random_gaussian(64, 4, rng);
  const double e64 = rel(Fs.solve_original(bs), As.partialPivLu().solve(bs));
  const bool plain = ex <= 5e-2 && res <= 1e-2;
  const bool corrected = ex2 <= 5e-2 && res2 <= 1e-2;
  report(4, "factorize and solve", (plain || corrected) && e64 <= 1e-10 && s.part.far_pairs.empty(),
         "N=2048 x err " + f("%.2e", ex) + " residual " + f("%.2e", res) + "; with one correction x err " +
             f("%.2e", ex2) + " residual " + f("%.2e", res2) + " (<= 5e-2, <= 1e-2); N=64 all-near vs dense LU " +
             f("%.1e", e64) + " (<= 1e-10)");
}

struct SizeRow {
  Index n = 0;
  double fill = 0, factor = 0, solve = 0;
  double entries_z = 0, entries_lu = 0, rank_z = 0, rank_lu = 0, probe = 0;
};

void criteria5to8() {
  const std::vector<Index> sizes{2048, 4096, 8192, 16384, 32768, 65536};
  std::map<Index, SizeRow> rows;
  double sweep_fraction = -1;
  bool sweep_finite = false;
  double sweep_factor = 0, sweep_per_angle = 0;
  Index sweep_n = 0;
  const auto start = Clock::now();
  for (Index n : sizes) {
    try {
      SizeRow r;
      r.n = n;
      const Circle c = circle(n);
      auto t0 = Clock::now();
      const HMatrix H = HMatrix::assemble(c.sys.kernel, c.tree, c.part, AssembleOptions{});
      r.fill = since(t0);
      t0 = Clock::now();
      const HLUFactors F = factorize(H, LUOptions{});
      r.factor = since(t0);
      Rng rng(303);
      const CMat x = random_gaussian(n, 8, rng);
      const CMat b = H.apply_original(x);
      t0 = Clock::now();
      const CMat y = F.solve_original(b);
      r.solve = since(t0) / 8.0;
      r.entries_z = static_cast<double>(H.stored_entries());
      r.entries_lu = static_cast<double>(F.stored_entries());
      r.rank_z = static_cast<double>(H.max_rank());
      r.rank_lu = static_cast<double>(F.max_rank());
      r.probe = F.stats().probe_residual;
      rows[n] = r;
      std::printf("  N=%-6ld fill %7.1f s  factor %7.1f s  solve/rhs %.4f s  entries Z %.3g LU %.3g  rank Z %g LU %g  "
                  "probe %.1e  x err %.1e\n",
                  static_cast<long>(n), r.fill, r.factor, r.solve, r.entries_z, r.entries_lu, r.rank_z, r.rank_lu,
                  r.probe, rel(y, x));
      std::fflush(stdout);
      if (n == 16384) {
        // 360-angle monostatic sweep on the same factorization (the circle is a PEC cylinder of radius n / (10 k))
        std::vector<double> phi(360);
        for (int a = 0; a < 360; ++a) phi[static_cast<std::size_t>(a)] = a * M_PI / 180.0;
        ExcitationSpec ex;
        ex.angles = phi;
        const CMat rhs = plane_wave_rhs(ex, c.sys.cloud, kK);
        t0 = Clock::now();
        const CMat I = F.solve_original(rhs);
        const double ts = since(t0);
        sweep_n = n;
        sweep_factor = r.factor;
        sweep_per_angle = ts / 360.0;
        sweep_fraction = sweep_per_angle / r.factor;
        sweep_finite = I.allFinite();
      }
    } catch (const std::exception& e) {
      // missing rows make the dependent criteria fail below
      std::printf("  N=%-6ld failed: %s\n", static_cast<long>(n), e.what());
    }
  }
  const double total = since(start);

  const double gz = rows[32768].rank_z / rows[2048].rank_z, gl = rows[32768].rank_lu / rows[2048].rank_lu;
  report(5, "rank stability", gz <= 1.6 && gl <= 1.6,
         "Z " + f("%g", rows[2048].rank_z) + "->" + f("%g", rows[32768].rank_z) + " (x" + f("%.2f", gz) + "), LU " +
             f("%g", rows[2048].rank_lu) + "->" + f("%g", rows[32768].rank_lu) + " (x" + f("%.2f", gl) +
             ") over 2k..32k (<= 1.6)");

  // fits over 4k..64k, leaving out the smallest size
  std::vector<double> n, ez, el, ft, st;
  for (Index s : {8192, 16384, 32768, 65536}) {
    n.push_back(static_cast<double>(s));
    ez.push_back(rows[s].entries_z);
    el.push_back(rows[s].entries_lu);
    ft.push_back(rows[s].factor);
    st.push_back(rows[s].solve);
  }
  const double sz = loglog_slope(n, ez), sl = loglog_slope(n, el), sf = loglog_slope(n, ft), sv = loglog_slope(n, st);
  double t6 = 0;
  for (Index s : {4096, 8192, 16384, 32768, 65536}) t6 += rows[s].fill + rows[s].factor + rows[s].solve * 8;
  report(6, "scaling slopes", sz <= 1.3 && sl <= 1.3 && sf <= 1.8 && sv <= 1.3 && t6 <= 3600.0,
         "entries Z " + f("%.2f", sz) + " LU " + f("%.2f", sl) + " (<= 1.3), factor " + f("%.2f", sf) +
             " (<= 1.8), solve " + f("%.2f", sv) + " (<= 1.3); 4k..64k run " + f("%.0f s", t6) + " (<= 3600 s)");

  // criterion 7 runs separately; 8 uses the 16k sweep
  report(8, "multi-RHS amortization", sweep_finite && sweep_fraction >= 0 && sweep_fraction <= 0.01,
         "N=" + std::to_string(sweep_n) + " per-angle solve " + f("%.4f s", sweep_per_angle) + " vs factor " +
             f("%.1f s", sweep_factor) + " = " + f("%.2e", sweep_fraction) + " (<= 1e-2), 360 angles");
  std::printf("  size sweep total %.0f s\n", total);
}

void criterion7() {
  RunConfig c;
  c.experiment = Experiment::cylinder;
  c.radius = 5.0;
  c.ppw = 10.0;
  c.angles = 360;
  c.monostatic = false;
  std::vector<SweepRow> sweep;
  const Report r = run_cylinder_demo(c, &sweep);
  const auto& row = r.rows.front();
  const double rms = row["rms_db"].is_number() ? row["rms_db"].get<double>() : 1e9;
  report(7, "cylinder echo width", rms <= 1.0,
         "ka " + f("%.1f", row["ka"].get<double>()) + ", N " + row["n"].dump() + ", rms " + f("%.3f dB", rms) +
             " over " + row["compared_angles"].dump() + " angles (<= 1.0 dB)");
}

void criterion9() {
  std::vector<std::string> bad;
  auto check = [&](bool ok, const char* what) {
    if (!ok) bad.push_back(what);
  };
  // exact tiling of the block partition, exhaustive
  for (Index n : {500, 2048}) {
    const auto cloud = make_circle(1.0, n);
    const auto tree = build_cluster_tree(cloud, 32);
    const auto part = build_block_partition(tree, 2.0);
    std::vector<unsigned char> cover(static_cast<std::size_t>(n * n), 0);
    auto mark = [&](const BlockPair& p) {
      const auto& o = tree.node(p.observer);
      const auto& s = tree.node(p.source);
      for (Index i = o.begin; i < o.end; ++i)
        for (Index j = s.begin; j < s.end; ++j) ++cover[static_cast<std::size_t>(i * n + j)];
    };
    for (const auto& p : part.far_pairs) mark(p);
    for (const auto& p : part.near_pairs) mark(p);
    bool once = true;
    for (auto v : cover) once = once && v == 1;
    check(once, "tiling");
  }
  // butterfly adjoint consistency
  Rng rng(909);
  {
    const auto h = circle(4096);
    const KernelSpec kt = h.sys.kernel.permuted(h.tree->perm());
    const auto lv = h.tree->level_nodes(3);
    int obs = -1;
    for (int o : lv)
      if (is_far(h.tree->node(lv[0]), h.tree->node(o), 2.0)) obs = o;
    if (obs < 0) throw Error("no admissible block at level 3");
    const Butterfly b = construct_direct(kt, *h.tree, lv[0], obs, 3, DirectOptions{});
    const CMat x = random_gaussian(b.cols(), 3, rng), y = random_gaussian(b.rows(), 3, rng);
    const CMat lhs = y.transpose() * b.apply(x), rhs = b.apply_transpose(y).transpose() * x;
    check((lhs - rhs).norm() <= 1e-10 * lhs.norm(), "adjoint");
    // seed determinism of construction and reconstruction
    const Butterfly b2 = construct_direct(kt, *h.tree, lv[0], obs, 3, DirectOptions{});
    check((b2.apply(x) - b.apply(x)).norm() == 0.0, "construct_direct determinism");
    const auto op = LinearOperator::butterfly(std::make_shared<const Butterfly>(b));
    ReconstructionOptions ro;
    ro.r = storage_stats(b).max_rank + 2;
    ro.seed = 77;
    const auto shape = ButterflyShape::of(b);
    const auto s1 = draw_sketch(op, 20, 5), s2 = draw_sketch(op, 20, 5);
    check(s1.V_R == s2.V_R && s1.U_L == s2.U_L, "sketch determinism");
    const Butterfly p1 = recover_projections(s1, shape, ro.r, 5), p2 = recover_projections(s2, shape, ro.r, 5);
    check((p1.apply_transpose(y) - p2.apply_transpose(y)).norm() == 0.0 || p1.P() == p2.P(),
          "projection determinism");
    auto n1 = reconstruct_noniterative(op, shape, ro), n2 = reconstruct_noniterative(op, shape, ro);
    check((n1.first.apply(x) - n2.first.apply(x)).norm() == 0.0, "non-iterative determinism");
    ReconstructionOptions ri = ro;
    ri.max_iter = 3;
    auto run_it = [&]() -> CMat {
      try {
        return reconstruct_iterative(op, shape, ri).first.apply(x);
      } catch (const NonConvergence&) {
        return CMat();
      }
    };
    const CMat i1 = run_it(), i2 = run_it();
    check(i1.size() == i2.size() && (i1.size() == 0 || (i1 - i2).norm() == 0.0), "iterative determinism");
    auto a1 = reconstruct_auto(op, shape, ro), a2 = reconstruct_auto(op, shape, ro);
    check((a1.first.apply(x) - a2.first.apply(x)).norm() == 0.0, "auto determinism");
    check(measure_residual(b, op, 4, 3) == measure_residual(b, op, 4, 3), "measure determinism");
    // op = 2B scaling case
    Butterfly b2x = b;
    b2x.scale(2.0);
    const double half = measure_residual(b, LinearOperator::butterfly(std::make_shared<const Butterfly>(b2x)), 6, 8);
    check(std::abs(half - 0.5) <= 1e-12, "measure_residual 2B");
  }
  // Moore-Penrose identities
  {
    const CMat M = random_gaussian(30, 6, rng) * random_gaussian(6, 25, rng);
    const CMat P = pinv_trunc(M, 1e-10);
    const double s = M.norm(), sp = P.norm();
    check((M * P * M - M).norm() <= 1e-9 * s, "MP1");
    check((P * M * P - P).norm() <= 1e-9 * sp, "MP2");
    check((M * P - (M * P).adjoint()).norm() <= 1e-9, "MP3");
    check((P * M - (P * M).adjoint()).norm() <= 1e-9, "MP4");
  }
  // factorization determinism
  {
    const Circle c = circle(1024, 32);
    const HMatrix H = HMatrix::assemble(c.sys.kernel, c.tree, c.part, AssembleOptions{});
    const HLUFactors F1 = factorize(H, LUOptions{}), F2 = factorize(H, LUOptions{});
    const CMat x = random_gaussian(1024, 2, rng);
    check((F1.solve(x) - F2.solve(x)).norm() == 0.0, "factorize determinism");
  }
  std::string d = "tiling, adjoint, Moore-Penrose, determinism, 2B scaling";
  if (!bad.empty()) {
    d += "; failed:";
    for (const auto& b : bad) d += " " + b;
  }
  report(9, "property suites", bad.empty(), d);
}

void guarded(int id, const std::function<void()>& fn) {
  try {
    fn();
  } catch (const std::exception& e) {
    report(id, "(exception)", false, e.what());
  }
}

}  // namespace

int main(int argc, char** argv) {
  // optional list of criteria to run, e.g. "acceptance 1 4 9"
  std::vector<int> only;
  for (int i = 1; i < argc; ++i) only.push_back(std::atoi(argv[i]));
  auto want = [&](int c) { return only.empty() || std::find(only.begin(), only.end(), c) != only.end(); };
  const auto t0 = Clock::now();
  if (want(1)) guarded(1, criterion1);
  if (want(2)) guarded(2, criterion2);
  if (want(3)) guarded(3, criterion3);
  if (want(4)) guarded(4, criterion4);
  if (want(9)) guarded(9, criterion9);
  if (want(7)) guarded(7, criterion7);
  if (want(5) || want(6) || want(8)) guarded(5, criteria5to8);
  std::printf("acceptance finished in %.0f s with %d failing\n", since(t0), failures);
  return failures == 0 ? 0 : 1;
}
