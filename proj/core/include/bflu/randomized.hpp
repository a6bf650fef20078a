#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "bflu/butterfly.hpp"
#include "bflu/operator.hpp"

namespace bflu {

struct Sketch {
  CMat V_R;  // n x n_rnd
  CMat V_L;  // n_rnd x m
  CMat U_R;  // op * V_R
  CMat U_L;  // V_L * op
  Index n_rnd = 0;
  std::uint64_t seed = 0;
};

Sketch draw_sketch(const LinearOperator& op, Index n_rnd, std::uint64_t seed);

enum class Scheme { iterative, non_iterative };
std::string to_string(Scheme s);

struct ReconstructionReport {
  int k_iter = 0;
  double residual = 0.0;  // sketch-based residual ratio at exit
  Scheme scheme = Scheme::iterative;
  Index rank = 0;
  Index n_rnd = 0;
  std::uint64_t forward_applies = 0;
  std::uint64_t transpose_applies = 0;
  std::vector<double> residual_history;  // iterative: one entry per sweep
  Index ill_conditioned_blocks = 0;      // pseudoinverses that dropped > 10% of singular values
  double probe_residual = -1.0;          // fresh-probe residual, set by reconstruct_auto
  bool fallback = false;                 // iterative scheme abandoned for the non-iterative one
  int retries = 0;
};

/// Raised by reconstruct_auto when the residual target is missed after retries.
class ReconstructionFailed : public ReconstructionFailure {
 public:
  ReconstructionFailed(const std::string& what, ReconstructionReport report)
      : ReconstructionFailure(what), report_(std::move(report)) {}
  const ReconstructionReport& report() const { return report_; }

 private:
  ReconstructionReport report_;
};

struct ReconstructionOptions {
  Index r = 16;
  Index c = 10;
  double eps = 1e-3;
  int max_iter = 20;
  std::uint64_t seed = 1;
  int level_threshold = 5;
  Index r_max = 256;
  double pinv_tol = 1e-10;
  Index n_probe = 8;
  // > 0: non-iterative pair ranks follow the singular values above
  // rank_tol times the level's largest one, capped by r.
  double rank_tol = 0.0;
};

/// Leaf structure of the butterfly to be recovered.
struct ButterflyShape {
  int levels = 0;
  std::vector<Index> row_offsets;  // 2^L + 1 entries
  std::vector<Index> col_offsets;

  static ButterflyShape uniform(Index m, Index n, int levels);
  static ButterflyShape of(const Butterfly& b) { return {b.levels(), b.row_offsets(), b.col_offsets()}; }
};

/// Rank used for pair p at level d: min(r, |O_i^d|, |S_k^d|).
Index pair_rank(const ButterflyShape& shape, Index r, int d, Index p);

/// Outer factors from the sketch: returns a butterfly with P, Q filled and
/// zero placeholders for the interior. With rank_tol > 0 the outer ranks
/// adapt to the sketch and the interior is left empty.
Butterfly recover_projections(const Sketch& sketch, const ButterflyShape& shape, Index r, std::uint64_t seed,
                              double pinv_tol = 1e-10, Index* ill_conditioned = nullptr, double rank_tol = 0.0);

std::pair<Butterfly, ReconstructionReport> reconstruct_iterative(const LinearOperator& op,
                                                                 const ButterflyShape& shape,
                                                                 const ReconstructionOptions& opts);

std::pair<Butterfly, ReconstructionReport> reconstruct_noniterative(const LinearOperator& op,
                                                                    const ButterflyShape& shape,
                                                                    const ReconstructionOptions& opts);

/// (|B X - op X| + |Y B - Y op|) / (|op X| + |Y op|) on fresh Gaussian probes.
double measure_residual(const Butterfly& b, const LinearOperator& op, Index n_probe, std::uint64_t seed);

std::pair<Butterfly, ReconstructionReport> reconstruct_auto(const LinearOperator& op, const ButterflyShape& shape,
                                                            const ReconstructionOptions& opts);

}  // namespace bflu
