#pragma once

#include <atomic>
#include <cstdint>
#include <functional>
#include <memory>

#include "bflu/types.hpp"

namespace bflu {

class Butterfly;

/// Black-box m x n operator. `apply_transpose` is the plain (non-conjugated)
/// transpose. Applies are counted per column vector.
class LinearOperator {
 public:
  using Fn = std::function<CMat(const CMat&)>;

  LinearOperator(Index m, Index n, Fn apply, Fn apply_transpose);

  static LinearOperator dense(CMat A);
  static LinearOperator butterfly(std::shared_ptr<const Butterfly> b);
  static LinearOperator zero(Index m, Index n);
  static LinearOperator identity(Index n);
  /// alpha * a + beta * b.
  static LinearOperator sum(const LinearOperator& a, const LinearOperator& b, Complex alpha = 1.0,
                            Complex beta = 1.0);

  Index rows() const { return m_; }
  Index cols() const { return n_; }

  CMat apply(const CMat& X) const;
  CMat apply_transpose(const CMat& Y) const;
  /// Y * op, for Y with m columns.
  CMat apply_left(const CMat& Y) const { return apply_transpose(Y.transpose()).transpose(); }

  std::uint64_t forward_applies() const { return counts_->forward.load(); }
  std::uint64_t transpose_applies() const { return counts_->transpose.load(); }
  void reset_counts() const;

 private:
  struct Counts {
    std::atomic<std::uint64_t> forward{0};
    std::atomic<std::uint64_t> transpose{0};
  };
  Index m_, n_;
  Fn apply_, apply_t_;
  std::shared_ptr<Counts> counts_;
};

}  // namespace bflu
