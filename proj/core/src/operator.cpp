#include "bflu/operator.hpp"

#include "bflu/butterfly.hpp"

namespace bflu {

LinearOperator::LinearOperator(Index m, Index n, Fn apply, Fn apply_transpose)
    : m_(m), n_(n), apply_(std::move(apply)), apply_t_(std::move(apply_transpose)),
      counts_(std::make_shared<Counts>()) {
  if (m < 0 || n < 0) throw InvalidInput("operator dimensions must be non-negative");
  if (!apply_ || !apply_t_) throw InvalidInput("operator needs both apply and apply_transpose");
}

CMat LinearOperator::apply(const CMat& X) const {
  if (X.rows() != n_) throw InvalidInput("operator apply: expected " + std::to_string(n_) + " rows");
  counts_->forward.fetch_add(static_cast<std::uint64_t>(X.cols()));
  CMat out = apply_(X);
  if (out.rows() != m_ || out.cols() != X.cols()) throw InvalidInput("operator apply returned wrong shape");
  return out;
}

CMat LinearOperator::apply_transpose(const CMat& Y) const {
  if (Y.rows() != m_) throw InvalidInput("operator apply_transpose: expected " + std::to_string(m_) + " rows");
  counts_->transpose.fetch_add(static_cast<std::uint64_t>(Y.cols()));
  CMat out = apply_t_(Y);
  if (out.rows() != n_ || out.cols() != Y.cols())
    throw InvalidInput("operator apply_transpose returned wrong shape");
  return out;
}

void LinearOperator::reset_counts() const {
  counts_->forward.store(0);
  counts_->transpose.store(0);
}

LinearOperator LinearOperator::dense(CMat A) {
  auto a = std::make_shared<const CMat>(std::move(A));
  return LinearOperator(
      a->rows(), a->cols(), [a](const CMat& X) -> CMat { return *a * X; },
      [a](const CMat& Y) -> CMat { return a->transpose() * Y; });
}

LinearOperator LinearOperator::butterfly(std::shared_ptr<const Butterfly> b) {
  if (!b) throw InvalidInput("null butterfly");
  return LinearOperator(
      b->rows(), b->cols(), [b](const CMat& X) { return b->apply(X); },
      [b](const CMat& Y) { return b->apply_transpose(Y); });
}

LinearOperator LinearOperator::zero(Index m, Index n) {
  return LinearOperator(
      m, n, [m](const CMat& X) -> CMat { return CMat::Zero(m, X.cols()); },
      [n](const CMat& Y) -> CMat { return CMat::Zero(n, Y.cols()); });
}

LinearOperator LinearOperator::identity(Index n) {
  return LinearOperator(n, n, [](const CMat& X) { return X; }, [](const CMat& Y) { return Y; });
}

LinearOperator LinearOperator::sum(const LinearOperator& a, const LinearOperator& b, Complex alpha,
                                   Complex beta) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) throw InvalidInput("operator sum: shape mismatch");
  return LinearOperator(
      a.rows(), a.cols(), [a, b, alpha, beta](const CMat& X) -> CMat { return alpha * a.apply(X) + beta * b.apply(X); },
      [a, b, alpha, beta](const CMat& Y) -> CMat {
        return alpha * a.apply_transpose(Y) + beta * b.apply_transpose(Y);
      });
}

}  // namespace bflu
