#pragma once

#include <complex>
#include <cstdint>
#include <stdexcept>
#include <string>

#include <Eigen/Dense>

namespace bflu {

using Index = Eigen::Index;
using Real = double;
using Complex = std::complex<double>;
using CMat = Eigen::Matrix<Complex, Eigen::Dynamic, Eigen::Dynamic>;
using CVec = Eigen::Matrix<Complex, Eigen::Dynamic, 1>;
using RMat = Eigen::MatrixXd;
using RVec = Eigen::VectorXd;

/// Base class of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class InvalidInput : public Error {
 public:
  using Error::Error;
};

class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t line)
      : Error(what + " (line " + std::to_string(line) + ")"), line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

class SingularityError : public Error {
 public:
  using Error::Error;
};

/// Raised when a skeleton needs more columns than the rank cap allows.
class RankOverflow : public Error {
 public:
  RankOverflow(const std::string& what, Index needed)
      : Error(what), needed_(needed) {}
  Index needed() const { return needed_; }

 private:
  Index needed_;
};

class NonConvergence : public Error {
 public:
  using Error::Error;
};

class ReconstructionFailure : public Error {
 public:
  using Error::Error;
};

class FactorizationFailure : public Error {
 public:
  using Error::Error;
};

class ConvergenceError : public Error {
 public:
  using Error::Error;
};

}  // namespace bflu
