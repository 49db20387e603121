#pragma once

// Exception hierarchy shared by every qfactor module. All errors derive from
// qfactor::Error so callers can catch the library's failures in one place.

#include <Eigen/Dense>

#include <cstddef>
#include <stdexcept>
#include <string>
#include <utility>

namespace qfactor {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Argument outside the mathematical domain of an operation (tau, bandwidth, counts).
class DomainError : public Error {
 public:
  using Error::Error;
};

class DimensionError : public Error {
 public:
  using Error::Error;
};

class BalancedPanelError : public Error {
 public:
  using Error::Error;
};

class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t row, std::size_t column)
      : Error(what + " (row " + std::to_string(row) + ", column " + std::to_string(column) + ")"),
        row_(row),
        column_(column) {}

  /// 1-based line number in the source file.
  std::size_t row() const noexcept { return row_; }
  /// 1-based field number in the line.
  std::size_t column() const noexcept { return column_; }

 private:
  std::size_t row_;
  std::size_t column_;
};

class DegenerateColumnError : public Error {
 public:
  explicit DegenerateColumnError(std::string unit)
      : Error("zero-variance column for unit '" + unit + "'"), unit_(std::move(unit)) {}
  const std::string& unit() const noexcept { return unit_; }

 private:
  std::string unit_;
};

class RankError : public Error {
 public:
  using Error::Error;
};

class SymmetryError : public Error {
 public:
  using Error::Error;
};

class SingularityError : public Error {
 public:
  using Error::Error;
};

/// A kernel density estimate of Phi_i or Psi_t had no mass inside the bandwidth window.
class SingularDensityError : public Error {
 public:
  SingularDensityError(const std::string& what, char kind, Eigen::Index index)
      : Error(what), kind_(kind), index_(index) {}
  /// 'i' for a unit (loading covariance), 't' for a period (factor covariance).
  char kind() const noexcept { return kind_; }
  Eigen::Index index() const noexcept { return index_; }

 private:
  char kind_;
  Eigen::Index index_;
};

class ZeroVolatilityError : public Error {
 public:
  using Error::Error;
};

class SpecError : public Error {
 public:
  using Error::Error;
};

class ConvergenceError : public Error {
 public:
  explicit ConvergenceError(const std::string& what, Eigen::VectorXd best = {})
      : Error(what), best_(std::move(best)) {}
  /// Best iterate reached before giving up (may be empty).
  const Eigen::VectorXd& best_iterate() const noexcept { return best_; }

 private:
  Eigen::VectorXd best_;
};

}  // namespace qfactor
