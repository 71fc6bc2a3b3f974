#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace eqps {

// Invalid argument to a numerical routine (non-positive shape, x outside [0,1], ...).
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

// Malformed input file. Row numbers are 1-based and count the header as row 1.
class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& what, std::size_t row)
      : std::runtime_error(row == 0 ? what : "row " + std::to_string(row) + ": " + what),
        row_(row) {}
  std::size_t row() const noexcept { return row_; }

 private:
  std::size_t row_;
};

// Structurally valid input that violates a data-model invariant.
class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A statistical estimate could not be formed (too few samples, zero variance, ...).
class EstimationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ConvergenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace eqps
