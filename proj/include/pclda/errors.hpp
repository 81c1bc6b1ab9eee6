#pragma once

#include <stdexcept>
#include <string>

namespace pclda {

// Parameters violate a model invariant (non-simplex rows, underflowed
// mixture probability, mismatched dimensions).
class InvalidParameter : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Argument outside the mathematical domain of an operation.
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

// Malformed or inconsistent input data (files, corpora, label tables).
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Training produced a non-finite loss.
class DivergenceError : public std::runtime_error {
 public:
  DivergenceError(const std::string& what, int epoch, std::string term)
      : std::runtime_error(what), epoch_(epoch), term_(std::move(term)) {}

  int epoch() const { return epoch_; }
  const std::string& term() const { return term_; }

 private:
  int epoch_;
  std::string term_;
};

// Operation not supported for the given configuration.
class Unsupported : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

}  // namespace pclda
