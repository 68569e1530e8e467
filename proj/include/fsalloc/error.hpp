#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace fsalloc {

/// Bad input: malformed config, invalid parameters, infeasible setup.
class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A simulation produced non-finite or runaway state.
class DivergenceError : public std::runtime_error {
 public:
  DivergenceError(const std::string& what, std::size_t step)
      : std::runtime_error(what), step_(step) {}
  std::size_t step() const { return step_; }

 private:
  std::size_t step_;
};

/// Initial state does not satisfy the sum constraint.
class InfeasibleError : public ValidationError {
 public:
  InfeasibleError(const std::string& what, double gap)
      : ValidationError(what), gap_(gap) {}
  double gap() const { return gap_; }

 private:
  double gap_;
};

}  // namespace fsalloc
