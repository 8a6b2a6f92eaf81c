#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace lcp {

// Malformed bundle, dataset, config or artifact. CLI exit code 4.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Tensor or graph shapes that do not line up.
class ShapeError : public FormatError {
 public:
  using FormatError::FormatError;
};

// A resource target the floors cannot reach. CLI exit code 2.
class InfeasibleError : public std::runtime_error {
 public:
  InfeasibleError(const std::string& what, double minimum_cost)
      : std::runtime_error(what), minimum_cost_(minimum_cost) {}
  double minimum_cost() const { return minimum_cost_; }

 private:
  double minimum_cost_;
};

// Non-finite activation or loss. CLI exit code 3.
class DivergenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A mask that violates group consistency, width or floor rules.
class MaskError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

}  // namespace lcp
