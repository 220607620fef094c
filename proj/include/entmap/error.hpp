#ifndef ENTMAP_ERROR_HPP_
#define ENTMAP_ERROR_HPP_

#include <cstddef>
#include <stdexcept>
#include <string>

namespace entmap {

/// Raised when caller-supplied data violates a documented precondition.
class InputError : public std::invalid_argument {
 public:
  explicit InputError(const std::string& what) : std::invalid_argument(what) {}
};

/// Raised when an iterative solver stops before reaching its tolerance, or
/// when a routine is handed potentials that never converged.
class ConvergenceError : public std::runtime_error {
 public:
  ConvergenceError(const std::string& what, double best_residual, std::size_t iterations)
      : std::runtime_error(what), best_residual_(best_residual), iterations_(iterations) {}

  double best_residual() const noexcept { return best_residual_; }
  std::size_t iterations() const noexcept { return iterations_; }

 private:
  double best_residual_;
  std::size_t iterations_;
};

}  // namespace entmap

#endif  // ENTMAP_ERROR_HPP_
