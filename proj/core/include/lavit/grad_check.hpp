#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "lavit/tape.hpp"

namespace lavit {

/// A scalar-valued differentiable program over watched inputs. Used both for
/// single kernels and for composed loss pathways.
struct CheckCase {
  /// Default input shapes (overridable through grad_check's shapes argument).
  std::vector<std::vector<int64_t>> shapes;
  /// Which inputs carry gradients (others are held constant).
  std::vector<bool> differentiable;
  /// Draws inputs for a trial; default fills with seeded standard normals.
  std::function<std::vector<Tensor>(const std::vector<std::vector<int64_t>>&, uint64_t seed)> make_inputs;
  /// Builds the forward program on the tape and returns a scalar.
  std::function<Tensor(Tape&, const std::vector<Tensor>&)> run;
};

/// Names of every registered check (the KernelSet plus composed pathways).
std::vector<std::string> grad_check_cases();

/// Compares the tape gradient of the named case against central finite
/// differences (step 1e-5) and returns the max over all differentiable input
/// entries of |analytic - numeric| / max(1, |numeric|). An apparent
/// non-differentiable point (error above 1e-3) is resampled with the next
/// seed, at most 3 attempts.
double grad_check(const std::string& op, const std::vector<std::vector<int64_t>>& shapes,
                  uint64_t seed);

inline double grad_check(const std::string& op, uint64_t seed) { return grad_check(op, {}, seed); }

}  // namespace lavit
