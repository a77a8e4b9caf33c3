#include "lavit/gate.hpp"

#include <cmath>

namespace lavit {

double gamma(const GateSchedule& schedule, int64_t step) {
  if (step < 0) throw ValueError("gamma: negative step index");
  if (step >= schedule.warmup_steps) return 1.0;
  const double phase =
      M_PI * static_cast<double>(step) / static_cast<double>(schedule.warmup_steps);
  return schedule.epsilon + 0.5 * (1.0 - schedule.epsilon) * (1.0 - std::cos(phase));
}

double gate_bias(double gamma_value) {
  if (gamma_value <= 0.0 || gamma_value > 1.0)
    throw ValueError("gate_bias: gamma must be in (0, 1]");
  return std::log(gamma_value);
}

}  // namespace lavit
