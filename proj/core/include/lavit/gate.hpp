#pragma once

#include <cstdint>

#include "lavit/tensor.hpp"

namespace lavit {

/// Curriculum sensory gate: a cosine warm-up from the gate floor to fully
/// open, evaluated once per optimizer step and shared by all layers/heads.
struct GateSchedule {
  int64_t warmup_steps = 400;
  double epsilon = 1e-6;

  GateSchedule() = default;
  GateSchedule(int64_t t_w, double eps) : warmup_steps(t_w), epsilon(eps) {
    if (t_w < 1) throw ValueError("GateSchedule: warmup_steps must be >= 1");
    if (eps <= 0.0 || eps >= 1.0) throw ValueError("GateSchedule: epsilon must be in (0, 1)");
  }
};

/// gamma(t): eps + (1-eps)/2 * (1 - cos(pi t / T_w)) for t < T_w, else exactly 1.
double gamma(const GateSchedule& schedule, int64_t step);

/// Additive attention bias ln(gamma) for the response->image path.
double gate_bias(double gamma_value);

}  // namespace lavit
