#pragma once

#include <cstdint>
#include <optional>

#include "poisoncert/defense.hpp"
#include "poisoncert/model.hpp"

namespace poisoncert {

/// Worst-case single attack point for a fixed defense.
struct OracleResult {
  LabeledPoint point;
  double loss = 0.0;
  /// Continuous optimum; equals `loss` unless the point was rounded to integers.
  double relaxed_loss = 0.0;
  /// Continuous optimum per class, [0] for y = +1 and [1] for y = -1.
  double class_loss[2] = {0.0, 0.0};
  /// False when no feasible integer point was found; `point` then holds the relaxed optimum.
  bool has_candidate = true;
};

/// argmin_x <c, x> over {||x - mu_y|| <= r_y, |<x - mu_y, v>| <= s_y}, v = mu_y - mu_{-y}.
/// Solved in closed form by splitting c into its component along v and the residual.
/// Throws NumericalError when the sphere is disabled and the objective is unbounded.
Vector minimize_linear(const SphereSlabParams& params, int y, const Vector& c);

/// Maximizes the hinge loss over each class's feasible region and keeps the larger
/// (ties go to y = +1). With theta = 0 the centroid mu_+ is returned with loss 1.
OracleResult max_loss_continuous(const SphereSlabParams& params, const LinearModel& model);

struct IntegerOracleConfig {
  int budget = 1000;
  std::uint64_t seed = 0;
  /// Per-coordinate upper bound on rounded counts; unbounded when absent.
  std::optional<Vector> caps;
};

/// Relaxed optimum from max_loss_continuous, then randomized rounding (coordinate j
/// rounds up with probability equal to its fractional part) of each class's relaxed
/// point. Infeasible samples are repaired by unit moves toward mu_y on the coordinate
/// contributing most to the violation; samples that cannot be repaired are dropped.
OracleResult max_loss_integer(const SphereSlabParams& params, const LinearModel& model,
                              const IntegerOracleConfig& config);

/// Largest observed value per coordinate.
Vector coordinate_caps(const Dataset& data);

}  // namespace poisoncert
