#pragma once

#include <string_view>

#include "poisoncert/data.hpp"

namespace poisoncert {

/// Absolute slack (scaled by max(1, threshold)) allowed on every constraint value.
inline constexpr double kFeasibilityTol = 1e-9;

/// Sphere and slab sanitizers around class centroids.
///   sphere: ||x - mu_y|| <= r_y
///   slab:   |<x - mu_y, mu_y - mu_{-y}>| <= s_y
struct SphereSlabParams {
  Vector mu_plus;
  Vector mu_minus;
  double r_plus = 0.0;
  double r_minus = 0.0;
  double s_plus = 0.0;
  double s_minus = 0.0;
  bool use_sphere = true;
  bool use_slab = true;

  const Vector& mu(int y) const { return y > 0 ? mu_plus : mu_minus; }
  double r(int y) const { return y > 0 ? r_plus : r_minus; }
  double s(int y) const { return y > 0 ? s_plus : s_minus; }
  /// mu_y - mu_{-y}
  Vector slab_direction(int y) const { return y > 0 ? Vector(mu_plus - mu_minus) : Vector(mu_minus - mu_plus); }
  Eigen::Index dim() const { return mu_plus.size(); }
};

void validate(const SphereSlabParams& params);

double sphere_value(const SphereSlabParams& params, const Vector& x, int y);
double slab_value(const SphereSlabParams& params, const Vector& x, int y);

enum class DefenseKind { kOracle, kDataDependent };

DefenseKind parse_defense_kind(std::string_view name);
std::string_view defense_kind_name(DefenseKind kind);

/// A sanitization defense. The integer flag additionally requires non-negative
/// integer coordinates (text-style integrity constraints).
struct FeasibleSet {
  DefenseKind kind = DefenseKind::kOracle;
  SphereSlabParams params;
  bool integer_features = false;
};

bool membership(const FeasibleSet& feasible, const Vector& x, int y);
bool membership(const FeasibleSet& feasible, const LabeledPoint& p);

/// Per-class, per-constraint lower empirical quantile at keep_fraction:
/// each threshold is the ceil(keep_fraction * n_y)-th smallest constraint value.
SphereSlabParams calibrate_thresholds(const Dataset& clean, const ClassStats& stats, double keep_fraction,
                                      bool use_sphere = true, bool use_slab = true);

/// Points of `data` that pass membership, in their original order.
Dataset filter(const FeasibleSet& feasible, const Dataset& data);

/// Moves the centroids to the class means of clean + poisoned, leaving thresholds alone.
FeasibleSet recompute_data_dependent(const FeasibleSet& feasible, const Dataset& clean, const Dataset& poisoned);

struct DefenseConfig {
  DefenseKind kind = DefenseKind::kOracle;
  double keep_fraction = 0.7;
  bool use_sphere = true;
  bool use_slab = true;
  bool integer_features = false;
};

/// Calibrates a feasible set on the clean data (centroids from class_stats).
FeasibleSet make_feasible_set(const DefenseConfig& config, const Dataset& clean);

}  // namespace poisoncert
