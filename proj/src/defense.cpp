#include "poisoncert/defense.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "poisoncert/errors.hpp"

namespace poisoncert {
namespace {

bool within(double value, double threshold) {
  return value <= threshold + kFeasibilityTol * std::max(1.0, std::abs(threshold));
}

bool integral_nonneg(const Vector& x) {
  for (Eigen::Index j = 0; j < x.size(); ++j) {
    if (x[j] < 0.0 || std::floor(x[j]) != x[j]) return false;
  }
  return true;
}

double lower_quantile(std::vector<double> values, double keep_fraction) {
  std::sort(values.begin(), values.end());
  const auto rank = static_cast<std::size_t>(std::ceil(keep_fraction * static_cast<double>(values.size()) - 1e-9));
  return values[std::clamp<std::size_t>(rank, 1, values.size()) - 1];
}

}  // namespace

void validate(const SphereSlabParams& p) {
  if (p.mu_plus.size() == 0 || p.mu_plus.size() != p.mu_minus.size()) {
    throw DimensionError("centroids must be non-empty and of equal dimension");
  }
  if (p.r_plus < 0 || p.r_minus < 0 || p.s_plus < 0 || p.s_minus < 0) {
    throw ConfigError("defense thresholds must be non-negative");
  }
  if (!p.use_sphere && !p.use_slab) throw ConfigError("at least one of sphere/slab must be enabled");
}

double sphere_value(const SphereSlabParams& p, const Vector& x, int y) { return (x - p.mu(y)).norm(); }

double slab_value(const SphereSlabParams& p, const Vector& x, int y) {
  return std::abs((x - p.mu(y)).dot(p.slab_direction(y)));
}

DefenseKind parse_defense_kind(std::string_view name) {
  if (name == "oracle") return DefenseKind::kOracle;
  if (name == "data-dep" || name == "data-dependent") return DefenseKind::kDataDependent;
  throw ConfigError("unknown defense kind '" + std::string(name) + "'");
}

std::string_view defense_kind_name(DefenseKind kind) {
  return kind == DefenseKind::kOracle ? "oracle" : "data-dep";
}

bool membership(const FeasibleSet& f, const Vector& x, int y) {
  if (x.size() != f.params.dim()) throw DimensionError("point and defense dimensions differ");
  if (f.integer_features && !integral_nonneg(x)) return false;
  if (f.params.use_sphere && !within(sphere_value(f.params, x, y), f.params.r(y))) return false;
  if (f.params.use_slab && !within(slab_value(f.params, x, y), f.params.s(y))) return false;
  return true;
}

bool membership(const FeasibleSet& f, const LabeledPoint& p) { return membership(f, p.x, p.y); }

SphereSlabParams calibrate_thresholds(const Dataset& clean, const ClassStats& stats, double keep_fraction,
                                      bool use_sphere, bool use_slab) {
  if (!(keep_fraction > 0.0 && keep_fraction <= 1.0)) throw ConfigError("keep_fraction must lie in (0, 1]");
  SphereSlabParams p;
  p.mu_plus = stats.mu_plus;
  p.mu_minus = stats.mu_minus;
  p.use_sphere = use_sphere;
  p.use_slab = use_slab;
  for (const int y : {1, -1}) {
    std::vector<double> radii;
    std::vector<double> slabs;
    for (Eigen::Index i = 0; i < clean.size(); ++i) {
      if (clean.y(i) != y) continue;
      const Vector x = clean.x(i);
      radii.push_back(sphere_value(p, x, y));
      slabs.push_back(slab_value(p, x, y));
    }
    if (radii.empty()) throw StatsError("cannot calibrate thresholds for an empty class");
    (y > 0 ? p.r_plus : p.r_minus) = lower_quantile(radii, keep_fraction);
    (y > 0 ? p.s_plus : p.s_minus) = lower_quantile(slabs, keep_fraction);
  }
  validate(p);
  return p;
}

Dataset filter(const FeasibleSet& f, const Dataset& data) {
  std::vector<Eigen::Index> keep;
  for (Eigen::Index i = 0; i < data.size(); ++i) {
    if (membership(f, data.x(i), data.y(i))) keep.push_back(i);
  }
  return data.subset(keep);
}

FeasibleSet recompute_data_dependent(const FeasibleSet& f, const Dataset& clean, const Dataset& poisoned) {
  if (f.kind != DefenseKind::kDataDependent) throw ConfigError("defense is not data-dependent");
  const ClassStats stats = class_stats(poisoned.empty() ? clean : clean.concat(poisoned));
  FeasibleSet out = f;
  out.params.mu_plus = stats.mu_plus;
  out.params.mu_minus = stats.mu_minus;
  return out;
}

FeasibleSet make_feasible_set(const DefenseConfig& config, const Dataset& clean) {
  const ClassStats stats = class_stats(clean);
  FeasibleSet f;
  f.kind = config.kind;
  f.integer_features = config.integer_features;
  f.params = calibrate_thresholds(clean, stats, config.keep_fraction, config.use_sphere, config.use_slab);
  return f;
}

}  // namespace poisoncert
