#include "poisoncert/maxoracle.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "poisoncert/errors.hpp"
#include "poisoncert/rng.hpp"

namespace poisoncert {

Vector minimize_linear(const SphereSlabParams& p, int y, const Vector& c) {
  if (c.size() != p.dim()) throw DimensionError("objective and defense dimensions differ");
  const Vector& mu = p.mu(y);
  const double r = p.use_sphere ? p.r(y) : std::numeric_limits<double>::infinity();
  const double c_norm = c.norm();
  if (c_norm == 0.0) return mu;

  const Vector v = p.slab_direction(y);
  const double v_norm = v.norm();
  // Coincident centroids make the slab vacuous.
  const bool slab = p.use_slab && v_norm > 0.0;
  Vector v_hat = Vector::Zero(c.size());
  double c_par = 0.0;
  double bound = r;
  if (slab) {
    v_hat = v / v_norm;
    c_par = c.dot(v_hat);
    bound = std::min(r, p.s(y) / v_norm);
  }
  Vector c_perp = c - c_par * v_hat;
  if (slab) c_perp -= c_perp.dot(v_hat) * v_hat;
  const double perp_norm = c_perp.norm();
  const bool parallel = perp_norm <= 1e-12 * c_norm;

  if (!std::isfinite(r)) {
    if (!parallel || !slab) throw NumericalError("loss maximization is unbounded without a sphere constraint");
    return mu - std::copysign(bound, c_par) * v_hat;
  }
  if (parallel) return mu - std::copysign(bound, c_par) * v_hat;
  const double alpha = std::clamp(-c_par * r / c_norm, -bound, bound);
  const double radial = std::sqrt(std::max(0.0, r * r - alpha * alpha));
  return mu + alpha * v_hat - (radial / perp_norm) * c_perp;
}

OracleResult max_loss_continuous(const SphereSlabParams& params, const LinearModel& model) {
  validate(params);
  if (model.dim() != params.dim()) throw DimensionError("model and defense dimensions differ");
  OracleResult best;
  for (const int y : {1, -1}) {
    const Vector x = minimize_linear(params, y, y * model.theta());
    const double loss = hinge(model.theta(), x, y);
    best.class_loss[y > 0 ? 0 : 1] = loss;
    if (y > 0 || loss > best.loss) {
      best.point = {x, y};
      best.loss = loss;
    }
  }
  best.relaxed_loss = best.loss;
  return best;
}

namespace {

// Signed contribution of coordinate j to the current violations, normalized by
// each threshold; larger means moving x_j toward mu_j helps more.
Eigen::Index worst_coordinate(const SphereSlabParams& p, const Vector& x, int y, bool sphere_bad,
                              bool slab_bad, double slab_sign) {
  const Vector diff = x - p.mu(y);
  const Vector v = p.slab_direction(y);
  Eigen::Index best = -1;
  double best_score = 0.0;
  for (Eigen::Index j = 0; j < x.size(); ++j) {
    if (diff[j] > 0.0 && x[j] < 1.0) continue;  // a decrement would go negative
    double score = 0.0;
    if (sphere_bad) score += diff[j] * diff[j] / std::max(p.r(y) * p.r(y), 1e-300);
    if (slab_bad) score += slab_sign * diff[j] * v[j] / std::max(p.s(y), 1e-300);
    if (score > best_score) {
      best_score = score;
      best = j;
    }
  }
  return best;
}

bool repair(const FeasibleSet& f, Vector& x, int y, int max_moves) {
  const SphereSlabParams& p = f.params;
  for (int move = 0; move <= max_moves; ++move) {
    if (membership(f, x, y)) return true;
    const bool sphere_bad = p.use_sphere && sphere_value(p, x, y) > p.r(y);
    const double signed_slab = (x - p.mu(y)).dot(p.slab_direction(y));
    const bool slab_bad = p.use_slab && std::abs(signed_slab) > p.s(y);
    const Eigen::Index j = worst_coordinate(p, x, y, sphere_bad, slab_bad, signed_slab >= 0 ? 1.0 : -1.0);
    if (j < 0) return false;
    x[j] += x[j] > p.mu(y)[j] ? -1.0 : 1.0;
  }
  return false;
}

}  // namespace

OracleResult max_loss_integer(const SphereSlabParams& params, const LinearModel& model,
                              const IntegerOracleConfig& config) {
  OracleResult relaxed = max_loss_continuous(params, model);
  if (config.caps && config.caps->size() != params.dim()) throw DimensionError("caps dimension mismatch");
  const FeasibleSet feasible{DefenseKind::kOracle, params, true};
  Rng rng(config.seed);

  OracleResult best = relaxed;
  best.has_candidate = false;
  best.loss = -1.0;
  for (const int y : {1, -1}) {
    const Vector target = minimize_linear(params, y, y * model.theta());
    const int max_moves = 4 * static_cast<int>(target.size()) +
                          static_cast<int>(std::min(1e6, (target - params.mu(y)).lpNorm<1>() * 2.0));
    for (int sample = 0; sample < config.budget; ++sample) {
      Vector x(target.size());
      for (Eigen::Index j = 0; j < x.size(); ++j) {
        double value = target[j];
        const double nearest = std::round(value);
        if (std::abs(value - nearest) <= 1e-9) {
          value = nearest;
        } else {
          const double base = std::floor(value);
          value = base + (rng.bernoulli(value - base) ? 1.0 : 0.0);
        }
        value = std::max(0.0, value);
        if (config.caps) value = std::min(value, std::max(0.0, std::floor((*config.caps)[j])));
        x[j] = value;
      }
      if (!repair(feasible, x, y, max_moves)) continue;
      const double loss = hinge(model.theta(), x, y);
      if (loss > best.loss) {
        best.loss = loss;
        best.point = {x, y};
        best.has_candidate = true;
      }
    }
  }
  if (!best.has_candidate) {
    best.point = relaxed.point;
    best.loss = relaxed.relaxed_loss;
  }
  best.relaxed_loss = relaxed.relaxed_loss;
  return best;
}

Vector coordinate_caps(const Dataset& data) {
  if (data.empty()) return Vector::Zero(data.dim());
  return data.features().colwise().maxCoeff().transpose();
}

}  // namespace poisoncert
