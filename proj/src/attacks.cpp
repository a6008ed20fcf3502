#include "poisoncert/attacks.hpp"

#include <algorithm>
#include <cmath>

#include "poisoncert/errors.hpp"
#include "poisoncert/rng.hpp"

namespace poisoncert {

AttackKind parse_attack_kind(std::string_view name) {
  if (name == "label-flip") return AttackKind::kLabelFlip;
  if (name == "gradient") return AttackKind::kGradient;
  if (name == "certificate" || name == "certificate-attack") return AttackKind::kCertificate;
  throw ConfigError("unknown attack kind '" + std::string(name) + "' (label-flip, gradient, certificate)");
}

std::string_view attack_kind_name(AttackKind kind) {
  switch (kind) {
    case AttackKind::kLabelFlip:
      return "label-flip";
    case AttackKind::kGradient:
      return "gradient";
    case AttackKind::kCertificate:
      return "certificate";
  }
  return "label-flip";
}

void AttackSpec::validate() const {
  if (!(eps > 0.0 && eps <= 1.0)) throw ConfigError("attack eps must lie in (0, 1]");
  if (steps < 0) throw ConfigError("attack steps must be non-negative");
  if (!(step_size > 0.0)) throw ConfigError("attack step size must be positive");
}

namespace {

long target_size(double eps, Eigen::Index n) {
  if (!(eps > 0.0 && eps <= 1.0)) throw ConfigError("attack eps must lie in (0, 1]");
  const long m = static_cast<long>(std::floor(eps * static_cast<double>(n) + 1e-9));
  if (m < 1) throw ConfigError("eps * n must be at least 1");
  return m;
}

}  // namespace

AttackResult label_flip_attack(const Dataset& clean, const FeasibleSet& defense, double eps, std::uint64_t seed) {
  if (clean.dim() != defense.params.dim()) throw DimensionError("dataset and defense dimensions differ");
  const long m = target_size(eps, clean.size());
  // Sampling clean rows and discarding infeasible flips is the same as sampling the
  // feasible flipped pool directly.
  std::vector<Eigen::Index> pool;
  for (Eigen::Index i = 0; i < clean.size(); ++i) {
    if (membership(defense, clean.x(i), -clean.y(i))) pool.push_back(i);
  }
  AttackResult out;
  std::vector<LabeledPoint> pts;
  if (pool.empty()) {
    out.exhausted = true;
    out.warnings.push_back("no flipped clean point passes the defense; label-flip attack is empty");
  } else {
    Rng rng(seed);
    pts.reserve(static_cast<std::size_t>(m));
    for (long k = 0; k < m; ++k) {
      const Eigen::Index i = pool[rng.index(pool.size())];
      pts.push_back({clean.x(i), -clean.y(i)});
    }
  }
  out.points = Dataset(pts, clean.dim(), clean.integer_features() && defense.integer_features);
  return out;
}

Vector project_onto_defense(const SphereSlabParams& params, const Vector& x, int y) {
  if (x.size() != params.dim()) throw DimensionError("point and defense dimensions differ");
  Vector offset = x - params.mu(y);
  const Vector v = params.slab_direction(y);
  const double v_norm = v.norm();
  if (params.use_slab && v_norm > 0.0) {
    const Vector v_hat = v / v_norm;
    const double along = offset.dot(v_hat);
    const double limit = params.s(y) / v_norm;
    const double clipped = std::clamp(along, -limit, limit);
    offset += (clipped - along) * v_hat;
  }
  if (params.use_sphere) {
    const double norm = offset.norm();
    if (norm > params.r(y)) offset *= params.r(y) / norm;
  }
  return params.mu(y) + offset;
}

AttackResult gradient_attack(const Dataset& clean, const FeasibleSet& defense, double eps, double rho, int steps,
                             double step_size, std::uint64_t seed, const TrainConfig& train) {
  if (steps < 0) throw ConfigError("attack steps must be non-negative");
  if (!(step_size > 0.0)) throw ConfigError("attack step size must be positive");
  const long m = target_size(eps, clean.size());
  AttackResult out = label_flip_attack(clean, defense, eps, seed);
  std::vector<LabeledPoint> pts;
  if (out.points.empty()) {
    out.warnings.push_back("gradient attack starts from the class centroids");
    for (long k = 0; k < m; ++k) {
      const int y = k % 2 == 0 ? 1 : -1;
      Vector start = defense.params.mu(y);
      if (defense.integer_features) start = start.array().round().max(0.0).matrix();
      if (membership(defense, start, y)) pts.push_back({start, y});
    }
    out.exhausted = static_cast<long>(pts.size()) < m;
    if (out.exhausted) {
      out.warnings.push_back("rounded centroids are infeasible; gradient attack is short");
    }
  } else {
    for (Eigen::Index i = 0; i < out.points.size(); ++i) pts.push_back(out.points.point(i));
  }
  if (pts.empty()) return out;

  const double inv_n = 1.0 / static_cast<double>(clean.size());
  const bool integer = defense.integer_features;
  for (int it = 0; it < steps; ++it) {
    const Dataset attack(pts, clean.dim(), false);
    const Dataset combined = clean.concat(attack);
    const Eigen::VectorXd w = Eigen::VectorXd::Constant(combined.size(), inv_n);
    TrainConfig tc = train;
    tc.seed = mix_seed(seed, static_cast<std::uint64_t>(it));
    const TrainResult tr = train_erm_weighted(combined, w, rho, tc);
    out.loss_trace.push_back(evaluate(tr.model, clean).avg_hinge);

    const Vector& theta = tr.model.theta();
    for (LabeledPoint& p : pts) {
      Vector moved = project_onto_defense(defense.params, p.x - step_size * p.y * theta, p.y);
      if (integer) moved = moved.array().round().max(0.0).matrix();
      if (membership(defense, moved, p.y)) p.x = std::move(moved);
    }
  }
  out.points = Dataset(pts, clean.dim(), integer && clean.integer_features());
  return out;
}

}  // namespace poisoncert
