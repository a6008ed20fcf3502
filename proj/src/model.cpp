#include "poisoncert/model.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "poisoncert/errors.hpp"
#include "poisoncert/rng.hpp"

namespace poisoncert {

LinearModel::LinearModel(Vector theta, double rho) : theta_(std::move(theta)), rho_(rho) {
  if (!(rho_ > 0.0)) throw ConfigError("model radius rho must be positive");
  if (theta_.norm() > rho_ * (1.0 + 1e-9)) throw Error("model parameter lies outside the rho-ball");
}

LinearModel LinearModel::zero(Eigen::Index d, double rho) { return LinearModel(Vector::Zero(d), rho); }

double hinge(const Vector& theta, const Eigen::Ref<const Vector>& x, int y) {
  return std::max(0.0, 1.0 - y * theta.dot(x));
}

double hinge_loss(const LinearModel& model, const LabeledPoint& p) {
  if (p.x.size() != model.dim()) throw DimensionError("point and model dimensions differ");
  return hinge(model.theta(), p.x, p.y);
}

Vector hinge_subgradient(const LinearModel& model, const LabeledPoint& p) {
  if (p.x.size() != model.dim()) throw DimensionError("point and model dimensions differ");
  if (1.0 - p.y * model.theta().dot(p.x) > 0.0) return -p.y * p.x;
  return Vector::Zero(p.x.size());
}

LossReport evaluate(const LinearModel& model, const Dataset& data) {
  if (data.empty()) throw Error("cannot evaluate on an empty dataset");
  if (data.dim() != model.dim()) throw DimensionError("dataset and model dimensions differ");
  const Eigen::VectorXd margins = data.labels().cwiseProduct(data.features() * model.theta());
  LossReport r;
  r.n_points = data.size();
  r.avg_hinge = (1.0 - margins.array()).max(0.0).mean();
  r.zero_one = static_cast<double>((margins.array() <= 0.0).count()) / static_cast<double>(data.size());
  return r;
}

double weighted_hinge(const Vector& theta, const Dataset& data, const Eigen::VectorXd& weights) {
  const Eigen::VectorXd margins = data.labels().cwiseProduct(data.features() * theta);
  return weights.dot((1.0 - margins.array()).max(0.0).matrix());
}

Vector mean_hinge_subgradient(const Vector& theta, const Dataset& data) {
  const Eigen::VectorXd margins = data.labels().cwiseProduct(data.features() * theta);
  const Eigen::VectorXd active = (margins.array() < 1.0).cast<double>();
  return -(data.features().transpose() * active.cwiseProduct(data.labels())) /
         static_cast<double>(data.size());
}

namespace {

// Dual coordinate descent for min_theta sum_i w_i hinge_i + (lambda/2)||theta||^2,
// with dual box 0 <= alpha_i <= w_i and theta = v / lambda, v = sum alpha_i y_i x_i.
// The box does not depend on lambda, so alpha warm-starts across the search.
class DualSolver {
 public:
  DualSolver(const Dataset& data, const Eigen::VectorXd& weights, std::uint64_t seed)
      : data_(data), weights_(weights), alpha_(Eigen::VectorXd::Zero(data.size())), rng_(seed) {
    sq_norms_ = data.features().rowwise().squaredNorm();
    order_.resize(static_cast<std::size_t>(data.size()));
    std::iota(order_.begin(), order_.end(), Eigen::Index{0});
  }

  void solve(double lambda, int max_epochs) {
    const auto& X = data_.features();
    const auto& y = data_.labels();
    v_ = X.transpose() * alpha_.cwiseProduct(y);
    for (int epoch = 0; epoch < max_epochs; ++epoch) {
      for (std::size_t k = order_.size(); k > 1; --k) std::swap(order_[k - 1], order_[rng_.index(k)]);
      double max_violation = 0.0;
      for (const Eigen::Index i : order_) {
        const double w = weights_[i];
        if (sq_norms_[i] == 0.0) {
          alpha_[i] = w;
          continue;
        }
        const double grad = y[i] * X.row(i).dot(v_) / lambda - 1.0;
        double projected = grad;
        if (alpha_[i] <= 0.0) projected = std::min(grad, 0.0);
        if (alpha_[i] >= w) projected = std::max(grad, 0.0);
        max_violation = std::max(max_violation, std::abs(projected));
        if (projected == 0.0) continue;
        const double updated = std::clamp(alpha_[i] - grad * lambda / sq_norms_[i], 0.0, w);
        v_ += (updated - alpha_[i]) * y[i] * X.row(i).transpose();
        alpha_[i] = updated;
      }
      if (max_violation < 1e-12) break;
    }
  }

  const Vector& v() const { return v_; }
  double alpha_sum() const { return alpha_.sum(); }

 private:
  const Dataset& data_;
  const Eigen::VectorXd& weights_;
  Eigen::VectorXd alpha_;
  Eigen::VectorXd sq_norms_;
  Vector v_;
  std::vector<Eigen::Index> order_;
  Rng rng_;
};

Vector project_to_ball(const Vector& theta, double rho) {
  const double norm = theta.norm();
  return norm > rho ? Vector(theta * (rho / norm)) : theta;
}

}  // namespace

TrainResult train_erm(const Dataset& data, double rho, const TrainConfig& config) {
  if (data.empty()) throw Error("cannot train on an empty dataset");
  const Eigen::VectorXd w = Eigen::VectorXd::Constant(data.size(), 1.0 / static_cast<double>(data.size()));
  return train_erm_weighted(data, w, rho, config);
}

TrainResult train_erm_weighted(const Dataset& data, const Eigen::VectorXd& weights, double rho,
                               const TrainConfig& config, const std::optional<Vector>& candidate) {
  if (data.empty()) throw Error("cannot train on an empty dataset");
  if (weights.size() != data.size()) throw DimensionError("one weight per point required");
  if ((weights.array() < 0.0).any()) throw Error("training weights must be non-negative");
  if (!(rho > 0.0)) throw ConfigError("model radius rho must be positive");

  // For any alpha in the box, sum(alpha) - rho ||v|| lower-bounds the constrained
  // minimum; every projected iterate upper-bounds it.
  Vector best_theta = Vector::Zero(data.dim());
  double best_primal = weighted_hinge(best_theta, data, weights);
  double best_dual = 0.0;
  auto consider = [&](const Vector& theta) {
    const Vector feasible = project_to_ball(theta, rho);
    const double value = weighted_hinge(feasible, data, weights);
    if (value < best_primal) {
      best_primal = value;
      best_theta = feasible;
    }
  };

  const double scale = weights.dot(data.features().rowwise().norm());
  int steps = 0;
  if (scale > 0.0) {
    DualSolver solver(data, weights, config.seed);
    double lambda_hi = scale / rho;  // ||v|| / lambda_hi <= rho for every feasible alpha
    double lambda_lo = lambda_hi * 1e-12;
    double lambda = lambda_hi;
    while (steps < config.max_search_steps) {
      ++steps;
      solver.solve(lambda, config.max_epochs);
      const Vector theta = solver.v() / lambda;
      consider(theta);
      best_dual = std::max(best_dual, solver.alpha_sum() - rho * solver.v().norm());
      if (best_primal - best_dual <= config.tol) break;
      if (theta.norm() <= rho) {
        lambda_hi = lambda;
      } else {
        lambda_lo = lambda;
      }
      if (lambda_hi / lambda_lo < 1.0 + 1e-14) break;
      lambda = std::sqrt(lambda_lo * lambda_hi);
    }
  } else {
    best_dual = best_primal;  // all features are zero: every theta scores the same
  }

  if (candidate) {
    if (candidate->size() != data.dim()) throw DimensionError("candidate dimension mismatch");
    consider(*candidate);
  }
  TrainResult result{LinearModel(best_theta, rho), best_primal, best_dual, false, steps};
  result.converged = best_primal - best_dual <= config.tol;
  return result;
}

double generalization_bound(double n, double rho, double delta, double radius) {
  if (!(n >= 1.0)) throw ConfigError("generalization bound needs n >= 1");
  if (!(delta > 0.0 && delta < 1.0)) throw ConfigError("delta must lie in (0, 1)");
  if (!(rho > 0.0) || !(radius > 0.0)) throw ConfigError("rho and R must be positive");
  return rho * radius * (std::sqrt(4.0 / n) + std::sqrt(std::log(1.0 / delta) / (2.0 * n)));
}

}  // namespace poisoncert
