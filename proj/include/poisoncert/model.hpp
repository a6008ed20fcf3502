#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <optional>

#include "poisoncert/data.hpp"

namespace poisoncert {

/// Linear classifier theta restricted to the L2 ball of radius rho.
class LinearModel {
 public:
  /// Throws if rho <= 0 or ||theta|| exceeds rho by more than 1e-9 relative.
  LinearModel(Vector theta, double rho);
  /// The zero model of dimension d.
  static LinearModel zero(Eigen::Index d, double rho);

  const Vector& theta() const { return theta_; }
  double rho() const { return rho_; }
  Eigen::Index dim() const { return theta_.size(); }

 private:
  Vector theta_;
  double rho_;
};

/// max(0, 1 - y <theta, x>).
double hinge(const Vector& theta, const Eigen::Ref<const Vector>& x, int y);
double hinge_loss(const LinearModel& model, const LabeledPoint& p);
/// -y x inside the margin (1 - y<theta,x> > 0), zero otherwise.
Vector hinge_subgradient(const LinearModel& model, const LabeledPoint& p);

struct LossReport {
  double avg_hinge = 0.0;
  double zero_one = 0.0;  // sign(0) counts as an error for both labels
  Eigen::Index n_points = 0;
};

LossReport evaluate(const LinearModel& model, const Dataset& data);

/// sum_i w_i * hinge(theta; x_i, y_i).
double weighted_hinge(const Vector& theta, const Dataset& data, const Eigen::VectorXd& weights);
/// (1/n) sum_i subgradient over the dataset, using the same convention as hinge_subgradient.
Vector mean_hinge_subgradient(const Vector& theta, const Dataset& data);

struct TrainConfig {
  /// Stop once the certified suboptimality of the weighted objective is below tol.
  double tol = 1e-4;
  int max_search_steps = 200;
  int max_epochs = 2000;
  std::uint64_t seed = 0;
};

struct TrainResult {
  LinearModel model;
  double objective = 0.0;    // weighted hinge at `model`
  double lower_bound = 0.0;  // dual value; the true minimum lies in [lower_bound, objective]
  bool converged = false;    // false means the budget ran out; `model` is the best iterate
  int search_steps = 0;
};

/// Minimizes the average hinge loss over ||theta|| <= rho.
TrainResult train_erm(const Dataset& data, double rho, const TrainConfig& config = {});

/// Minimizes sum_i w_i hinge_i over ||theta|| <= rho (w_i >= 0). When `candidate`
/// is given and scores better than the solver's iterate, it is returned instead.
TrainResult train_erm_weighted(const Dataset& data, const Eigen::VectorXd& weights, double rho,
                               const TrainConfig& config = {},
                               const std::optional<Vector>& candidate = std::nullopt);

/// Uniform-convergence bound for 1-Lipschitz margin losses:
/// rho R (sqrt(4/n) + sqrt(log(1/delta) / (2n))).
double generalization_bound(double n, double rho, double delta, double radius);

}  // namespace poisoncert
