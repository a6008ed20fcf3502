#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "poisoncert/defense.hpp"
#include "poisoncert/maxoracle.hpp"
#include "poisoncert/model.hpp"
#include "poisoncert/sdp.hpp"

namespace poisoncert {

/// Adaptive regularized dual averaging over the rho-ball:
///   G_t = G_{t-1} + g_t,  lambda_t = max(1/eta, ||G_t|| / rho),  theta_t = -G_t / lambda_t.
struct RdaState {
  Vector cumulative_gradient;
  long t = 0;
  double eta = 1.0;
  double lambda = 1.0;
  double rho = 1.0;
  Vector theta;
  double last_gradient_norm = 0.0;

  static RdaState initial(Eigen::Index d, double rho, double eta);
};

RdaState rda_step(const RdaState& state, const Vector& gradient);

/// Per-state bound rho^2/(2 eta) + sum_{s<=t} ||g_s||^2 / (2 lambda_s); the initial
/// state (t = 0) contributes only the first term.
std::vector<double> regret_trace(const std::vector<RdaState>& history);

/// U(theta) = (1/n) L(theta; D_c) + eps * worst-case loss reported by the oracle at theta.
double objective_U(const Vector& theta, const Dataset& clean, double eps, const OracleResult& oracle);

struct StepTrace {
  long t = 0;
  double u = 0.0;            // U at the iterate the oracle was queried at
  double lambda = 0.0;       // after the update
  double grad_norm = 0.0;
  double oracle_loss = 0.0;
  double regret_bound = 0.0;
};

struct CertifyConfig {
  double eps = 0.1;
  double rho = 1.0;
  /// Defaults to rho / (gbar sqrt(T)), gbar = mean ||x|| + eps * max_y(||mu_y|| + r_y).
  std::optional<double> eta;
  /// Number of oracle steps; defaults to floor(eps n). Each attack point then has
  /// mass eps / T relative to clean mass 1.
  std::optional<long> steps;
  std::uint64_t seed = 0;
  TrainConfig train{1e-9, 200, 2000, 0};
  IntegerOracleConfig integer;
  DataDependentConfig sdp;
  /// Multisets drawn per stored distribution when forming data-dependent attacks.
  int attack_samples = 5;
  /// Number of iterations (largest oracle value first) whose distributions are sampled.
  int candidate_steps = 10;
  double sandwich_tol = 1e-6;
};

struct Certificate {
  std::string oracle;  // "fixed", "integer" or "data-dependent"
  double eps = 0.0;
  double rho = 0.0;
  double eta = 0.0;
  long steps = 0;
  double upper_bound = 0.0;
  /// (1/n) L(theta~; D_c) + (eps / T) sum over D_p of the loss.
  double lower_bound = 0.0;
  double duality_gap = 0.0;
  Dataset attack;
  LinearModel model_tilde = LinearModel::zero(1, 1.0);
  double clean_train_loss = 0.0;
  std::vector<double> u_trace;
  std::vector<double> regret_bound_trace;
  std::vector<StepTrace> trace;
  bool train_converged = true;
  /// Whether the minimax sandwich was checked (fixed continuous oracle only) and held.
  bool sandwich_checked = false;
  bool sandwich_holds = true;
  int skipped_steps = 0;
};

/// Online certification against a fixed defense: each step queries the worst
/// feasible point at the current iterate, feeds the gradient of
/// (1/n) L(theta; D_c) + eps * loss(point) to RDA, and records U. The best U is
/// the certificate; the queried points form the candidate attack, whose retrained
/// model gives the lower bound. Integer-feature defenses use the rounding oracle
/// (upper bound from the relaxation, attack from the rounded points).
Certificate certify_fixed(const Dataset& clean, const FeasibleSet& defense, const CertifyConfig& config);

/// Same loop with the Gram-matrix SDP oracle for a data-dependent defense. Attacks are
/// sampled from the stored distributions and the best retrained loss is the lower bound.
/// Steps whose SDP search fails are skipped; more than 10% skipped is an error.
Certificate certify_data_dependent(const Dataset& clean, const FeasibleSet& defense, const CertifyConfig& config);

/// Dispatches on the defense kind.
Certificate certify(const Dataset& clean, const FeasibleSet& defense, const CertifyConfig& config);

/// floor(eps n) with a guard against representation error in eps.
long attack_size(double eps, Eigen::Index n);

}  // namespace poisoncert
