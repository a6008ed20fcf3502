#pragma once

#include <array>
#include <cstdint>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

#include "poisoncert/defense.hpp"
#include "poisoncert/model.hpp"

namespace poisoncert {

/// <coeff, G> (== or <=) rhs, with `coeff` symmetric.
struct LinearConstraint {
  Eigen::MatrixXd coeff;
  double rhs = 0.0;
  std::string label;
};

/// maximize <objective, G> + objective_constant
/// s.t. equalities, inequalities (<=), G symmetric PSD of size dim.
struct SdpProgram {
  Eigen::Index dim = 0;
  Eigen::MatrixXd objective;
  double objective_constant = 0.0;
  std::vector<LinearConstraint> equalities;
  std::vector<LinearConstraint> inequalities;
};

/// Masses of the four support points of a data-dependent attack (clean data has mass 1).
struct AttackWeights {
  double a_plus = 0.0;   // positive support vector
  double b_plus = 0.0;   // positive non-support vector
  double a_minus = 0.0;  // negative support vector
  double b_minus = 0.0;  // negative non-support vector

  double total() const { return a_plus + b_plus + a_minus + b_minus; }
  /// Weight of a Gram slot (0: x_{a,+}, 1: x_{a,-}, 2: x_{b,+}, 3: x_{b,-}).
  double slot(int s) const;
};

/// Gram matrix slots: the four attack points, then mu_+, mu_-, theta.
namespace gram {
inline constexpr int kSize = 7;
inline constexpr int kMuPlus = 4;
inline constexpr int kMuMinus = 5;
inline constexpr int kTheta = 6;
inline constexpr int slot_label(int s) { return s % 2 == 0 ? 1 : -1; }
inline constexpr bool slot_is_support(int s) { return s < 2; }
}  // namespace gram

/// Orthonormal description of span{mu_+, mu_-, theta}: [mu_+ mu_- theta] = basis * coords.
struct KnownFactor {
  Eigen::MatrixXd basis;       // d x k
  Eigen::MatrixXd complement;  // d x (d - k), orthonormal complement of the span
  Eigen::MatrixXd coords;      // k x 3
};

KnownFactor factor_known(const Vector& mu_plus, const Vector& mu_minus, const Vector& theta);

struct GramProgram {
  SdpProgram sdp;
  KnownFactor known;
  AttackWeights weights;
  /// Slots with positive mass; zero-mass points carry no constraints.
  std::array<bool, 4> active{};
  /// Coefficients of the poisoned centroid mu_hat_y over the 7 Gram vectors ([0]: +, [1]: -).
  std::array<Eigen::VectorXd, 2> centroid_coeffs;
};

/// Builds the data-dependent worst-case program for fixed weights: sphere and slab
/// around the poisoned centroids, margin side conditions, and the expected hinge
/// objective, all as linear functions of the Gram matrix. Requires the sphere.
GramProgram build_gram_program(const ClassStats& clean, const LinearModel& model, const SphereSlabParams& defense,
                               const AttackWeights& weights);

struct SdpSettings {
  double tol = 1e-7;
  int max_iter = 100000;
  /// Anderson acceleration memory; 0 runs plain ADMM.
  int anderson_memory = 8;
};

enum class SdpStatus { kOptimal, kMaxIter, kInfeasible };
std::string_view sdp_status_name(SdpStatus status);

struct SdpSolution {
  Eigen::MatrixXd G;
  double objective = 0.0;
  SdpStatus status = SdpStatus::kMaxIter;
  double primal_residual = 0.0;
  double dual_residual = 0.0;
  int iterations = 0;
};

/// Frobenius-nearest PSD matrix (negative eigenvalues clipped to zero).
Eigen::MatrixXd project_psd(const Eigen::MatrixXd& m);

/// ADMM splitting between the affine set (constraints with slack variables) and
/// the PSD cone times the non-negative orthant.
SdpSolution solve_sdp(const SdpProgram& program, const SdpSettings& settings = {});

/// Solves a Gram program through the equivalent (4 + k)-dimensional program in which
/// the fixed block is replaced by an identity block on the span coordinates. In low
/// dimension the fixed 3x3 block is singular and the original feasible set has no
/// interior, which stalls first-order solvers; the reduced set does not have this
/// problem. The returned G is the 7x7 Gram matrix.
SdpSolution solve_gram_program(const GramProgram& program, const SdpSettings& settings = {});

struct RecoveredVectors {
  /// In Gram slot order; each has size d + lifted_dims.
  std::array<Vector, 4> x;
  /// Extra coordinates needed when the Schur complement has higher rank than the
  /// orthogonal complement of span{mu_+, mu_-, theta} inside R^d.
  Eigen::Index lifted_dims = 0;
};

/// Realizes the four attack vectors of a 7x7 Gram matrix given the known vectors:
/// the span component reproduces the cross inner products, and a factor of the
/// Schur complement G11 - G12 G22^+ G21 supplies orthogonal directions.
/// Throws NumericalError if the Schur complement is indefinite beyond `tol`.
RecoveredVectors recover_vectors(const Eigen::MatrixXd& G, const Vector& mu_plus, const Vector& mu_minus,
                                 const Vector& theta, double tol = 1e-7);

struct DataDependentConfig {
  int samples = 50;
  std::uint64_t seed = 0;
  /// Also try the support-vector-only weightings (eps on a_+, on a_-, split evenly).
  bool include_boundary = true;
  SdpSettings sdp;
  /// When set, one JSON line per solved program is appended here.
  std::ostream* trace = nullptr;
};

struct SupportPoint {
  LabeledPoint point;
  double weight = 0.0;
  bool support_vector = true;
};

struct DataDependentResult {
  double value = 0.0;  // eps-weighted expected hinge loss of the best distribution
  AttackWeights weights;
  std::vector<SupportPoint> support;
  SdpSolution solution;
  Eigen::Index lifted_dims = 0;
  int solved = 0;
  int infeasible = 0;
  int failed = 0;
};

/// Monte-Carlo search over the weights (Dirichlet(1,1,1,1) scaled by eps) with one
/// SDP per draw. Throws NumericalError if no draw yields an optimal solution.
DataDependentResult max_loss_data_dependent(const ClassStats& clean, const LinearModel& model,
                                            const SphereSlabParams& defense, double eps,
                                            const DataDependentConfig& config);

}  // namespace poisoncert
