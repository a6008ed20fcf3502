#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "poisoncert/defense.hpp"
#include "poisoncert/model.hpp"

namespace poisoncert {

enum class AttackKind { kLabelFlip, kGradient, kCertificate };

AttackKind parse_attack_kind(std::string_view name);
std::string_view attack_kind_name(AttackKind kind);

struct AttackSpec {
  AttackKind kind = AttackKind::kLabelFlip;
  double eps = 0.1;
  std::uint64_t seed = 0;
  int steps = 20;          // gradient kind: outer iterations
  double step_size = 0.1;  // gradient kind: constant ascent step

  void validate() const;
};

struct AttackResult {
  Dataset points;
  /// True when fewer than floor(eps n) feasible points could be produced.
  bool exhausted = false;
  std::vector<std::string> warnings;
  /// Gradient kind: average clean hinge loss of the retrained model, one entry per iteration.
  std::vector<double> loss_trace;
};

/// Copies of clean points with flipped labels, drawn with replacement and kept only
/// when feasible, until floor(eps n) are collected or every flipped point is known
/// to be infeasible.
AttackResult label_flip_attack(const Dataset& clean, const FeasibleSet& defense, double eps, std::uint64_t seed);

/// Clip the slab coordinate to +-s/||v|| along v, then shrink the remaining offset from
/// mu_y into the sphere. Always feasible for the continuous constraints, but not the
/// Euclidean projection onto the intersection.
Vector project_onto_defense(const SphereSlabParams& params, const Vector& x, int y);

/// Alternating heuristic: retrain on D_c + D_p, move every attack point one step along
/// -y theta~ (the ascent direction of its own loss), project back onto the defense,
/// repeat. Starts from label_flip_attack, or from the opposite-label centroids when
/// no flipped point is feasible.
AttackResult gradient_attack(const Dataset& clean, const FeasibleSet& defense, double eps, double rho, int steps,
                             double step_size, std::uint64_t seed, const TrainConfig& train = {});

}  // namespace poisoncert
