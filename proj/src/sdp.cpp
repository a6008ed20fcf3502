#include "poisoncert/sdp.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <optional>
#include <ostream>

#include "json.hpp"
#include "poisoncert/errors.hpp"
#include "poisoncert/rng.hpp"

namespace poisoncert {

double AttackWeights::slot(int s) const {
  switch (s) {
    case 0: return a_plus;
    case 1: return a_minus;
    case 2: return b_plus;
    case 3: return b_minus;
    default: throw Error("attack slot out of range");
  }
}

std::string_view sdp_status_name(SdpStatus status) {
  switch (status) {
    case SdpStatus::kOptimal: return "optimal";
    case SdpStatus::kMaxIter: return "max-iter";
    case SdpStatus::kInfeasible: return "infeasible";
  }
  return "unknown";
}

namespace {

using Eigen::MatrixXd;
using Eigen::VectorXd;

// (a b^T + b a^T) / 2, so that <sym(a, b), G> = a^T G b.
MatrixXd sym(const VectorXd& a, const VectorXd& b) { return 0.5 * (a * b.transpose() + b * a.transpose()); }

VectorXd unit(int i) { return VectorXd::Unit(gram::kSize, i); }

}  // namespace

KnownFactor factor_known(const Vector& mu_plus, const Vector& mu_minus, const Vector& theta) {
  const Eigen::Index d = theta.size();
  if (mu_plus.size() != d || mu_minus.size() != d) throw DimensionError("known vectors differ in dimension");
  MatrixXd known(d, 3);
  known << mu_plus, mu_minus, theta;
  Eigen::JacobiSVD<MatrixXd> svd(known, Eigen::ComputeFullU | Eigen::ComputeThinV);
  const VectorXd& sv = svd.singularValues();
  const double cutoff = std::max(1e-12, 1e-10 * (sv.size() > 0 ? sv[0] : 0.0));
  Eigen::Index rank = 0;
  while (rank < sv.size() && sv[rank] > cutoff) ++rank;
  KnownFactor f;
  f.basis = svd.matrixU().leftCols(rank);
  f.complement = svd.matrixU().rightCols(d - rank);
  f.coords = sv.head(rank).asDiagonal() * svd.matrixV().leftCols(rank).transpose();
  return f;
}

GramProgram build_gram_program(const ClassStats& clean, const LinearModel& model, const SphereSlabParams& defense,
                               const AttackWeights& w) {
  validate(defense);
  if (!defense.use_sphere) throw ConfigError("the data-dependent program needs the sphere constraint");
  const Eigen::Index d = model.dim();
  if (clean.mu_plus.size() != d || clean.mu_minus.size() != d) throw DimensionError("centroid/model dimension mismatch");
  for (int s = 0; s < 4; ++s) {
    if (!(w.slot(s) >= 0.0)) throw ConfigError("attack weights must be non-negative");
  }

  GramProgram prog;
  prog.weights = w;
  prog.known = factor_known(clean.mu_plus, clean.mu_minus, model.theta());
  SdpProgram& sdp = prog.sdp;
  sdp.dim = gram::kSize;

  // Known block: inner products among mu_+, mu_-, theta.
  const std::array<const Vector*, 3> known = {&clean.mu_plus, &clean.mu_minus, &model.theta()};
  static constexpr const char* kKnownNames[] = {"mu+", "mu-", "theta"};
  for (int i = 0; i < 3; ++i) {
    for (int j = i; j < 3; ++j) {
      sdp.equalities.push_back({sym(unit(gram::kMuPlus + i), unit(gram::kMuPlus + j)), known[i]->dot(*known[j]),
                                std::string("<") + kKnownNames[i] + "," + kKnownNames[j] + ">"});
    }
  }

  for (const int y : {1, -1}) {
    const int a_slot = y > 0 ? 0 : 1;
    const int b_slot = y > 0 ? 2 : 3;
    const double denom = clean.p(y) + w.slot(a_slot) + w.slot(b_slot);
    if (!(denom > 0.0)) throw NumericalError("poisoned centroid has zero mass");
    VectorXd m = VectorXd::Zero(gram::kSize);
    m[y > 0 ? gram::kMuPlus : gram::kMuMinus] = clean.p(y) / denom;
    m[a_slot] = w.slot(a_slot) / denom;
    m[b_slot] = w.slot(b_slot) / denom;
    prog.centroid_coeffs[y > 0 ? 0 : 1] = m;
  }

  for (int s = 0; s < 4; ++s) {
    prog.active[s] = w.slot(s) > 0.0;
    if (!prog.active[s]) continue;
    const int y = gram::slot_label(s);
    const VectorXd& m_own = prog.centroid_coeffs[y > 0 ? 0 : 1];
    const VectorXd& m_other = prog.centroid_coeffs[y > 0 ? 1 : 0];
    const VectorXd offset = unit(s) - m_own;
    const VectorXd direction = m_own - m_other;
    const std::string tag = "[" + std::to_string(s) + "]";
    if (defense.use_slab) {
      sdp.inequalities.push_back({sym(offset, direction), defense.s(y), "slab+" + tag});
      sdp.inequalities.push_back({-sym(offset, direction), defense.s(y), "slab-" + tag});
    }
    sdp.inequalities.push_back({sym(offset, offset), defense.r(y) * defense.r(y), "sphere" + tag});
    const MatrixXd score = sym(unit(gram::kTheta), unit(s));  // <theta, x_s>
    if (gram::slot_is_support(s)) {
      sdp.inequalities.push_back({y * score, 1.0, "support" + tag});  // 1 - y<theta,x> >= 0
    } else {
      sdp.inequalities.push_back({-y * score, -1.0, "non-support" + tag});  // 1 - y<theta,x> <= 0
    }
  }

  // pi_{a,+}(1 - <theta, x_{a,+}>) + pi_{a,-}(1 + <theta, x_{a,-}>)
  sdp.objective = -w.a_plus * sym(unit(gram::kTheta), unit(0)) + w.a_minus * sym(unit(gram::kTheta), unit(1));
  sdp.objective_constant = w.a_plus + w.a_minus;
  return prog;
}

MatrixXd project_psd(const MatrixXd& m) {
  const MatrixXd symmetric = 0.5 * (m + m.transpose());
  Eigen::SelfAdjointEigenSolver<MatrixXd> eig(symmetric);
  const VectorXd clipped = eig.eigenvalues().cwiseMax(0.0);
  return eig.eigenvectors() * clipped.asDiagonal() * eig.eigenvectors().transpose();
}

namespace {

// Scaled half-vectorization: off-diagonals carry sqrt(2) so the Euclidean inner
// product of svecs equals the trace inner product of the matrices.
class Svec {
 public:
  explicit Svec(Eigen::Index n) : n_(n) {}
  Eigen::Index size() const { return n_ * (n_ + 1) / 2; }

  VectorXd pack(const MatrixXd& m) const {
    VectorXd v(size());
    Eigen::Index k = 0;
    for (Eigen::Index i = 0; i < n_; ++i) {
      for (Eigen::Index j = i; j < n_; ++j) v[k++] = i == j ? m(i, i) : std::numbers::sqrt2 * 0.5 * (m(i, j) + m(j, i));
    }
    return v;
  }

  MatrixXd unpack(const Eigen::Ref<const VectorXd>& v) const {
    MatrixXd m(n_, n_);
    Eigen::Index k = 0;
    for (Eigen::Index i = 0; i < n_; ++i) {
      for (Eigen::Index j = i; j < n_; ++j) {
        const double value = i == j ? v[k] : v[k] / std::numbers::sqrt2;
        m(i, j) = value;
        m(j, i) = value;
        ++k;
      }
    }
    return m;
  }

 private:
  Eigen::Index n_;
};

}  // namespace

SdpSolution solve_sdp(const SdpProgram& program, const SdpSettings& settings) {
  const Eigen::Index n = program.dim;
  if (n <= 0 || program.objective.rows() != n || program.objective.cols() != n) {
    throw DimensionError("malformed SDP program");
  }
  const Svec svec(n);
  const Eigen::Index nv = svec.size();
  const auto me = static_cast<Eigen::Index>(program.equalities.size());
  const auto mi = static_cast<Eigen::Index>(program.inequalities.size());
  const Eigen::Index nw = nv + mi;
  const Eigen::Index m = me + mi;

  // Affine set {M w = q}, w = [svec(G); slack].
  MatrixXd M = MatrixXd::Zero(m, nw);
  VectorXd q(m);

  for (Eigen::Index k = 0; k < me; ++k) {
    const auto& c = program.equalities[static_cast<std::size_t>(k)];
    if (c.coeff.rows() != n || c.coeff.cols() != n) throw DimensionError("constraint size mismatch");
    M.row(k).head(nv) = svec.pack(c.coeff).transpose();
    q[k] = c.rhs;
  }
  for (Eigen::Index k = 0; k < mi; ++k) {
    const auto& c = program.inequalities[static_cast<std::size_t>(k)];
    if (c.coeff.rows() != n || c.coeff.cols() != n) throw DimensionError("constraint size mismatch");
    M.row(me + k).head(nv) = svec.pack(c.coeff).transpose();
    M(me + k, nv + k) = 1.0;
    q[me + k] = c.rhs;
  }
  VectorXd cost = VectorXd::Zero(nw);
  cost.head(nv) = svec.pack(program.objective);

  MatrixXd projector = MatrixXd::Identity(nw, nw);
  VectorXd offset = VectorXd::Zero(nw);
  Eigen::LDLT<MatrixXd> gram_solver;
  if (m > 0) {
    gram_solver.compute(M * M.transpose());
    if (gram_solver.info() != Eigen::Success) throw NumericalError("constraint rows are degenerate");
    projector -= M.transpose() * gram_solver.solve(M);
    offset = M.transpose() * gram_solver.solve(q);
  }
  auto project_affine = [&](const VectorXd& w) -> VectorXd { return projector * w + offset; };
  auto project_cone = [&](const VectorXd& w) -> VectorXd {
    VectorXd out(nw);
    out.head(nv) = svec.pack(project_psd(svec.unpack(w.head(nv))));
    out.tail(mi) = w.tail(mi).cwiseMax(0.0);
    return out;
  };
  // Farkas test on a displacement v between the two sets: with v' its component in
  // the row space of M (v' = M^T y), -v' in the cone and q^T y > 0 separate them.
  auto certifies_infeasible = [&](const VectorXd& v) {
    if (m == 0) return false;
    const VectorXd y = gram_solver.solve(M * v);
    const double gap = q.dot(y);
    if (!(gap > 0.0)) return false;
    const VectorXd row = M.transpose() * y / gap;
    Eigen::SelfAdjointEigenSolver<MatrixXd> eig(-svec.unpack(row.head(nv)), Eigen::EigenvaluesOnly);
    const double cone_violation = std::max(-eig.eigenvalues().minCoeff(), (row.tail(mi)).maxCoeff());
    return cone_violation <= 1e-6 * std::max(1.0, row.norm());
  };

  const double primal_scale = std::max(1.0, q.size() > 0 ? q.lpNorm<Eigen::Infinity>() : 0.0);
  const double dual_scale = std::max(1.0, cost.lpNorm<Eigen::Infinity>());
  constexpr double kRelax = 1.6;
  // The cost enters the iteration as cost / sigma; matching sigma to the ratio of
  // cost and constraint magnitudes avoids long stalls on small objectives.
  double sigma = std::max(cost.lpNorm<Eigen::Infinity>(), 1e-3) / primal_scale;
  // One over-relaxed ADMM sweep on the state w = [z; u].
  struct Sweep {
    VectorXd next;
    VectorXd step;  // relaxed - z_next, the displacement used by the infeasibility test
    double primal = 0.0;
    double dual = 0.0;
  };
  auto sweep = [&](const VectorXd& w) {
    const auto z = w.head(nw);
    const auto u = w.tail(nw);
    const VectorXd x = project_affine(z - u + cost / sigma);
    const VectorXd relaxed = kRelax * x + (1.0 - kRelax) * z;
    const VectorXd z_next = project_cone(relaxed + u);
    Sweep s;
    s.step = relaxed - z_next;
    s.next.resize(2 * nw);
    s.next << z_next, u + s.step;
    s.primal = (x - z_next).norm();
    s.dual = sigma * (z_next - z).norm();
    return s;
  };

  // Safeguarded type-II Anderson acceleration: extrapolate from the last few
  // sweeps and keep the extrapolated state only if it shrinks the fixed-point residual.
  // Differences of states (S) and of residuals g(w) = w - F(w) (Y) live in ring buffers.
  const Eigen::Index memory = std::max(0, settings.anderson_memory);
  MatrixXd S(2 * nw, memory), Y(2 * nw, memory), YtY(memory, memory);
  Eigen::Index filled = 0, head = 0;
  VectorXd prev_w, prev_g;
  auto reset_memory = [&] {
    filled = 0;
    head = 0;
    prev_w.resize(0);
  };
  auto remember = [&](const VectorXd& w, const VectorXd& g) {
    if (prev_w.size() > 0) {
      S.col(head) = w - prev_w;
      Y.col(head) = g - prev_g;
      filled = std::min(filled + 1, memory);
      for (Eigen::Index j = 0; j < filled; ++j) YtY(head, j) = YtY(j, head) = Y.col(head).dot(Y.col(j));
      head = (head + 1) % memory;
    }
    prev_w = w;
    prev_g = g;
  };

  VectorXd w = VectorXd::Zero(2 * nw);
  Sweep cur = sweep(w);
  SdpSolution sol;
  sol.status = SdpStatus::kMaxIter;
  for (int it = 1; it <= settings.max_iter; ++it) {
    sol.primal_residual = cur.primal;
    sol.dual_residual = cur.dual;
    sol.iterations = it;
    if (cur.primal <= settings.tol * primal_scale && cur.dual <= settings.tol * dual_scale) {
      w = std::move(cur.next);
      sol.status = SdpStatus::kOptimal;
      break;
    }
    if (it % 50 == 0 && it >= 200 && cur.primal > 100.0 * settings.tol * primal_scale &&
        certifies_infeasible(cur.step)) {
      w = std::move(cur.next);
      sol.status = SdpStatus::kInfeasible;
      break;
    }

    std::optional<Sweep> accepted;
    if (memory > 0) {
      const VectorXd g = w - cur.next;
      remember(w, g);
      if (filled > 0) {
        MatrixXd normal = YtY.topLeftCorner(filled, filled);
        normal.diagonal().array() += 1e-10 * std::max(1.0, normal.diagonal().maxCoeff());
        const VectorXd gamma = normal.ldlt().solve(Y.leftCols(filled).transpose() * g);
        VectorXd candidate = cur.next - (S.leftCols(filled) - Y.leftCols(filled)) * gamma;
        if (candidate.allFinite()) {
          Sweep trial = sweep(candidate);
          if ((candidate - trial.next).norm() < g.norm()) {
            w = std::move(candidate);
            accepted = std::move(trial);
          } else {
            reset_memory();
          }
        }
      }
    }
    if (!accepted) {
      w = std::move(cur.next);
      accepted = sweep(w);
    }
    cur = std::move(*accepted);

    if (it % 50 == 0) {
      // Residual balancing; u is the dual scaled by 1/sigma.
      double factor = 1.0;
      if (cur.primal > 10.0 * cur.dual) factor = 2.0;
      if (cur.dual > 10.0 * cur.primal) factor = 0.5;
      if (factor != 1.0) {
        sigma *= factor;
        w.tail(nw) /= factor;
        reset_memory();
        cur = sweep(w);
      }
    }
  }
  const VectorXd z = w.head(nw);
  sol.G = svec.unpack(z.head(nv));
  sol.objective = cost.head(nv).dot(z.head(nv)) + program.objective_constant;
  return sol;
}

SdpSolution solve_gram_program(const GramProgram& program, const SdpSettings& settings) {
  const Eigen::Index k = program.known.coords.rows();
  const Eigen::Index n = 4 + k;
  // G = L^T M L with L = diag(I_4, R), so <A, G> = <L A L^T, M>.
  MatrixXd L = MatrixXd::Zero(n, gram::kSize);
  L.topLeftCorner(4, 4).setIdentity();
  L.bottomRightCorner(k, 3) = program.known.coords;
  auto reduce = [&](const MatrixXd& a) -> MatrixXd { return L * a * L.transpose(); };

  SdpProgram reduced;
  reduced.dim = n;
  reduced.objective = reduce(program.sdp.objective);
  reduced.objective_constant = program.sdp.objective_constant;
  // The known-block equalities become M_22 = I.
  for (Eigen::Index i = 0; i < k; ++i) {
    for (Eigen::Index j = i; j < k; ++j) {
      MatrixXd e = MatrixXd::Zero(n, n);
      e(4 + i, 4 + j) += 0.5;
      e(4 + j, 4 + i) += 0.5;
      reduced.equalities.push_back({e, i == j ? 1.0 : 0.0, "identity"});
    }
  }
  for (const LinearConstraint& c : program.sdp.inequalities) reduced.inequalities.push_back({reduce(c.coeff), c.rhs, c.label});

  SdpSolution sol = solve_sdp(reduced, settings);
  // Pin the identity block before mapping back so the known block is exact. With
  // M_22 = I the matrix is PSD iff M_11 - B B^T is, so clip that Schur complement.
  MatrixXd m = sol.G;
  m.bottomRightCorner(k, k).setIdentity();
  const MatrixXd B = m.topRightCorner(4, k);
  const MatrixXd bbt = B * B.transpose();
  m.topLeftCorner(4, 4) = project_psd(MatrixXd(m.topLeftCorner(4, 4)) - bbt) + bbt;
  sol.G = L.transpose() * m * L;
  return sol;
}

RecoveredVectors recover_vectors(const MatrixXd& G, const Vector& mu_plus, const Vector& mu_minus, const Vector& theta,
                                 double tol) {
  if (G.rows() != gram::kSize || G.cols() != gram::kSize) throw DimensionError("recovery expects a 7x7 Gram matrix");
  const Eigen::Index d = theta.size();
  if (mu_plus.size() != d || mu_minus.size() != d) throw DimensionError("known vectors differ in dimension");

  const KnownFactor known = factor_known(mu_plus, mu_minus, theta);
  const Eigen::Index rank = known.basis.cols();
  const MatrixXd& basis = known.basis;
  const MatrixXd& coords = known.coords;  // k x 3

  const MatrixXd g11 = G.topLeftCorner(4, 4);
  const MatrixXd g21 = G.bottomLeftCorner(3, 4);
  // Solve E^T C = G21 in the least-squares sense: C = (E^T)^+ G21.
  const MatrixXd C = rank > 0 ? MatrixXd(coords.transpose().completeOrthogonalDecomposition().solve(g21))
                              : MatrixXd::Zero(0, 4);
  const MatrixXd schur = g11 - C.transpose() * C;

  Eigen::SelfAdjointEigenSolver<MatrixXd> eig(0.5 * (schur + schur.transpose()));
  const double scale = std::max(1.0, G.diagonal().cwiseAbs().maxCoeff());
  if (eig.eigenvalues().minCoeff() < -tol * scale) {
    throw NumericalError("Schur complement is not positive semidefinite; Gram matrix is inconsistent");
  }
  std::vector<Eigen::Index> kept;
  for (Eigen::Index i = 0; i < 4; ++i) {
    if (eig.eigenvalues()[i] > 1e-14 * scale) kept.push_back(i);
  }
  const auto orth_rank = static_cast<Eigen::Index>(kept.size());
  MatrixXd A(orth_rank, 4);  // A^T A = Schur complement
  for (Eigen::Index r = 0; r < orth_rank; ++r) {
    const Eigen::Index i = kept[static_cast<std::size_t>(r)];
    A.row(r) = std::sqrt(eig.eigenvalues()[i]) * eig.eigenvectors().col(i).transpose();
  }

  const Eigen::Index free_dims = d - rank;
  RecoveredVectors out;
  out.lifted_dims = std::max<Eigen::Index>(0, orth_rank - free_dims);
  const MatrixXd& orth = known.complement;
  for (int s = 0; s < 4; ++s) {
    Vector x = Vector::Zero(d + out.lifted_dims);
    if (rank > 0) x.head(d) = basis * C.col(s);
    for (Eigen::Index r = 0; r < orth_rank; ++r) {
      if (r < free_dims) {
        x.head(d) += A(r, s) * orth.col(r);
      } else {
        x[d + (r - free_dims)] = A(r, s);
      }
    }
    out.x[static_cast<std::size_t>(s)] = std::move(x);
  }
  return out;
}

namespace {

void trace_solve(std::ostream& out, const AttackWeights& w, const SdpSolution& sol) {
  nlohmann::json line;
  line["weights"] = {w.a_plus, w.b_plus, w.a_minus, w.b_minus};
  line["status"] = sdp_status_name(sol.status);
  line["objective"] = sol.objective;
  line["iterations"] = sol.iterations;
  line["primal_residual"] = sol.primal_residual;
  line["dual_residual"] = sol.dual_residual;
  nlohmann::json rows = nlohmann::json::array();
  for (Eigen::Index i = 0; i < sol.G.rows(); ++i) {
    std::vector<double> row(static_cast<std::size_t>(sol.G.cols()));
    for (Eigen::Index j = 0; j < sol.G.cols(); ++j) row[static_cast<std::size_t>(j)] = sol.G(i, j);
    rows.push_back(std::move(row));
  }
  line["G"] = std::move(rows);
  out << line.dump() << '\n';
}

}  // namespace

DataDependentResult max_loss_data_dependent(const ClassStats& clean, const LinearModel& model,
                                            const SphereSlabParams& defense, double eps,
                                            const DataDependentConfig& config) {
  if (!(eps > 0.0)) throw ConfigError("eps must be positive");
  std::vector<AttackWeights> draws;
  if (config.include_boundary) {
    draws.push_back({eps, 0.0, 0.0, 0.0});
    draws.push_back({0.0, 0.0, eps, 0.0});
    draws.push_back({eps / 2, 0.0, eps / 2, 0.0});
  }
  Rng rng(config.seed);
  for (int k = 0; k < config.samples; ++k) {
    const std::vector<double> p = rng.simplex(4);
    draws.push_back({eps * p[0], eps * p[1], eps * p[2], eps * p[3]});
  }

  DataDependentResult best;
  bool found = false;
  GramProgram best_program;
  for (const AttackWeights& w : draws) {
    const GramProgram prog = build_gram_program(clean, model, defense, w);
    SdpSolution sol = solve_gram_program(prog, config.sdp);
    if (config.trace) trace_solve(*config.trace, w, sol);
    if (sol.status == SdpStatus::kInfeasible) {
      ++best.infeasible;
      continue;
    }
    if (sol.status != SdpStatus::kOptimal) {
      ++best.failed;
      continue;
    }
    ++best.solved;
    if (!found || sol.objective > best.value) {
      found = true;
      best.value = sol.objective;
      best.weights = w;
      best.solution = std::move(sol);
      best_program = prog;
    }
  }
  if (!found) {
    throw NumericalError("no weight draw produced an optimal SDP solution (" + std::to_string(best.infeasible) +
                         " infeasible, " + std::to_string(best.failed) + " not converged)");
  }

  const RecoveredVectors rec =
      recover_vectors(best.solution.G, clean.mu_plus, clean.mu_minus, model.theta(), 10 * config.sdp.tol);
  best.lifted_dims = rec.lifted_dims;
  for (int s = 0; s < 4; ++s) {
    if (!best_program.active[static_cast<std::size_t>(s)]) continue;
    SupportPoint sp;
    sp.point = {rec.x[static_cast<std::size_t>(s)].head(model.dim()), gram::slot_label(s)};
    sp.weight = best.weights.slot(s);
    sp.support_vector = gram::slot_is_support(s);
    best.support.push_back(std::move(sp));
  }
  return best;
}

}  // namespace poisoncert
