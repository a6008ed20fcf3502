#include "poisoncert/certify.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>
#include <utility>

#include "poisoncert/errors.hpp"
#include "poisoncert/rng.hpp"

namespace poisoncert {

RdaState RdaState::initial(Eigen::Index d, double rho, double eta) {
  if (!(rho > 0.0) || !(eta > 0.0)) throw ConfigError("rho and eta must be positive");
  RdaState s;
  s.cumulative_gradient = Vector::Zero(d);
  s.theta = Vector::Zero(d);
  s.eta = eta;
  s.rho = rho;
  s.lambda = 1.0 / eta;
  return s;
}

RdaState rda_step(const RdaState& state, const Vector& gradient) {
  if (gradient.size() != state.cumulative_gradient.size()) throw DimensionError("gradient dimension mismatch");
  RdaState next = state;
  next.cumulative_gradient += gradient;
  next.t = state.t + 1;
  next.lambda = std::max(1.0 / state.eta, next.cumulative_gradient.norm() / state.rho);
  next.theta = -next.cumulative_gradient / next.lambda;
  // Rounding can leave the norm a few ulps above rho.
  const double norm = next.theta.norm();
  if (norm > state.rho) next.theta *= state.rho / norm;
  next.last_gradient_norm = gradient.norm();
  return next;
}

std::vector<double> regret_trace(const std::vector<RdaState>& history) {
  if (history.empty()) throw ConfigError("regret trace needs at least one state");
  std::vector<double> out;
  out.reserve(history.size());
  double sum = history.front().rho * history.front().rho / (2.0 * history.front().eta);
  for (const RdaState& s : history) {
    if (s.t > 0) sum += s.last_gradient_norm * s.last_gradient_norm / (2.0 * s.lambda);
    out.push_back(sum);
  }
  return out;
}

double objective_U(const Vector& theta, const Dataset& clean, double eps, const OracleResult& oracle) {
  if (theta.size() != clean.dim()) throw DimensionError("theta and dataset dimensions differ");
  double clean_loss = 0.0;
  if (!clean.empty()) {
    const Eigen::VectorXd margins = clean.labels().cwiseProduct(clean.features() * theta);
    clean_loss = (1.0 - margins.array()).max(0.0).mean();
  }
  return clean_loss + eps * oracle.relaxed_loss;
}

long attack_size(double eps, Eigen::Index n) {
  return static_cast<long>(std::floor(eps * static_cast<double>(n) + 1e-9));
}

namespace {

struct LoopSetup {
  long steps = 0;
  double eta = 0.0;
};

double default_gbar(const Dataset& clean, const SphereSlabParams& params, double eps) {
  double mean_norm = 0.0;
  double max_norm = 0.0;
  for (Eigen::Index i = 0; i < clean.size(); ++i) {
    const double nrm = clean.features().row(i).norm();
    mean_norm += nrm;
    max_norm = std::max(max_norm, nrm);
  }
  mean_norm /= static_cast<double>(std::max<Eigen::Index>(clean.size(), 1));
  double reach = max_norm;
  if (params.use_sphere) {
    reach = std::max(params.mu_plus.norm() + params.r_plus, params.mu_minus.norm() + params.r_minus);
  }
  const double gbar = mean_norm + eps * reach;
  return gbar > 0.0 ? gbar : 1.0;
}

LoopSetup setup_loop(const Dataset& clean, const FeasibleSet& defense, const CertifyConfig& cfg) {
  if (clean.empty()) throw ConfigError("clean dataset is empty");
  if (clean.dim() != defense.params.dim()) throw DimensionError("dataset and defense dimensions differ");
  if (!(cfg.eps >= 0.0 && cfg.eps <= 1.0)) throw ConfigError("eps must lie in [0, 1]");
  if (!(cfg.rho > 0.0)) throw ConfigError("rho must be positive");
  LoopSetup s;
  s.steps = cfg.steps ? *cfg.steps : attack_size(cfg.eps, clean.size());
  if (cfg.steps && *cfg.steps < 1) throw ConfigError("steps must be at least 1");
  if (cfg.eps > 0.0 && s.steps < 1) throw ConfigError("eps * n must be at least 1");
  if (cfg.eta) {
    if (!(*cfg.eta > 0.0)) throw ConfigError("eta must be positive");
    s.eta = *cfg.eta;
  } else if (s.steps > 0) {
    s.eta = cfg.rho / (default_gbar(clean, defense.params, cfg.eps) * std::sqrt(static_cast<double>(s.steps)));
  }
  return s;
}

Certificate degenerate(const Dataset& clean, const CertifyConfig& cfg, std::string oracle) {
  Certificate c;
  c.oracle = std::move(oracle);
  c.eps = cfg.eps;
  c.rho = cfg.rho;
  c.eta = cfg.eta.value_or(0.0);
  c.attack = Dataset(clean.dim(), clean.integer_features());
  const TrainResult tr = train_erm(clean, cfg.rho, cfg.train);
  c.model_tilde = tr.model;
  c.train_converged = tr.converged;
  c.clean_train_loss = evaluate(tr.model, clean).avg_hinge;
  c.upper_bound = c.lower_bound = c.clean_train_loss;
  c.u_trace = {c.clean_train_loss};
  c.regret_bound_trace = {0.0};
  return c;
}

// Clean mass 1/n per point, attack mass eps/T per point.
Eigen::VectorXd mixture_weights(Eigen::Index n_clean, Eigen::Index n_attack, double eps, long steps) {
  Eigen::VectorXd w(n_clean + n_attack);
  w.head(n_clean).setConstant(1.0 / static_cast<double>(n_clean));
  if (n_attack > 0) w.tail(n_attack).setConstant(eps / static_cast<double>(steps));
  return w;
}

struct CleanTerm {
  double loss = 0.0;
  Vector gradient;
};

CleanTerm clean_term(const Vector& theta, const Dataset& clean) {
  CleanTerm c;
  const Eigen::VectorXd margins = clean.labels().cwiseProduct(clean.features() * theta);
  c.loss = (1.0 - margins.array()).max(0.0).mean();
  c.gradient = mean_hinge_subgradient(theta, clean);
  return c;
}

void finish_traces(Certificate& c, const std::vector<RdaState>& history) {
  c.regret_bound_trace = regret_trace(history);
  // Every trace entry was appended right after its state.
  for (std::size_t i = 0; i < c.trace.size(); ++i) c.trace[i].regret_bound = c.regret_bound_trace[i + 1];
}

}  // namespace

Certificate certify_fixed(const Dataset& clean, const FeasibleSet& defense, const CertifyConfig& cfg) {
  if (defense.kind != DefenseKind::kOracle) throw ConfigError("certify_fixed needs a fixed (oracle) defense");
  validate(defense.params);
  const bool integer = defense.integer_features;
  const std::string name = integer ? "integer" : "fixed";
  const LoopSetup setup = setup_loop(clean, defense, cfg);
  if (cfg.eps == 0.0) return degenerate(clean, cfg, name);

  IntegerOracleConfig icfg = cfg.integer;
  if (integer && !icfg.caps) icfg.caps = coordinate_caps(clean);

  Certificate c;
  c.oracle = name;
  c.eps = cfg.eps;
  c.rho = cfg.rho;
  c.eta = setup.eta;
  c.steps = setup.steps;

  std::vector<RdaState> history{RdaState::initial(clean.dim(), cfg.rho, setup.eta)};
  std::vector<LabeledPoint> attack;
  double best_u = std::numeric_limits<double>::infinity();
  Vector best_theta = history.back().theta;

  // Evaluates U at the current iterate; returns the oracle answer for the gradient.
  auto query = [&](long t, const RdaState& state, OracleResult& result, CleanTerm& ct) {
    const LinearModel model(state.theta, cfg.rho);
    if (integer) {
      icfg.seed = mix_seed(cfg.seed, static_cast<std::uint64_t>(t));
      result = max_loss_integer(defense.params, model, icfg);
    } else {
      result = max_loss_continuous(defense.params, model);
    }
    ct = clean_term(state.theta, clean);
    const double u = ct.loss + cfg.eps * result.relaxed_loss;
    c.u_trace.push_back(u);
    if (u < best_u) {
      best_u = u;
      best_theta = state.theta;
    }
    return u;
  };

  for (long t = 1; t <= setup.steps; ++t) {
    OracleResult res;
    CleanTerm ct;
    const double u = query(t, history.back(), res, ct);

    // The gradient always follows the relaxed maximizer, which is what U measures.
    LabeledPoint relaxed = res.point;
    if (integer) relaxed = max_loss_continuous(defense.params, LinearModel(history.back().theta, cfg.rho)).point;
    Vector g = ct.gradient;
    if (1.0 - relaxed.y * history.back().theta.dot(relaxed.x) > 0.0) g -= cfg.eps * relaxed.y * relaxed.x;

    if (!integer || res.has_candidate) {
      attack.push_back(res.point);
    } else {
      ++c.skipped_steps;
    }
    history.push_back(rda_step(history.back(), g));
    c.trace.push_back({t, u, history.back().lambda, history.back().last_gradient_norm, res.relaxed_loss, 0.0});
  }
  {
    OracleResult res;
    CleanTerm ct;
    query(setup.steps + 1, history.back(), res, ct);
  }
  finish_traces(c, history);

  c.attack = Dataset(attack, clean.dim(), integer);
  const Dataset combined = clean.concat(c.attack);
  const Eigen::VectorXd w = mixture_weights(clean.size(), c.attack.size(), cfg.eps, setup.steps);
  const TrainResult tr = train_erm_weighted(combined, w, cfg.rho, cfg.train, best_theta);
  c.model_tilde = tr.model;
  c.train_converged = tr.converged;
  c.upper_bound = best_u;
  c.lower_bound = tr.objective;
  c.duality_gap = c.upper_bound - c.lower_bound;
  c.clean_train_loss = evaluate(tr.model, clean).avg_hinge;

  if (!integer) {
    c.sandwich_checked = true;
    const double regret = c.regret_bound_trace.back() / static_cast<double>(setup.steps);
    c.sandwich_holds = c.lower_bound <= c.upper_bound + cfg.sandwich_tol && c.duality_gap <= regret + cfg.sandwich_tol;
  }
  return c;
}

Certificate certify_data_dependent(const Dataset& clean, const FeasibleSet& defense, const CertifyConfig& cfg) {
  if (defense.kind != DefenseKind::kDataDependent) {
    throw ConfigError("certify_data_dependent needs a data-dependent defense");
  }
  validate(defense.params);
  const LoopSetup setup = setup_loop(clean, defense, cfg);
  if (cfg.eps == 0.0) return degenerate(clean, cfg, "data-dependent");
  const ClassStats stats = class_stats(clean);

  Certificate c;
  c.oracle = "data-dependent";
  c.eps = cfg.eps;
  c.rho = cfg.rho;
  c.eta = setup.eta;
  c.steps = setup.steps;

  struct Stored {
    long t;
    double value;
    std::vector<SupportPoint> support;
  };
  std::vector<Stored> stored;
  std::vector<RdaState> history{RdaState::initial(clean.dim(), cfg.rho, setup.eta)};
  double best_u = std::numeric_limits<double>::infinity();

  auto query = [&](long t, const RdaState& state) -> std::optional<DataDependentResult> {
    DataDependentConfig dcfg = cfg.sdp;
    dcfg.seed = mix_seed(cfg.seed, static_cast<std::uint64_t>(t));
    try {
      DataDependentResult res = max_loss_data_dependent(stats, LinearModel(state.theta, cfg.rho), defense.params,
                                                        cfg.eps, dcfg);
      stored.push_back({t, res.value, res.support});
      return res;
    } catch (const NumericalError&) {
      ++c.skipped_steps;
      return std::nullopt;
    }
  };

  for (long t = 1; t <= setup.steps; ++t) {
    const RdaState& state = history.back();
    const std::optional<DataDependentResult> res = query(t, state);
    if (!res) continue;
    const CleanTerm ct = clean_term(state.theta, clean);
    const double u = ct.loss + res->value;
    c.u_trace.push_back(u);
    best_u = std::min(best_u, u);
    Vector g = ct.gradient;
    for (const SupportPoint& sp : res->support) {
      if (sp.support_vector) g -= sp.weight * sp.point.y * sp.point.x;
    }
    history.push_back(rda_step(state, g));
    c.trace.push_back({t, u, history.back().lambda, history.back().last_gradient_norm, res->value, 0.0});
  }
  if (static_cast<double>(c.skipped_steps) > 0.1 * static_cast<double>(setup.steps)) {
    throw NumericalError("SDP oracle failed on " + std::to_string(c.skipped_steps) + " of " +
                         std::to_string(setup.steps) + " steps");
  }
  {
    const int skipped_before = c.skipped_steps;
    if (const auto res = query(setup.steps + 1, history.back())) {
      const double u = clean_term(history.back().theta, clean).loss + res->value;
      c.u_trace.push_back(u);
      best_u = std::min(best_u, u);
    }
    c.skipped_steps = skipped_before;
  }
  finish_traces(c, history);
  if (stored.empty()) throw NumericalError("no SDP step succeeded");

  // Sample candidate attacks from the distributions with the largest oracle values.
  std::vector<std::size_t> order(stored.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return stored[a].value > stored[b].value; });
  order.resize(std::min<std::size_t>(order.size(), static_cast<std::size_t>(std::max(cfg.candidate_steps, 1))));

  Rng rng(mix_seed(cfg.seed, 0x5eed0a77ac4ULL));
  double best_lower = -std::numeric_limits<double>::infinity();
  for (const std::size_t idx : order) {
    const std::vector<SupportPoint>& support = stored[idx].support;
    double mass = 0.0;
    for (const SupportPoint& sp : support) mass += sp.weight;
    if (!(mass > 0.0)) continue;
    for (int k = 0; k < std::max(cfg.attack_samples, 1); ++k) {
      std::vector<LabeledPoint> pts;
      pts.reserve(static_cast<std::size_t>(setup.steps));
      for (long i = 0; i < setup.steps; ++i) {
        double u = rng.uniform() * mass;
        std::size_t pick = support.size() - 1;
        for (std::size_t j = 0; j < support.size(); ++j) {
          if (u < support[j].weight) {
            pick = j;
            break;
          }
          u -= support[j].weight;
        }
        pts.push_back(support[pick].point);
      }
      const Dataset attack(pts, clean.dim(), false);
      const Dataset combined = clean.concat(attack);
      const TrainResult tr = train_erm_weighted(combined, mixture_weights(clean.size(), attack.size(), cfg.eps, setup.steps),
                                                cfg.rho, cfg.train);
      if (tr.objective > best_lower) {
        best_lower = tr.objective;
        c.attack = attack;
        c.model_tilde = tr.model;
        c.train_converged = tr.converged;
      }
    }
  }
  if (!std::isfinite(best_lower)) throw NumericalError("no candidate attack could be sampled");
  c.upper_bound = best_u;
  c.lower_bound = best_lower;
  c.duality_gap = c.upper_bound - c.lower_bound;
  c.clean_train_loss = evaluate(c.model_tilde, clean).avg_hinge;
  return c;
}

Certificate certify(const Dataset& clean, const FeasibleSet& defense, const CertifyConfig& config) {
  return defense.kind == DefenseKind::kDataDependent ? certify_data_dependent(clean, defense, config)
                                                      : certify_fixed(clean, defense, config);
}

}  // namespace poisoncert
