#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "oracles.hpp"
#include "poisoncert/certify.hpp"
#include "poisoncert/errors.hpp"

using namespace poisoncert;

namespace {

Vector vec2(double a, double b) {
  Vector v(2);
  v << a, b;
  return v;
}

struct Setup {
  Dataset clean;
  FeasibleSet defense;
};

Setup gaussian_setup(std::uint64_t seed, Eigen::Index n, DefenseKind kind = DefenseKind::kOracle) {
  Setup s;
  s.clean = generate_gaussian({2, 2.0, n, seed});
  DefenseConfig dc;
  dc.kind = kind;
  s.defense = make_feasible_set(dc, s.clean);
  return s;
}

// Empirical regret of the recorded run against the grid minimum of the summed losses.
double empirical_regret(const Certificate& c, const Dataset& clean, int per_axis) {
  const long T = c.steps;
  double played = 0.0;
  for (long t = 0; t < T; ++t) played += c.u_trace[static_cast<std::size_t>(t)];
  auto total = [&](const Vector& theta) {
    double v = T * oracle::avg_hinge(theta, clean);
    for (Eigen::Index i = 0; i < c.attack.size(); ++i) v += c.eps * oracle::hinge(theta, c.attack.x(i), c.attack.y(i));
    return v;
  };
  return played - oracle::grid_min_2d(total, c.rho, per_axis);
}

}  // namespace

TEST_CASE("rda_step") {
  const RdaState s0 = RdaState::initial(2, 1.0, 1.0);
  CHECK(s0.lambda == 1.0);
  const RdaState z = rda_step(s0, Vector::Zero(2));
  CHECK(z.theta.norm() == 0.0);
  CHECK(z.t == 1);

  const RdaState big = rda_step(s0, vec2(3, 0));
  CHECK(big.lambda == 3.0);
  CHECK((big.theta - vec2(-1, 0)).norm() < 1e-15);
  CHECK(big.theta.norm() <= 1.0);

  const RdaState small = rda_step(s0, vec2(0.5, 0));
  CHECK(small.lambda == 1.0);
  CHECK((small.theta - vec2(-0.5, 0)).norm() < 1e-15);

  CHECK_THROWS_AS(rda_step(s0, Vector::Zero(3)), DimensionError);
  CHECK_THROWS_AS(RdaState::initial(2, 0.0, 1.0), ConfigError);

  // Norm bound and lambda floor along a random walk.
  Rng rng(41);
  RdaState s = RdaState::initial(3, 0.7, 0.2);
  for (int t = 0; t < 500; ++t) {
    Vector g(3);
    g << rng.normal(), rng.normal(), rng.normal() + 0.3;
    const RdaState next = rda_step(s, g);
    CHECK(next.theta.norm() <= 0.7 * (1 + 1e-12));
    CHECK(next.lambda >= 1.0 / 0.2);
    if (next.cumulative_gradient.norm() >= s.cumulative_gradient.norm()) CHECK(next.lambda >= s.lambda);
    s = next;
  }
}

TEST_CASE("regret_trace") {
  std::vector<RdaState> zero{RdaState::initial(2, 1.5, 0.5)};
  for (int t = 0; t < 4; ++t) zero.push_back(rda_step(zero.back(), Vector::Zero(2)));
  for (double v : regret_trace(zero)) CHECK(v == doctest::Approx(1.5 * 1.5 / 1.0));

  std::vector<RdaState> one{RdaState::initial(2, 2.0, 1.0)};
  one.push_back(rda_step(one.back(), vec2(2, 0)));
  CHECK(one.back().lambda == 1.0);
  const auto tr = regret_trace(one);
  CHECK(tr.size() == 2);
  CHECK(tr[0] == doctest::Approx(2.0));
  CHECK(tr[1] == doctest::Approx(2.0 * 2.0 / 2.0 + 2.0));
  CHECK_THROWS(regret_trace({}));
}

TEST_CASE("objective_U") {
  const Setup s = gaussian_setup(1, 200);
  const Vector theta = vec2(0.4, -0.2);
  const OracleResult r = max_loss_continuous(s.defense.params, LinearModel(theta, 1.0));
  CHECK(objective_U(theta, s.clean, 0.0, r) == doctest::Approx(evaluate(LinearModel(theta, 1.0), s.clean).avg_hinge));
  const OracleResult r0 = max_loss_continuous(s.defense.params, LinearModel::zero(2, 1.0));
  CHECK(objective_U(Vector::Zero(2), s.clean, 0.1, r0) == doctest::Approx(1.1));
  const double recomposed = oracle::avg_hinge(theta, s.clean) + 0.3 * r.relaxed_loss;
  CHECK(std::abs(objective_U(theta, s.clean, 0.3, r) - recomposed) < 1e-12);
}

TEST_CASE("certify with eps = 0") {
  std::vector<LabeledPoint> pts{{vec2(2, 0), 1}, {vec2(2, 1), 1}, {vec2(-2, 0), -1}, {vec2(-2, -1), -1}};
  const Dataset clean(pts, 2);
  const FeasibleSet f = make_feasible_set({}, clean);
  CertifyConfig cfg;
  cfg.eps = 0.0;
  const Certificate c = certify(clean, f, cfg);
  CHECK(c.attack.empty());
  CHECK(c.upper_bound == c.lower_bound);
  CHECK(c.duality_gap == 0.0);
  CHECK(c.upper_bound == doctest::Approx(c.clean_train_loss));
  CHECK(c.clean_train_loss < 1e-9);
}

TEST_CASE("certify_fixed on gaussian data") {
  for (std::uint64_t seed : {0u, 1u, 2u}) {
    const Setup s = gaussian_setup(seed, 2000);
    for (double eps : {0.05, 0.1, 0.3}) {
      CertifyConfig cfg;
      cfg.eps = eps;
      cfg.seed = seed;
      const Certificate c = certify_fixed(s.clean, s.defense, cfg);
      const double T = static_cast<double>(c.steps);
      CHECK(c.steps == static_cast<long>(std::floor(eps * 2000 + 1e-9)));
      CHECK(c.attack.size() == c.steps);
      CHECK(c.sandwich_checked);
      CHECK(c.sandwich_holds);
      CHECK(c.lower_bound <= c.upper_bound + 1e-6);
      CHECK(c.duality_gap <= c.regret_bound_trace.back() / T + 1e-6);
      CHECK(c.u_trace.size() == static_cast<std::size_t>(c.steps + 1));
      CHECK(c.upper_bound == *std::min_element(c.u_trace.begin(), c.u_trace.end()));
      for (Eigen::Index i = 0; i < c.attack.size(); ++i) CHECK(membership(s.defense, c.attack.point(i)));
      for (const auto& st : c.trace) CHECK(st.lambda >= 1.0 / c.eta);
      CHECK(c.model_tilde.theta().norm() <= cfg.rho * (1 + 1e-9));
      // The lower bound is the defender's objective on the attacked data.
      Eigen::VectorXd w(s.clean.size() + c.attack.size());
      w.head(s.clean.size()).setConstant(1.0 / s.clean.size());
      w.tail(c.attack.size()).setConstant(eps / T);
      CHECK(std::abs(weighted_hinge(c.model_tilde.theta(), s.clean.concat(c.attack), w) - c.lower_bound) < 1e-12);
    }
  }
}

TEST_CASE("certify is deterministic") {
  const Setup s = gaussian_setup(5, 500);
  CertifyConfig cfg;
  cfg.eps = 0.1;
  cfg.seed = 3;
  const Certificate a = certify(s.clean, s.defense, cfg);
  const Certificate b = certify(s.clean, s.defense, cfg);
  CHECK(a.upper_bound == b.upper_bound);
  CHECK(a.lower_bound == b.lower_bound);
  CHECK(a.attack.features() == b.attack.features());
  CHECK(a.u_trace == b.u_trace);
}

TEST_CASE("best U never increases with more steps") {
  const Setup s = gaussian_setup(6, 400);
  CertifyConfig cfg;
  cfg.eps = 0.1;
  cfg.eta = 0.05;
  double previous = 1e300;
  for (long T : {5L, 10L, 20L, 40L}) {
    cfg.steps = T;
    const Certificate c = certify_fixed(s.clean, s.defense, cfg);
    CHECK(c.upper_bound <= previous);
    previous = c.upper_bound;
  }
}

TEST_CASE("empirical regret stays below the traced bound") {
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    const Setup s = gaussian_setup(seed, 300);
    CertifyConfig cfg;
    cfg.eps = 0.1;
    const Certificate c = certify_fixed(s.clean, s.defense, cfg);
    const double regret = empirical_regret(c, s.clean, 100);
    CHECK(regret <= c.regret_bound_trace.back() + 1e-4);
  }
}

TEST_CASE("integer-feature certification") {
  Rng rng(42);
  std::vector<LabeledPoint> pts;
  for (int i = 0; i < 60; ++i) {
    const int y = i % 2 ? 1 : -1;
    Vector x(3);
    x << static_cast<double>(rng.index(3) + (y > 0 ? 2 : 0)), static_cast<double>(rng.index(3)),
        static_cast<double>(rng.index(3) + (y > 0 ? 0 : 2));
    pts.push_back({x, y});
  }
  const Dataset clean(pts, 3, true);
  DefenseConfig dc;
  dc.integer_features = true;
  const FeasibleSet f = make_feasible_set(dc, clean);
  CertifyConfig cfg;
  cfg.eps = 0.2;
  cfg.integer.budget = 200;
  const Certificate c = certify(clean, f, cfg);
  CHECK(c.oracle == "integer");
  CHECK_FALSE(c.sandwich_checked);
  CHECK(c.attack.size() + c.skipped_steps == c.steps);
  CHECK(c.attack.integer_features());
  for (Eigen::Index i = 0; i < c.attack.size(); ++i) CHECK(membership(f, c.attack.point(i)));
  CHECK(c.lower_bound <= c.upper_bound + 1e-6);
}

TEST_CASE("data-dependent certification") {
  const Setup s = gaussian_setup(7, 100, DefenseKind::kDataDependent);
  CertifyConfig cfg;
  cfg.eps = 0.1;
  cfg.sdp.samples = 4;
  cfg.attack_samples = 2;
  cfg.candidate_steps = 3;
  const Certificate c = certify(s.clean, s.defense, cfg);
  CHECK(c.oracle == "data-dependent");
  CHECK(c.steps == 10);
  CHECK(c.attack.size() == 10);
  CHECK(c.skipped_steps <= 1);
  CHECK(c.lower_bound <= c.upper_bound + 1e-6);
  CHECK_FALSE(c.sandwich_checked);

  CertifyConfig zero = cfg;
  zero.eps = 0.0;
  const Certificate z = certify(s.clean, s.defense, zero);
  CHECK(z.upper_bound == doctest::Approx(train_erm(s.clean, 1.0, cfg.train).objective));
  CHECK(z.attack.empty());
}

TEST_CASE("configuration errors") {
  const Setup s = gaussian_setup(8, 20);
  CertifyConfig cfg;
  cfg.eps = 0.01;
  CHECK_THROWS_AS(certify(s.clean, s.defense, cfg), ConfigError);
  cfg.eps = 1.5;
  CHECK_THROWS_AS(certify(s.clean, s.defense, cfg), ConfigError);
  cfg.eps = 0.1;
  cfg.eta = -1.0;
  CHECK_THROWS_AS(certify(s.clean, s.defense, cfg), ConfigError);
  CHECK(attack_size(0.3, 10) == 3);
  CHECK(attack_size(0.07, 100) == 7);
}
