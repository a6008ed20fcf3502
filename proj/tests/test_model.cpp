#include <doctest.h>

#include <cmath>

#include "oracles.hpp"
#include "poisoncert/errors.hpp"
#include "poisoncert/model.hpp"
#include "poisoncert/rng.hpp"

using namespace poisoncert;

namespace {

Vector vec2(double a, double b) {
  Vector v(2);
  v << a, b;
  return v;
}

Vector random_vector(Rng& rng, Eigen::Index d, double scale = 1.0) {
  Vector v(d);
  for (Eigen::Index j = 0; j < d; ++j) v[j] = scale * rng.normal();
  return v;
}

}  // namespace

TEST_CASE("hinge loss values") {
  const LinearModel zero = LinearModel::zero(2, 1.0);
  CHECK(hinge_loss(zero, {vec2(3, -4), 1}) == 1.0);
  CHECK(hinge_loss(zero, {vec2(3, -4), -1}) == 1.0);
  const LinearModel m(vec2(1, 0), 1.0);
  CHECK(hinge_loss(m, {vec2(-1, 0), 1}) == 2.0);
  CHECK(hinge_loss(m, {vec2(1, 0), 1}) == 0.0);
  CHECK_THROWS_AS(hinge_loss(m, {Vector::Zero(3), 1}), DimensionError);
  CHECK_THROWS(LinearModel(vec2(2, 0), 1.0));
}

TEST_CASE("hinge subgradient") {
  const LinearModel zero = LinearModel::zero(2, 1.0);
  CHECK(hinge_subgradient(zero, {vec2(2, 0), 1}).isApprox(vec2(-2, 0)));
  const LinearModel m(vec2(1, 0), 1.0);
  CHECK(hinge_subgradient(m, {vec2(3, 0), 1}).norm() == 0.0);

  Rng rng(3);
  int checked = 0;
  for (int trial = 0; trial < 200; ++trial) {
    Vector theta = random_vector(rng, 4);
    theta *= 0.9 / std::max(1.0, theta.norm());
    const LabeledPoint p{random_vector(rng, 4), rng.bernoulli(0.5) ? 1 : -1};
    if (std::abs(1.0 - p.y * theta.dot(p.x)) <= 1e-4) continue;
    const Vector dir = random_vector(rng, 4);
    const double h = 1e-7;
    const double fd = (oracle::hinge(theta + h * dir, p.x, p.y) - oracle::hinge(theta - h * dir, p.x, p.y)) / (2 * h);
    const double an = hinge_subgradient(LinearModel(theta, 1.0), p).dot(dir);
    CHECK(std::abs(fd - an) < 1e-6);
    ++checked;
  }
  CHECK(checked > 150);
}

TEST_CASE("hinge is convex in theta") {
  Rng rng(4);
  for (int trial = 0; trial < 500; ++trial) {
    const Vector x = random_vector(rng, 3);
    const int y = rng.bernoulli(0.5) ? 1 : -1;
    const Vector a = random_vector(rng, 3), b = random_vector(rng, 3);
    const double t = rng.uniform();
    CHECK(hinge(t * a + (1 - t) * b, x, y) <= t * hinge(a, x, y) + (1 - t) * hinge(b, x, y) + 1e-12);
  }
}

TEST_CASE("evaluate") {
  SUBCASE("separated with margin") {
    const Dataset d({{vec2(2, 0), 1}, {vec2(-2, 1), -1}}, 2);
    const LossReport r = evaluate(LinearModel(vec2(1, 0), 1.0), d);
    CHECK(r.avg_hinge == 0.0);
    CHECK(r.zero_one == 0.0);
    CHECK(r.n_points == 2);
  }
  SUBCASE("zero model counts sign(0) as an error") {
    const Dataset d({{vec2(2, 0), 1}, {vec2(-2, 1), -1}}, 2);
    const LossReport r = evaluate(LinearModel::zero(2, 1.0), d);
    CHECK(r.avg_hinge == 1.0);
    CHECK(r.zero_one == 1.0);
  }
  SUBCASE("random points against a plain loop") {
    Rng rng(5);
    std::vector<LabeledPoint> pts;
    for (int i = 0; i < 10; ++i) pts.push_back({random_vector(rng, 3), i % 2 ? 1 : -1});
    const Dataset d(pts, 3);
    const Vector theta = 0.5 * random_vector(rng, 3).normalized();
    const LossReport r = evaluate(LinearModel(theta, 1.0), d);
    CHECK(std::abs(r.avg_hinge - oracle::avg_hinge(theta, d)) < 1e-12);
    int wrong = 0;
    for (const auto& p : pts) wrong += p.y * theta.dot(p.x) <= 0.0;
    CHECK(r.zero_one == doctest::Approx(wrong / 10.0));
  }
  SUBCASE("empty dataset") {
    CHECK_THROWS(evaluate(LinearModel::zero(2, 1.0), Dataset(2)));
  }
}

TEST_CASE("train_erm") {
  SUBCASE("two symmetric points") {
    const Dataset d({{vec2(1, 0), 1}, {vec2(-1, 0), -1}}, 2);
    const TrainResult r = train_erm(d, 1.0);
    CHECK(r.converged);
    CHECK(r.model.theta()[0] > 0.99);
    CHECK(std::abs(r.model.theta()[1]) < 1e-6);
    CHECK(evaluate(r.model, d).avg_hinge <= 0.01);
    CHECK(oracle::subgradient_erm(d, 1.0, 2000) <= 0.01);
  }
  SUBCASE("matches projected subgradient on gaussian data") {
    for (std::uint64_t seed = 0; seed < 4; ++seed) {
      const Dataset d = generate_gaussian({3, 1.0, 300, seed});
      const TrainConfig cfg{1e-8, 200, 5000, seed};
      const TrainResult r = train_erm(d, 1.0, cfg);
      const double reference = oracle::subgradient_erm(d, 1.0, 3000);
      CHECK(r.objective <= reference + 1e-6);
      CHECK(r.objective >= reference - 1e-2);
      CHECK(r.lower_bound <= r.objective);
      CHECK(r.objective - r.lower_bound <= 1e-8 + 1e-12);
      CHECK(r.model.theta().norm() <= 1.0 * (1 + 1e-9));
    }
  }
  SUBCASE("duplicating every point keeps the model") {
    const Dataset d = generate_gaussian({2, 1.0, 200, 1});
    const TrainConfig cfg{1e-10, 200, 5000, 0};
    const TrainResult a = train_erm(d, 1.0, cfg);
    const TrainResult b = train_erm(d.concat(d), 1.0, cfg);
    CHECK(std::abs(a.objective - b.objective) < 1e-8);
  }
  SUBCASE("tiny ball") {
    const Dataset d = generate_gaussian({2, 2.0, 100, 2});
    const TrainResult r = train_erm(d, 1e-8);
    CHECK(r.model.theta().norm() <= 1e-8 * (1 + 1e-9));
    CHECK(evaluate(r.model, d).avg_hinge == doctest::Approx(1.0).epsilon(1e-6));
  }
  SUBCASE("norm constraint always holds") {
    for (double rho : {0.1, 1.0, 5.0, 50.0}) {
      const Dataset d = generate_gaussian({5, 0.5, 150, 3});
      const TrainResult r = train_erm(d, rho);
      CHECK(r.model.theta().norm() <= rho * (1 + 1e-9));
    }
  }
  SUBCASE("weighted training with a candidate") {
    const Dataset d = generate_gaussian({2, 1.0, 100, 4});
    const Eigen::VectorXd w = Eigen::VectorXd::Constant(d.size(), 1.0 / d.size());
    const TrainResult plain = train_erm_weighted(d, w, 1.0);
    CHECK(std::abs(plain.objective - weighted_hinge(plain.model.theta(), d, w)) < 1e-12);
    const TrainResult with = train_erm_weighted(d, w, 1.0, {}, Vector(plain.model.theta()));
    CHECK(with.objective <= plain.objective + 1e-15);
  }
}

TEST_CASE("generalization bound") {
  CHECK(std::abs(generalization_bound(4, 1.0, 1.0 - 1e-15, 1.0) - 1.0) < 1e-7);
  const double expected = 6.0 * (0.2 + std::sqrt(std::log(20.0) / 200.0));
  CHECK(std::abs(generalization_bound(100, 2.0, 0.05, 3.0) - expected) < 1e-12);
  CHECK(std::abs(generalization_bound(100, 2.0, 0.05, 3.0) - oracle::generalization_bound(100, 2.0, 0.05, 3.0)) <
        1e-12);

  double prev = 1e300;
  for (double n = 1; n < 1e7; n *= 3) {
    const double b = generalization_bound(n, 1.0, 0.1, 1.0);
    CHECK(b < prev);
    prev = b;
  }
  CHECK(prev < 0.002);
  CHECK(generalization_bound(50, 1.0, 0.2, 1.0) < generalization_bound(50, 1.0, 0.1, 1.0));
  CHECK(generalization_bound(50, 2.0, 0.1, 1.0) > generalization_bound(50, 1.0, 0.1, 1.0));
  CHECK(generalization_bound(50, 1.0, 0.1, 2.0) > generalization_bound(50, 1.0, 0.1, 1.0));

  CHECK_THROWS_AS(generalization_bound(0.5, 1.0, 0.1, 1.0), ConfigError);
  CHECK_THROWS_AS(generalization_bound(10, 1.0, 1.0, 1.0), ConfigError);
  CHECK_THROWS_AS(generalization_bound(10, 1.0, 0.0, 1.0), ConfigError);
  CHECK_THROWS_AS(generalization_bound(10, 0.0, 0.1, 1.0), ConfigError);
  CHECK_THROWS_AS(generalization_bound(10, 1.0, 0.1, -1.0), ConfigError);
}

TEST_CASE("train/test gap respects the bound on gaussian data") {
  const double delta = 0.1;
  int violations = 0;
  const int trials = 50;
  for (int s = 0; s < trials; ++s) {
    const Dataset train = generate_gaussian({2, 1.0, 200, static_cast<std::uint64_t>(s)});
    const Dataset test = generate_gaussian({2, 1.0, 2000, static_cast<std::uint64_t>(1000 + s)});
    const TrainResult r = train_erm(train, 1.0);
    const double gap = std::abs(evaluate(r.model, train).avg_hinge - evaluate(r.model, test).avg_hinge);
    if (gap > generalization_bound(200, 1.0, delta, class_stats(train).radius_bound)) ++violations;
  }
  CHECK(violations <= delta * trials);
}
