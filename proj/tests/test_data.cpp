#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <sstream>

#include "oracles.hpp"
#include "poisoncert/data.hpp"
#include "poisoncert/errors.hpp"
#include "poisoncert/rng.hpp"

using namespace poisoncert;

TEST_CASE("dense csv row") {
  std::istringstream in("1,0.5,-0.5\n");
  const Dataset d = read_dense_csv(in);
  REQUIRE(d.size() == 1);
  CHECK(d.dim() == 2);
  CHECK(d.y(0) == 1);
  CHECK(d.x(0)[0] == 0.5);
  CHECK(d.x(0)[1] == -0.5);
  CHECK_FALSE(d.integer_features());
}

TEST_CASE("sparse text row") {
  std::istringstream in("#d=8\n-1 3:2 7:1\n");
  const Dataset d = read_sparse_text(in);
  REQUIRE(d.size() == 1);
  CHECK(d.dim() == 8);
  CHECK(d.y(0) == -1);
  CHECK(d.integer_features());
  for (int j = 0; j < 8; ++j) {
    const double expected = j == 3 ? 2.0 : (j == 7 ? 1.0 : 0.0);
    CHECK(d.x(0)[j] == expected);
  }
}

TEST_CASE("parse errors carry the line number") {
  {
    std::istringstream in("1,0,0\n0,1,1\n");
    try {
      read_dense_csv(in);
      FAIL("expected a parse error");
    } catch (const ParseError& e) {
      CHECK(e.line() == 2);
    }
  }
  {
    std::istringstream in("1,0,0\n-1,1\n");
    CHECK_THROWS_AS(read_dense_csv(in), ParseError);
  }
  {
    std::istringstream in("1,0,abc\n");
    CHECK_THROWS_AS(read_dense_csv(in), ParseError);
  }
  {
    std::istringstream in("#d=4\n1 0:1\n1 9:1\n");
    try {
      read_sparse_text(in);
      FAIL("expected a parse error");
    } catch (const ParseError& e) {
      CHECK(e.line() == 3);
    }
  }
  {
    std::istringstream in("1 0:1\n");
    CHECK_THROWS_AS(read_sparse_text(in), ParseError);
  }
}

TEST_CASE("round trip through both formats") {
  const auto dir = std::filesystem::temp_directory_path() / "poisoncert_data_test";
  std::filesystem::create_directories(dir);

  const Dataset dense = generate_gaussian({3, 1.5, 21, 7});
  save_dataset(dir / "dense.csv", dense, DataFormat::kDenseCsv);
  const Dataset back = load_dataset(dir / "dense.csv", DataFormat::kDenseCsv);
  REQUIRE(back.size() == dense.size());
  CHECK(back.features() == dense.features());
  CHECK(back.labels() == dense.labels());

  FeatureMatrix counts(4, 5);
  counts << 0, 1, 2, 0, 3,  //
      1, 0, 0, 0, 0,        //
      0, 0, 0, 0, 0,        //
      5, 4, 3, 2, 1;
  Eigen::VectorXd labels(4);
  labels << 1, -1, -1, 1;
  const Dataset sparse(counts, labels, true);
  save_dataset(dir / "sparse.txt", sparse, DataFormat::kSparseText);
  const Dataset sback = load_dataset(dir / "sparse.txt", DataFormat::kSparseText);
  CHECK(sback.features() == sparse.features());
  CHECK(sback.labels() == sparse.labels());
  CHECK(sback.integer_features());
  std::filesystem::remove_all(dir);
}

TEST_CASE("class statistics") {
  SUBCASE("two points") {
    std::vector<LabeledPoint> pts{{Vector::Unit(2, 0), 1}, {-Vector::Unit(2, 0), -1}};
    const ClassStats s = class_stats(Dataset(pts, 2));
    CHECK(s.mu_plus.isApprox(Vector::Unit(2, 0)));
    CHECK(s.mu_minus.isApprox(-Vector::Unit(2, 0)));
    CHECK(s.p_plus == 0.5);
    CHECK(s.p_minus == 0.5);
  }
  SUBCASE("duplicates weigh by count") {
    Vector a(2), b(2), c(2);
    a << 0, 0;
    b << 3, 0;
    c << -1, -1;
    const ClassStats s = class_stats(Dataset({{a, 1}, {b, 1}, {b, 1}, {c, -1}}, 2));
    CHECK(s.mu_plus[0] == doctest::Approx(2.0));
    CHECK(s.p_plus == doctest::Approx(0.75));
  }
  SUBCASE("single class") {
    CHECK_THROWS_AS(class_stats(Dataset({{Vector::Ones(2), 1}}, 2)), StatsError);
  }
  SUBCASE("random set against a plain average") {
    Rng rng(11);
    std::vector<LabeledPoint> pts;
    for (int i = 0; i < 50; ++i) {
      Vector x(3);
      x << rng.normal(), rng.normal() * 3, rng.uniform();
      pts.push_back({x, i % 3 == 0 ? -1 : 1});
    }
    const Dataset d(pts, 3);
    const ClassStats s = class_stats(d);
    CHECK((s.mu_plus - oracle::class_mean(d, 1)).lpNorm<Eigen::Infinity>() < 1e-12);
    CHECK((s.mu_minus - oracle::class_mean(d, -1)).lpNorm<Eigen::Infinity>() < 1e-12);
    CHECK(std::abs(s.p_plus + s.p_minus - 1.0) < 1e-12);
    for (const auto& p : pts) CHECK(s.radius_bound >= p.x.norm());

    // Nudging a centroid never lowers the within-class squared distance.
    auto spread = [&](const Vector& c) {
      double t = 0.0;
      for (const auto& p : pts) {
        if (p.y == 1) t += (p.x - c).squaredNorm();
      }
      return t;
    };
    const double base = spread(s.mu_plus);
    for (int k = 0; k < 20; ++k) {
      Vector dir(3);
      dir << rng.normal(), rng.normal(), rng.normal();
      CHECK(spread(s.mu_plus + 1e-3 * dir) >= base);
    }
  }
}

TEST_CASE("gaussian generator") {
  SUBCASE("class sizes and determinism") {
    const Dataset a = generate_gaussian({2, 2.0, 11, 3});
    const Dataset b = generate_gaussian({2, 2.0, 11, 3});
    CHECK(a.count(1) == 6);
    CHECK(a.count(-1) == 5);
    CHECK(a.features() == b.features());
    CHECK(a.labels() == b.labels());
    CHECK_FALSE(generate_gaussian({2, 2.0, 11, 4}).features() == a.features());
  }
  SUBCASE("invalid specs") {
    CHECK_THROWS(generate_gaussian({0, 2.0, 10, 0}));
    CHECK_THROWS(generate_gaussian({2, 0.0, 10, 0}));
    CHECK_THROWS(generate_gaussian({2, 2.0, 1, 0}));
  }
  SUBCASE("sign classifier error near Phi(-2)") {
    const Dataset d = generate_gaussian({1, 2.0, 100000, 5});
    int errors = 0;
    for (Eigen::Index i = 0; i < d.size(); ++i) {
      if (d.features()(i, 0) * d.y(i) <= 0.0) ++errors;
    }
    const double rate = errors / static_cast<double>(d.size());
    CHECK(rate < 0.023);
    CHECK(std::abs(rate - oracle::normal_cdf(-2.0)) < 0.002);
  }
  SUBCASE("distance to centroid is about sqrt(d) in high dimension") {
    const Dataset d = generate_gaussian({400, 2.0, 400, 9});
    const ClassStats s = class_stats(d);
    double total = 0.0;
    for (Eigen::Index i = 0; i < d.size(); ++i) total += (d.x(i) - s.mu(d.y(i))).norm();
    CHECK(std::abs(total / d.size() - 20.0) < 1.0);
  }
  SUBCASE("centroids converge at the sqrt(d/n) rate") {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
      const GaussianSpec spec{4, 1.0, 4000, seed};
      const ClassStats s = class_stats(generate_gaussian(spec));
      const double sigma = std::sqrt(4.0 / 2000.0);
      CHECK((s.mu_plus - Vector::Unit(4, 0)).norm() < 3 * sigma);
      CHECK((s.mu_minus + Vector::Unit(4, 0)).norm() < 3 * sigma);
    }
  }
}

TEST_CASE("mean-shift attack points") {
  SUBCASE("zero vector when sqrt(d) equals lambda") {
    const Dataset a = gaussian_attack_points({4, 2.0, 100, 0}, 0.1);
    CHECK(a.count(1) == 5);
    CHECK(a.count(-1) == 5);
    for (Eigen::Index i = 0; i < a.size(); ++i) CHECK(a.x(i).norm() == 0.0);
  }
  SUBCASE("coordinates at +-8 on the first axis") {
    const Dataset a = gaussian_attack_points({100, 2.0, 30, 0}, 0.1);
    CHECK(a.count(1) == 2);
    for (Eigen::Index i = 0; i < a.size(); ++i) {
      CHECK(a.x(i)[0] == doctest::Approx(-8.0 * a.y(i)));
      CHECK(a.x(i).tail(99).norm() == 0.0);
    }
  }
}

TEST_CASE("rng is portable and seeded") {
  Rng a(42), b(42);
  for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());
  // The first output of mt19937_64 seeded with 5489 is fixed by the standard.
  CHECK(Rng(5489).next_u64() == 14514284786278117030ULL);
  Rng r(1);
  for (int i = 0; i < 1000; ++i) {
    const double u = r.uniform();
    CHECK(u >= 0.0);
    CHECK(u < 1.0);
    CHECK(r.index(7) < 7u);
  }
  const auto s = r.simplex(4);
  double sum = 0.0;
  for (double v : s) {
    CHECK(v >= 0.0);
    sum += v;
  }
  CHECK(sum == doctest::Approx(1.0));
  CHECK(mix_seed(1, 2) != mix_seed(2, 1));
}
