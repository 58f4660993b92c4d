#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "flowpool/measures.hpp"
#include "flowpool/rng.hpp"

using namespace flowpool;

TEST_CASE("cost_matrix squared euclidean basics") {
  Matrix X(1, 2), Y(1, 2);
  X << 0, 0;
  Y << 3, 4;
  const Matrix C = cost_matrix(X, Y, CostSpec::squared_euclidean());
  CHECK(C.rows() == 1);
  CHECK(C(0, 0) == doctest::Approx(25.0));

  Matrix Z(1, 2);
  Z << 1, 2;
  CHECK(cost_matrix(Z, Z, CostSpec::squared_euclidean())(0, 0) == 0.0);

  Matrix A(2, 1), B(2, 1);
  A << 0, 1;
  B << 0, 2;
  const Matrix C2 = cost_matrix(A, B, CostSpec::squared_euclidean());
  CHECK(C2(0, 0) == 0.0);
  CHECK(C2(0, 1) == 4.0);
  CHECK(C2(1, 0) == 1.0);
  CHECK(C2(1, 1) == 1.0);
}

TEST_CASE("cost_matrix transpose symmetry and zero diagonal") {
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    const Matrix X = rng::normal_matrix(5, 3, seed);
    const Matrix Y = rng::normal_matrix(7, 3, seed + 100);
    for (const CostSpec& spec :
         {CostSpec::squared_euclidean(),
          CostSpec::metric_power(Metric::Euclidean, 1.5)}) {
      const Matrix Cxy = cost_matrix(X, Y, spec);
      const Matrix Cyx = cost_matrix(Y, X, spec);
      CHECK((Cxy.transpose() - Cyx).cwiseAbs().maxCoeff() == 0.0);
      CHECK((Cxy.array() >= 0.0).all());
      const Matrix Cxx = cost_matrix(X, X, spec);
      CHECK(Cxx.diagonal().cwiseAbs().maxCoeff() == 0.0);
    }
  }
}

TEST_CASE("metric_power(2) equals squared euclidean bitwise") {
  const Matrix X = rng::normal_matrix(4, 2, 11);
  const Matrix Y = rng::normal_matrix(6, 2, 12);
  const Matrix C1 = cost_matrix(X, Y, CostSpec::squared_euclidean());
  const Matrix C2 = cost_matrix(X, Y, CostSpec::metric_power(Metric::Euclidean, 2.0));
  CHECK((C1 - C2).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("cost_matrix rejects bad input") {
  Matrix X(1, 2), Y(1, 3);
  X.setZero();
  Y.setZero();
  CHECK_THROWS_AS(cost_matrix(X, Y, CostSpec::squared_euclidean()),
                  std::invalid_argument);
  Matrix Bad(1, 2);
  Bad << std::numeric_limits<double>::quiet_NaN(), 0.0;
  Matrix Ok(1, 2);
  Ok.setZero();
  CHECK_THROWS_AS(cost_matrix(Bad, Ok, CostSpec::squared_euclidean()),
                  std::invalid_argument);
  CHECK_THROWS_AS(CostSpec::metric_power(Metric::Euclidean, 0.0),
                  std::invalid_argument);
}

TEST_CASE("uniform_measure weights") {
  CHECK(uniform_measure(rng::normal_matrix(4, 2, 0)).weights.isConstant(0.25));
  CHECK(uniform_measure(rng::normal_matrix(1, 1, 0)).weights(0) == 1.0);
  const DiscreteMeasure nu = uniform_measure(rng::normal_matrix(7, 2, 0));
  for (int j = 0; j < 7; ++j) CHECK(nu.weights(j) == doctest::Approx(1.0 / 7.0));
  CHECK_THROWS_AS(uniform_measure(Matrix(0, 2)), std::invalid_argument);
}

TEST_CASE("uniform_measure always satisfies the measure invariants") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const int n = 1 + static_cast<int>(seed % 9);
    const DiscreteMeasure m = uniform_measure(rng::normal_matrix(n, 3, seed));
    CHECK((m.weights.array() >= 0.0).all());
    CHECK(std::abs(m.weights.sum() - 1.0) <= 1e-12);
    CHECK(m.points.allFinite());
  }
}

TEST_CASE("DiscreteMeasure invariant validation") {
  Matrix pts = rng::normal_matrix(3, 2, 5);
  Vector w(3);
  w << 0.5, 0.4, 0.2;  // sums to 1.1
  CHECK_THROWS_AS(DiscreteMeasure(pts, w), std::invalid_argument);
  w << 0.5, 0.6, -0.1;
  CHECK_THROWS_AS(DiscreteMeasure(pts, w), std::invalid_argument);
  w << 0.2, 0.5, 0.3;
  CHECK_NOTHROW(DiscreteMeasure(pts, w));
}

TEST_CASE("custom cost plugs into cost_matrix") {
  auto abs_cost = [](const RowVector& x, const RowVector& y) {
    return (x - y).cwiseAbs().sum();
  };
  auto abs_grad = [](const RowVector& x, const RowVector& y) {
    return RowVector((x - y).array().sign());
  };
  const CostSpec spec = CostSpec::custom(abs_cost, abs_grad);
  Matrix X(1, 2), Y(1, 2);
  X << 0, 0;
  Y << 3, -4;
  CHECK(cost_matrix(X, Y, spec)(0, 0) == doctest::Approx(7.0));
}
