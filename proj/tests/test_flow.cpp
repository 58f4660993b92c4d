#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "flowpool/flow.hpp"
#include "flowpool/pipeline.hpp"
#include "flowpool/rng.hpp"
#include "oracles.hpp"

using namespace flowpool;

namespace {

Matrix permutation_matrix(int n, std::uint64_t seed) {
  std::vector<int> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  rng::Generator gen(seed);
  rng::shuffle(perm, gen);
  Matrix P = Matrix::Zero(n, n);
  for (int i = 0; i < n; ++i) P(i, perm[i]) = 1.0;
  return P;
}

}  // namespace

TEST_CASE("init_reference is deterministic and finite") {
  const Matrix a = init_reference(3, 4, 17);
  const Matrix b = init_reference(3, 4, 17);
  CHECK((a - b).cwiseAbs().maxCoeff() == 0.0);
  CHECK(a.allFinite());
  CHECK(init_reference(1, 1, 99).allFinite());
  CHECK(init_reference(3, 4, 18) != a);
}

TEST_CASE("the (5, 8, 0) reference used by the classification run is pinned") {
  // Frozen at first run; guards the determinism contract of the generator.
  CHECK(matrix_digest(init_reference(5, 8, 0)) == "aaa5ed687b822538");
}

TEST_CASE("singleton flow contracts onto the target") {
  Matrix Y(1, 2), X0(1, 2);
  Y << 2.0, -1.0;
  X0 << -3.0, 4.0;
  FlowParams params;
  params.objective = Objective::LossOnly;
  params.tau = 0.3;  // loss-only curvature is 2/M = 2 here, tau must be < 1
  params.grad_tol = 1e-7;
  params.max_steps = 2000;
  params.sinkhorn.epsilon = 0.5;
  const FlowResult res = pool(Y, X0, params);
  CHECK(res.converged);
  CHECK((res.x_star - Y).cwiseAbs().maxCoeff() < 1e-6);
  CHECK(res.final_grad_norm < params.grad_tol);
}

TEST_CASE("flow energies decrease and the terminal value re-evaluates") {
  const Matrix Y = rng::normal_matrix(20, 2, 42);
  const Matrix X0 = init_reference(12, 2, 7);
  FlowParams params;
  params.objective = Objective::Divergence;
  params.tau = 1.0;
  params.max_steps = 200;
  params.grad_tol = 1e-6;
  params.sinkhorn.epsilon = 0.5;
  params.sinkhorn.tol = 1e-8;
  params.sinkhorn.max_iters = 50000;
  const FlowResult res = pool(Y, X0, params);
  REQUIRE(res.energies.size() >= 2);

  for (std::size_t i = 1; i < res.energies.size(); ++i)
    CHECK(res.energies[i] < res.energies[i - 1]);
  CHECK(res.energies.back() < res.energies.front());

  const DivergenceSolution div =
      sinkhorn_divergence(uniform_measure(res.x_star), uniform_measure(Y),
                          CostSpec::squared_euclidean(), params.sinkhorn);
  CHECK(res.energies.back() == doctest::Approx(div.value).epsilon(1e-8));
}

TEST_CASE("flow output is invariant to permutations of Y given a shared X0") {
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    const Matrix Y = rng::normal_matrix(6, 2, 900 + seed);
    const Matrix X0 = init_reference(4, 2, 1);
    const Matrix Pf = permutation_matrix(6, 950 + seed);
    FlowParams params;  // defaults: divergence, tau 1, eps 0.1
    params.max_steps = 300;
    const FlowResult a = pool(Y, X0, params);
    const FlowResult b = pool(Pf * Y, X0, params);
    CHECK((a.x_star - b.x_star).cwiseAbs().maxCoeff() < 1e-6);
    CHECK(a.steps_taken == b.steps_taken);
  }
}

TEST_CASE("fixed point: converged flows meet the gradient tolerance") {
  const Matrix Y = rng::normal_matrix(8, 2, 3);
  const Matrix X0 = init_reference(4, 2, 4);
  FlowParams params;
  params.grad_tol = 1e-6;
  params.max_steps = 2000;
  const FlowResult res = pool(Y, X0, params);
  REQUIRE(res.converged);
  CHECK(res.final_grad_norm <= 1e-6);

  FlowObjective obj(Y, CostSpec::squared_euclidean(), params.sinkhorn,
                    params.objective);
  CHECK(obj.grad(res.x_star).cwiseAbs().maxCoeff() <= 1e-6);
}

TEST_CASE("energy descent holds across a random suite") {
  int decreasing = 0, total = 0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const int n = 5 + static_cast<int>(seed % 6);
    const Matrix Y = rng::normal_matrix(n, 2, 5000 + seed);
    const Matrix X0 = init_reference(4, 2, seed);
    FlowParams params;
    params.max_steps = 150;
    const FlowResult res = pool(Y, X0, params);
    CHECK(res.energies.back() < res.energies.front());
    for (std::size_t i = 1; i < res.energies.size(); ++i) {
      ++total;
      if (res.energies[i] <= res.energies[i - 1]) ++decreasing;
    }
  }
  CHECK(static_cast<double>(decreasing) / total >= 0.99);
}

TEST_CASE("degenerate single-node input is permitted") {
  Matrix Y(1, 2);
  Y << 0.5, -0.5;
  const Matrix X0 = init_reference(3, 2, 2);
  FlowParams params;
  params.objective = Objective::LossOnly;
  params.tau = 0.5;
  params.max_steps = 400;
  const FlowResult res = pool(Y, X0, params);
  // rank-1 coupling: all pooled points contract toward the single target
  CHECK((res.x_star.rowwise() - Y.row(0)).cwiseAbs().maxCoeff() < 0.05);
}

TEST_CASE("oversized step is reported as divergence") {
  // Singleton instance: every Sinkhorn sub-solve is exact in one sweep, so
  // the iterate explosion is caught by the energy check, not the solver.
  Matrix Y(1, 1), X0(1, 1);
  Y << 0.0;
  X0 << 10.0;
  FlowParams params;
  params.objective = Objective::LossOnly;
  params.tau = 2.0;  // amplification factor |1 - 2*tau| = 3
  params.max_steps = 50;
  CHECK_THROWS_WITH_AS(pool(Y, X0, params),
                       doctest::Contains("energy blew up"), std::runtime_error);
}

TEST_CASE("sinkhorn failure inside the flow carries the step index") {
  const Matrix Y = rng::normal_matrix(6, 2, 14);
  const Matrix X0 = init_reference(4, 2, 15);
  FlowParams params;
  params.sinkhorn.epsilon = 0.001;
  params.sinkhorn.max_iters = 2;  // cannot converge
  CHECK_THROWS_WITH_AS(pool(Y, X0, params), doctest::Contains("step 0"),
                       std::runtime_error);
}

TEST_CASE("pool_batch") {
  FlowParams params;
  params.max_steps = 100;
  const Matrix X0 = init_reference(3, 2, 21);

  SUBCASE("empty input gives empty output") {
    CHECK(pool_batch({}, X0, params).empty());
  }
  SUBCASE("singleton batch equals a direct call") {
    const Matrix Y = rng::normal_matrix(7, 2, 22);
    const auto batch = pool_batch({Y}, X0, params);
    REQUIRE(batch.size() == 1);
    const FlowResult direct = pool(Y, X0, params);
    CHECK((batch[0].x_star - direct.x_star).cwiseAbs().maxCoeff() == 0.0);
  }
  SUBCASE("results are deterministic regardless of thread count") {
    std::vector<Matrix> reps;
    for (std::uint64_t s = 0; s < 6; ++s)
      reps.push_back(rng::normal_matrix(5 + static_cast<int>(s), 2, 30 + s));
    const auto serial = pool_batch(reps, X0, params, CostSpec::squared_euclidean(), 1);
    const auto parallel = pool_batch(reps, X0, params, CostSpec::squared_euclidean(), 4);
    REQUIRE(serial.size() == parallel.size());
    for (std::size_t i = 0; i < serial.size(); ++i)
      CHECK((serial[i].x_star - parallel[i].x_star).cwiseAbs().maxCoeff() == 0.0);
  }
  SUBCASE("element failures carry the element index") {
    std::vector<Matrix> reps = {rng::normal_matrix(5, 2, 40),
                                rng::normal_matrix(5, 2, 41)};
    FlowParams bad = params;
    bad.sinkhorn.max_iters = 1;
    bad.sinkhorn.epsilon = 0.001;
    CHECK_THROWS_WITH_AS(pool_batch(reps, X0, bad),
                         doctest::Contains("element"), std::runtime_error);
  }
}
