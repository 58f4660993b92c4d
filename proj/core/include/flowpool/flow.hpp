#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "flowpool/grad.hpp"

namespace flowpool {

// Which energy the flow descends: the debiased divergence (pooling quality)
// or the raw transport loss only (used by the backward-pass analyses).
enum class Objective { Divergence, LossOnly };

struct FlowParams {
  double tau = 1.0;       // gradient step size
  int max_steps = 500;    // flow length cap
  double grad_tol = 1e-5; // stop when the gradient sup-norm drops below this
  Objective objective = Objective::Divergence;
  SinkhornParams sinkhorn{};  // epsilon lives here
};

struct FlowResult {
  Matrix x_star;                 // M x d pooled representation
  std::vector<double> energies;  // objective value at each iterate, X^(0) first
  int steps_taken = 0;
  double final_grad_norm = 0.0;  // sup-norm at x_star
  bool converged = false;        // grad_tol met before max_steps
};

// Deterministic standard-normal reference X^(0); the common initialization
// that makes pooled rows comparable across graphs and permutations.
Matrix init_reference(int m, int d, std::uint64_t seed);

// Evaluates the flow objective and its gradients at successive X, reusing the
// previous call's potentials as warm starts. One instance per (Y, params);
// not thread-safe across concurrent calls.
class FlowObjective {
 public:
  FlowObjective(Matrix Y, CostSpec spec, SinkhornParams params, Objective obj);

  // Objective value and gradient wrt X. Throws on Sinkhorn non-convergence.
  double value_and_grad(const Matrix& X, Matrix& grad_out);
  // Gradient only; skips the Y-self solve entirely.
  Matrix grad(const Matrix& X);
  // X-dependent part of the gradient wrt Y (the cross term). Y-self terms do
  // not depend on X and drop out of the directional differences this feeds.
  Matrix grad_y_cross(const Matrix& X);

  const Matrix& y() const { return y_; }
  const CostSpec& spec() const { return spec_; }
  const SinkhornParams& sinkhorn_params() const { return params_; }
  Objective objective() const { return objective_; }

 private:
  const SinkhornSolution& solve_xy(const Matrix& X);
  const SinkhornSolution& solve_xx(const Matrix& X);
  const SinkhornSolution& solve_yy();

  Matrix y_;
  DiscreteMeasure nu_;
  CostSpec spec_;
  SinkhornParams params_;
  Objective objective_;
  std::optional<SinkhornSolution> xy_, xx_, yy_;
};

// The pooling forward pass: gradient descent on the objective from X0.
// Throws on Sinkhorn failure (with the step index) and on energy blow-up
// (step size too large).
FlowResult pool(const Matrix& Y, const Matrix& X0, const FlowParams& params,
                    const CostSpec& spec = CostSpec::squared_euclidean());

// flowpool that also records the iterates the gradient was evaluated at,
// X^(0) .. X^(L-1); used by unrolled backward passes.
FlowResult pool_traced(const Matrix& Y, const Matrix& X0,
                           const FlowParams& params, const CostSpec& spec,
                           std::vector<Matrix>& iterates);

// Elementwise flowpool with a shared reference, order-preserving. Elements
// run in parallel; failures carry the element index.
std::vector<FlowResult> pool_batch(const std::vector<Matrix>& graph_reps,
                                   const Matrix& X0, const FlowParams& params,
                                   const CostSpec& spec = CostSpec::squared_euclidean(),
                                   int threads = 0);

}  // namespace flowpool
