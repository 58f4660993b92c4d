#pragma once

#include <vector>

#include "flowpool/measures.hpp"

namespace flowpool {

struct SinkhornParams {
  double epsilon = 0.1;   // entropic regularization, absolute (not cost-scaled)
  int max_iters = 20000;  // block-coordinate-ascent sweeps
  double tol = 1e-6;      // sup-norm marginal violation of the implied coupling
  bool record_dual_trace = false;
};

// Converged dual potentials plus solve metadata. The scalings u = e^{f/eps},
// v = e^{g/eps} and the Gibbs kernel are derived on demand, never stored.
struct SinkhornSolution {
  Vector f;  // length n
  Vector g;  // length m
  double loss = 0.0;
  int iterations = 0;
  bool converged = false;
  double marginal_error = std::numeric_limits<double>::infinity();
  std::vector<double> dual_trace;  // per-sweep dual objective when recorded
};

// Entropy-regularized OT in the dual, solved by block coordinate ascent with
// log-domain (softmin) updates so small epsilon does not underflow the kernel.
// The reported loss is the primal value <C,P> - eps*H(P) at the implied
// coupling, equal to <f,a> + <g,b> at exact feasibility.
SinkhornSolution sinkhorn_solve(const DiscreteMeasure& mu,
                                const DiscreteMeasure& nu, const Matrix& C,
                                const SinkhornParams& params);

// Warm-started variant; f0/g0 must match the marginal sizes.
SinkhornSolution sinkhorn_solve(const DiscreteMeasure& mu,
                                const DiscreteMeasure& nu, const Matrix& C,
                                const SinkhornParams& params, const Vector& f0,
                                const Vector& g0);

// Self-transport L(a, a) with a symmetric cost. Alternating updates stall on
// these problems (the antisymmetric error mode decays arbitrarily slowly), so
// the potential is driven by the averaged fixed-point map f <- (f + T f)/2
// and returned with f == g.
SinkhornSolution sinkhorn_solve_symmetric(const DiscreteMeasure& mu,
                                          const Matrix& C,
                                          const SinkhornParams& params);
SinkhornSolution sinkhorn_solve_symmetric(const DiscreteMeasure& mu,
                                          const Matrix& C,
                                          const SinkhornParams& params,
                                          const Vector& f0);

// P = diag(e^{f/eps}) K diag(e^{g/eps}); requires a converged solution.
Matrix coupling_from_potentials(const SinkhornSolution& sol, const Matrix& C,
                                double epsilon);

// Debiased divergence S = L(a,b) - L(a,a)/2 - L(b,b)/2 with the three
// sub-problems' potentials kept for gradient work.
struct DivergenceSolution {
  double value = 0.0;
  SinkhornSolution xy, xx, yy;

  bool converged() const { return xy.converged && xx.converged && yy.converged; }
};

DivergenceSolution sinkhorn_divergence(const DiscreteMeasure& mu,
                                       const DiscreteMeasure& nu,
                                       const CostSpec& spec,
                                       const SinkhornParams& params);

}  // namespace flowpool
