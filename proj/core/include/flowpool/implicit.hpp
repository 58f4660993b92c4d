#pragma once

#include <cstddef>
#include <functional>

#include "flowpool/flow.hpp"

namespace flowpool {

struct ImplicitDiffParams {
  double lambda = 1e-6;   // Tikhonov shift on the normal equations
  int cg_max_iters = 400;
  double cg_tol = 1e-8;   // relative residual
  double fixed_point_grad_tol = 1e-3;  // guard: sup-norm gradient at x_star
};

// Directional second derivatives of the flow objective, matrix-free: every
// application is a central finite difference of the analytic gradient with
// the potentials re-solved at the perturbed point, i.e. the derivative
// through the Sinkhorn fixed point. Operators share warm-started solver
// state; a probe is cheap to apply repeatedly but not thread-safe.
struct SecondOrderProbe {
  std::function<Matrix(const Matrix&)> hvp;        // M x d -> M x d
  std::function<Matrix(const Matrix&)> cross_jvp;  // N x d -> M x d
  std::function<Matrix(const Matrix&)> cross_vjp;  // M x d -> N x d (adjoint)
};

SecondOrderProbe make_second_order_probe(const Matrix& X, const Matrix& Y,
                                         const CostSpec& spec,
                                         const SinkhornParams& params,
                                         Objective objective = Objective::LossOnly,
                                         double fd_scale = 1e-4);

// One-shot operator applications (Hessian of the loss in X, and the mixed
// Y-then-X derivative), matching the probe's definitions.
Matrix hessian_vector_product(const Matrix& X, const Matrix& Y,
                              const Matrix& direction, const CostSpec& spec,
                              double epsilon, const SinkhornParams& params,
                              Objective objective = Objective::LossOnly);
Matrix cross_jacobian_vector_product(const Matrix& X, const Matrix& Y,
                                     const Matrix& direction,
                                     const CostSpec& spec, double epsilon,
                                     const SinkhornParams& params,
                                     Objective objective = Objective::LossOnly);

// Matrix-free conjugate gradient on a symmetric positive definite operator.
struct CgResult {
  Vector x;
  int iterations = 0;
  double residual = 0.0;
  bool converged = false;
};
CgResult conjugate_gradient(const std::function<Vector(const Vector&)>& apply,
                            const Vector& b, double tol, int max_iters);

// Cotangent of the converged flow through the fixed point: solves the
// Tikhonov-regularized normal equations (H^T H + lambda I) u = v with CG on
// matrix-free operators, then pushes H u through the adjoint of the mixed
// derivative. Returns v^T dX*/dY as an N x d matrix.
Matrix implicit_vjp(const Matrix& x_star, const Matrix& Y,
                    const Matrix& cotangent, const CostSpec& spec,
                    const SinkhornParams& sinkhorn_params,
                    const ImplicitDiffParams& idp,
                    Objective objective = Objective::LossOnly);

// Reverse accumulation through every recorded flow iterate. Memory grows
// linearly with the flow length; the per-step cotangent norms expose the
// geometric decay that motivates the implicit scheme.
struct UnrolledVjp {
  Matrix grad_y;                        // N x d
  std::vector<double> cotangent_norms;  // Frobenius, from the final step back
};
UnrolledVjp unrolled_vjp(const Matrix& Y, const Matrix& X0,
                         const Matrix& cotangent, const FlowParams& flow_params,
                         const CostSpec& spec,
                         std::size_t memory_budget_bytes = std::size_t(1) << 30);

// Conditioning of the gradient map at (X, Y): spectral norms of the
// second-order operators against the relative gradient scale, Frobenius
// norms throughout.
struct ConditionNumbers {
  double kappa_x = 0.0;
  double kappa_y = 0.0;
};
ConditionNumbers condition_numbers(const Matrix& X, const Matrix& Y,
                                   const CostSpec& spec,
                                   const SinkhornParams& params);

// Condition number (sigma_max + lambda) / (sigma_min + lambda) of the
// regularized normal-equation operator at a converged x_star, via power and
// inverse power iteration.
double linear_operator_condition(const Matrix& x_star, const Matrix& Y,
                                 const CostSpec& spec,
                                 const SinkhornParams& params, double lambda,
                                 Objective objective = Objective::LossOnly);

}  // namespace flowpool
