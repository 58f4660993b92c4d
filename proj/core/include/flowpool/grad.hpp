#pragma once

#include "flowpool/sinkhorn.hpp"

namespace flowpool {

// Analytic first-order gradients of the entropic OT loss and the debiased
// divergence with respect to support positions. By the envelope theorem the
// converged potentials are treated as constants, so the gradient of the loss
// in the cost is just the optimal coupling and the position gradient is
// [d_X C(X,Y)]^T P*.

// Gradient of L^eps(a, b) with respect to X; sol must be converged for
// cost_matrix(X, Y, spec).
Matrix grad_x_loss(const Matrix& X, const Matrix& Y,
                   const SinkhornSolution& sol, const CostSpec& spec,
                   double epsilon);

// Gradient of the divergence with respect to X. The X-self term contributes
// through both cost slots; with a symmetric coupling the two contributions
// coincide, and the sum is what central finite differences measure.
Matrix grad_x_divergence(const Matrix& X, const Matrix& Y,
                         const DivergenceSolution& div, const CostSpec& spec,
                         double epsilon);

// Counterparts with respect to Y, used by the backward pass to apply the
// adjoint of the mixed second-derivative operator.
Matrix grad_y_loss(const Matrix& X, const Matrix& Y,
                   const SinkhornSolution& sol, const CostSpec& spec,
                   double epsilon);

}  // namespace flowpool
