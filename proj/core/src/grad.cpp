#include "flowpool/grad.hpp"

#include <stdexcept>

namespace flowpool {

namespace {

// Row i = sum_j W(i,j) * dC(x_i, y_j)/dx_i. Closed form for squared
// Euclidean, generic pairwise derivative otherwise.
Matrix weighted_grad_x(const Matrix& X, const Matrix& Y, const Matrix& W,
                       const CostSpec& spec) {
  if (spec.kind == CostSpec::Kind::SquaredEuclidean) {
    const Vector row_mass = W.rowwise().sum();
    return 2.0 * (row_mass.asDiagonal() * X - W * Y);
  }
  Matrix out = Matrix::Zero(X.rows(), X.cols());
  for (Eigen::Index i = 0; i < X.rows(); ++i)
    for (Eigen::Index j = 0; j < Y.rows(); ++j)
      out.row(i) += W(i, j) * spec.pairwise_grad_x(X.row(i), Y.row(j));
  return out;
}

Matrix weighted_grad_y(const Matrix& X, const Matrix& Y, const Matrix& W,
                       const CostSpec& spec) {
  if (spec.kind == CostSpec::Kind::SquaredEuclidean) {
    const Vector col_mass = W.colwise().sum();
    return 2.0 * (col_mass.asDiagonal() * Y - W.transpose() * X);
  }
  Matrix out = Matrix::Zero(Y.rows(), Y.cols());
  for (Eigen::Index i = 0; i < X.rows(); ++i)
    for (Eigen::Index j = 0; j < Y.rows(); ++j)
      out.row(j) += W(i, j) * spec.pairwise_grad_y(X.row(i), Y.row(j));
  return out;
}

}  // namespace

Matrix grad_x_loss(const Matrix& X, const Matrix& Y,
                   const SinkhornSolution& sol, const CostSpec& spec,
                   double epsilon) {
  if (!sol.converged)
    throw std::invalid_argument("grad_x_loss: solution did not converge");
  const Matrix P =
      coupling_from_potentials(sol, cost_matrix(X, Y, spec), epsilon);
  return weighted_grad_x(X, Y, P, spec);
}

Matrix grad_x_divergence(const Matrix& X, const Matrix& Y,
                         const DivergenceSolution& div, const CostSpec& spec,
                         double epsilon) {
  if (!div.xy.converged || !div.xx.converged)
    throw std::invalid_argument("grad_x_divergence: solution did not converge");
  const Matrix P =
      coupling_from_potentials(div.xy, cost_matrix(X, Y, spec), epsilon);
  const Matrix Pxx =
      coupling_from_potentials(div.xx, cost_matrix(X, X, spec), epsilon);
  // Both slots of C(X, X): sum the coupling with its transpose.
  const Matrix Psym = 0.5 * (Pxx + Pxx.transpose());
  return weighted_grad_x(X, Y, P, spec) - weighted_grad_x(X, X, Psym, spec);
}

Matrix grad_y_loss(const Matrix& X, const Matrix& Y,
                   const SinkhornSolution& sol, const CostSpec& spec,
                   double epsilon) {
  if (!sol.converged)
    throw std::invalid_argument("grad_y_loss: solution did not converge");
  const Matrix P =
      coupling_from_potentials(sol, cost_matrix(X, Y, spec), epsilon);
  return weighted_grad_y(X, Y, P, spec);
}

}  // namespace flowpool
