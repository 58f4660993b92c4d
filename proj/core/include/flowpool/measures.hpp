#pragma once

#include <functional>

#include <Eigen/Core>

namespace flowpool {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using RowVector = Eigen::RowVectorXd;

// Discrete probability measure over R^d: n support positions with a
// probability vector on the simplex. Weights are stored explicitly even when
// uniform so non-uniform node importances need no API change.
struct DiscreteMeasure {
  Matrix points;   // n x d
  Vector weights;  // length n, nonnegative, sums to 1 within 1e-12

  DiscreteMeasure(Matrix points_in, Vector weights_in);

  Eigen::Index size() const { return points.rows(); }
  Eigen::Index dim() const { return points.cols(); }
};

// All points carry mass 1/n.
DiscreteMeasure uniform_measure(Matrix points);

enum class Metric { Euclidean };

// Ground cost between support points, C = D^p for a metric D. The default is
// squared Euclidean distance; arbitrary pairwise costs plug in through the
// Custom kind, which supplies the cost and its derivative in the first
// argument.
struct CostSpec {
  enum class Kind { SquaredEuclidean, MetricPower, Custom };

  Kind kind = Kind::SquaredEuclidean;
  Metric metric = Metric::Euclidean;
  double exponent = 2.0;
  std::function<double(const RowVector&, const RowVector&)> cost_fn;
  std::function<RowVector(const RowVector&, const RowVector&)> grad_x_fn;
  std::function<RowVector(const RowVector&, const RowVector&)> grad_y_fn;

  static CostSpec squared_euclidean() { return {}; }
  static CostSpec metric_power(Metric m, double p);
  static CostSpec custom(
      std::function<double(const RowVector&, const RowVector&)> cost,
      std::function<RowVector(const RowVector&, const RowVector&)> grad_x,
      std::function<RowVector(const RowVector&, const RowVector&)> grad_y = {});

  double pairwise(const RowVector& x, const RowVector& y) const;
  // d/dx of pairwise(x, y).
  RowVector pairwise_grad_x(const RowVector& x, const RowVector& y) const;
  // d/dy of pairwise(x, y); for metric powers this is grad_x with swapped args.
  RowVector pairwise_grad_y(const RowVector& x, const RowVector& y) const;
};

// Entry (i, j) = cost between row i of X and row j of Y.
Matrix cost_matrix(const Matrix& X, const Matrix& Y, const CostSpec& spec);

}  // namespace flowpool
