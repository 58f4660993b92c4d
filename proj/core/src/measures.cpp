#include "flowpool/measures.hpp"

#include <cmath>
#include <stdexcept>
#include <utility>

namespace flowpool {

namespace {

void require_finite(const Matrix& m, const char* what) {
  if (!m.allFinite())
    throw std::invalid_argument(std::string(what) + ": non-finite entries");
}

}  // namespace

DiscreteMeasure::DiscreteMeasure(Matrix points_in, Vector weights_in)
    : points(std::move(points_in)), weights(std::move(weights_in)) {
  if (points.rows() < 1 || points.cols() < 1)
    throw std::invalid_argument("DiscreteMeasure: need n >= 1, d >= 1");
  if (weights.size() != points.rows())
    throw std::invalid_argument("DiscreteMeasure: weights/points size mismatch");
  require_finite(points, "DiscreteMeasure points");
  if (!weights.allFinite() || (weights.array() < 0.0).any())
    throw std::invalid_argument("DiscreteMeasure: weights must be finite and >= 0");
  if (std::abs(weights.sum() - 1.0) > 1e-12)
    throw std::invalid_argument("DiscreteMeasure: weights must sum to 1");
}

DiscreteMeasure uniform_measure(Matrix points) {
  if (points.rows() < 1) throw std::invalid_argument("uniform_measure: empty point set");
  const Eigen::Index n = points.rows();
  return DiscreteMeasure(std::move(points), Vector::Constant(n, 1.0 / static_cast<double>(n)));
}

CostSpec CostSpec::metric_power(Metric m, double p) {
  if (p <= 0.0) throw std::invalid_argument("CostSpec: exponent must be > 0");
  CostSpec s;
  s.kind = Kind::MetricPower;
  s.metric = m;
  s.exponent = p;
  return s;
}

CostSpec CostSpec::custom(
    std::function<double(const RowVector&, const RowVector&)> cost,
    std::function<RowVector(const RowVector&, const RowVector&)> grad_x,
    std::function<RowVector(const RowVector&, const RowVector&)> grad_y) {
  CostSpec s;
  s.kind = Kind::Custom;
  s.cost_fn = std::move(cost);
  s.grad_x_fn = std::move(grad_x);
  s.grad_y_fn = std::move(grad_y);
  return s;
}

double CostSpec::pairwise(const RowVector& x, const RowVector& y) const {
  switch (kind) {
    case Kind::SquaredEuclidean:
      return (x - y).squaredNorm();
    case Kind::MetricPower: {
      const double d2 = (x - y).squaredNorm();
      // D^p with D Euclidean; p == 2 reduces to the squared distance exactly.
      return std::pow(d2, exponent / 2.0);
    }
    case Kind::Custom:
      return cost_fn(x, y);
  }
  return 0.0;
}

RowVector CostSpec::pairwise_grad_x(const RowVector& x, const RowVector& y) const {
  switch (kind) {
    case Kind::SquaredEuclidean:
      return 2.0 * (x - y);
    case Kind::MetricPower: {
      const RowVector diff = x - y;
      const double d2 = diff.squaredNorm();
      if (d2 == 0.0) return RowVector::Zero(x.size());
      // d/dx D^p = p D^{p-2} (x - y)
      return exponent * std::pow(d2, exponent / 2.0 - 1.0) * diff;
    }
    case Kind::Custom:
      return grad_x_fn(x, y);
  }
  return RowVector::Zero(x.size());
}

RowVector CostSpec::pairwise_grad_y(const RowVector& x, const RowVector& y) const {
  switch (kind) {
    case Kind::SquaredEuclidean:
    case Kind::MetricPower:
      return pairwise_grad_x(y, x);
    case Kind::Custom:
      if (!grad_y_fn)
        throw std::invalid_argument("CostSpec: custom cost lacks a grad_y");
      return grad_y_fn(x, y);
  }
  return RowVector::Zero(y.size());
}

Matrix cost_matrix(const Matrix& X, const Matrix& Y, const CostSpec& spec) {
  if (X.cols() != Y.cols())
    throw std::invalid_argument("cost_matrix: dimension mismatch between X and Y");
  require_finite(X, "cost_matrix X");
  require_finite(Y, "cost_matrix Y");
  Matrix C(X.rows(), Y.rows());
  for (Eigen::Index i = 0; i < X.rows(); ++i)
    for (Eigen::Index j = 0; j < Y.rows(); ++j)
      C(i, j) = spec.pairwise(X.row(i), Y.row(j));
  return C;
}

}  // namespace flowpool
