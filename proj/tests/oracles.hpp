// Independent reference computations used only by tests. Everything here
// sticks to the literal definitions (dense kernels, direct minimization,
// finite differences of values) so it shares no code path with the library
// solvers it checks.
#pragma once

#include <cmath>
#include <limits>

#include <Eigen/Dense>

namespace oracles {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

// <C,P> - eps * H(P) with H(P) = -sum P log P (0 log 0 = 0).
inline double entropic_primal(const Matrix& C, const Matrix& P, double eps) {
  double value = 0.0;
  for (Eigen::Index i = 0; i < P.rows(); ++i)
    for (Eigen::Index j = 0; j < P.cols(); ++j) {
      const double p = P(i, j);
      value += C(i, j) * p;
      if (p > 0.0) value += eps * p * std::log(p);
    }
  return value;
}

struct NaiveSolution {
  Matrix P;
  double primal = 0.0;
  bool converged = false;
};

// Literal matrix scaling on the dense Gibbs kernel: u = a ./ Kv, v = b ./ K^T u.
// Underflows for small eps; callers pick instances where it does not.
inline NaiveSolution naive_scaling_sinkhorn(const Vector& a, const Vector& b,
                                            const Matrix& C, double eps,
                                            int max_iters = 200000,
                                            double tol = 1e-12) {
  const Matrix K = (-C / eps).array().exp();
  Vector u = Vector::Ones(a.size());
  Vector v = Vector::Ones(b.size());
  NaiveSolution out;
  for (int it = 0; it < max_iters; ++it) {
    u = a.array() / (K * v).array();
    v = b.array() / (K.transpose() * u).array();
    out.P = u.asDiagonal() * K * v.asDiagonal();
    const double err =
        std::max((out.P.rowwise().sum() - a).cwiseAbs().maxCoeff(),
                 (out.P.colwise().sum().transpose() - b).cwiseAbs().maxCoeff());
    if (err <= tol) {
      out.converged = true;
      break;
    }
  }
  if (!out.P.allFinite()) out.converged = false;
  out.primal = entropic_primal(C, out.P, eps);
  return out;
}

// 2x2 entropic OT by direct 1-D minimization: with marginals fixed, the
// feasible couplings form a segment P(t) = [[t, a0 - t], [b0 - t, a1 - b0 + t]]
// and the objective is strictly convex in t. Golden-section to machine width.
struct Brute2x2 {
  Matrix P;
  double primal = 0.0;
};

inline Brute2x2 brute_force_2x2(const Vector& a, const Vector& b,
                                const Matrix& C, double eps) {
  auto coupling = [&](double t) {
    Matrix P(2, 2);
    P << t, a(0) - t, b(0) - t, a(1) - b(0) + t;
    return P;
  };
  auto value = [&](double t) { return entropic_primal(C, coupling(t), eps); };

  double lo = std::max(0.0, b(0) - a(1));
  double hi = std::min(a(0), b(0));
  const double phi = (std::sqrt(5.0) - 1.0) / 2.0;
  double x1 = hi - phi * (hi - lo);
  double x2 = lo + phi * (hi - lo);
  double f1 = value(x1);
  double f2 = value(x2);
  for (int it = 0; it < 300 && hi - lo > 1e-15; ++it) {
    if (f1 < f2) {
      hi = x2;
      x2 = x1;
      f2 = f1;
      x1 = hi - phi * (hi - lo);
      f1 = value(x1);
    } else {
      lo = x1;
      x1 = x2;
      f1 = f2;
      x2 = lo + phi * (hi - lo);
      f2 = value(x2);
    }
  }
  const double t = 0.5 * (lo + hi);
  return {coupling(t), value(t)};
}

// Central finite differences of a scalar function of a matrix argument.
template <typename F>
Matrix fd_gradient(F&& value_at, const Matrix& X, double step = 1e-5) {
  Matrix g(X.rows(), X.cols());
  for (Eigen::Index i = 0; i < X.rows(); ++i)
    for (Eigen::Index j = 0; j < X.cols(); ++j) {
      Matrix Xp = X;
      Matrix Xm = X;
      Xp(i, j) += step;
      Xm(i, j) -= step;
      g(i, j) = (value_at(Xp) - value_at(Xm)) / (2.0 * step);
    }
  return g;
}

inline double rel_error(const Matrix& got, const Matrix& want) {
  const double denom = std::max(want.norm(), 1e-30);
  return (got - want).norm() / denom;
}

}  // namespace oracles
