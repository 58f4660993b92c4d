#include "flowpool/sinkhorn.hpp"

#include <cmath>
#include <stdexcept>

#include <Eigen/Cholesky>

namespace flowpool {

namespace {

// Rowwise log(sum_j exp(T(i,j))), max-shifted.
Vector lse_rows(const Matrix& T) {
  Vector c = T.rowwise().maxCoeff();
  Vector s = ((T.colwise() - c).array().exp().rowwise().sum()).matrix();
  return c + s.array().log().matrix();
}

Vector lse_cols(const Matrix& T) {
  Vector c = T.colwise().maxCoeff();
  Vector s = ((T.rowwise() - c.transpose()).array().exp().colwise().sum())
                 .transpose()
                 .matrix();
  return c + s.array().log().matrix();
}

// (f_i + g_j - C_ij) / eps
Matrix log_coupling(const Vector& f, const Vector& g, const Matrix& C,
                    double eps) {
  Matrix T = (-C).rowwise() + g.transpose();
  T.colwise() += f;
  return T / eps;
}

// Dual objective <f,a> + <g,b> - eps * sum(P), safe against overflow far from
// feasibility (returns -inf when the implied coupling mass explodes).
double dual_value(const Vector& f, const Vector& g, const Vector& a,
                  const Vector& b, const Matrix& C, double eps) {
  const Matrix L = log_coupling(f, g, C, eps);
  const double shift = L.maxCoeff();
  if (shift > 690.0) return -std::numeric_limits<double>::infinity();
  const double total = (L.array() - shift).exp().sum() * std::exp(shift);
  return f.dot(a) + g.dot(b) - eps * total;
}

// Damped Newton iterations on the concave dual. The (n+m)-dimensional KKT
// system is dense but tiny at the problem sizes this library targets, and the
// quadratic tail rate is immune to the coupling-degeneracy stalls that make
// plain block coordinate ascent crawl. Returns when the marginal tolerance is
// met, the iteration budget runs out, or a step fails to improve the dual.
bool newton_phase(const Vector& a, const Vector& b, const Matrix& C, double eps,
                  int budget, const SinkhornParams& params, SinkhornSolution& sol) {
  const Eigen::Index n = a.size();
  const Eigen::Index m = b.size();
  for (int k = 0; k < budget; ++k) {
    const Matrix P = log_coupling(sol.f, sol.g, C, eps).array().exp();
    const Vector r = P.rowwise().sum();
    const Vector c = P.colwise().sum();
    sol.marginal_error = std::max((r - a).cwiseAbs().maxCoeff(),
                                  (c - b).cwiseAbs().maxCoeff());
    if (sol.marginal_error <= params.tol) {
      sol.converged = true;
      return true;
    }

    Matrix H(n + m, n + m);
    H.topLeftCorner(n, n) = Matrix(r.asDiagonal());
    H.topRightCorner(n, m) = P;
    H.bottomLeftCorner(m, n) = P.transpose();
    H.bottomRightCorner(m, m) = Matrix(c.asDiagonal());
    H /= eps;
    // tiny ridge: H is singular along (1, -1), to which the gradient is
    // orthogonal
    const double ridge = 1e-12 * std::max(r.maxCoeff(), c.maxCoeff()) / eps;
    H.diagonal().array() += ridge;

    Vector rhs(n + m);
    rhs.head(n) = a - r;
    rhs.tail(m) = b - c;
    const Vector dir = H.ldlt().solve(rhs);

    const double d0 = dual_value(sol.f, sol.g, a, b, C, eps);
    double t = 1.0;
    bool accepted = false;
    for (; t >= 1.0 / 1024.0; t *= 0.5) {
      const Vector f_try = sol.f + t * dir.head(n);
      const Vector g_try = sol.g + t * dir.tail(m);
      if (dual_value(f_try, g_try, a, b, C, eps) >= d0) {
        sol.f = f_try;
        sol.g = g_try;
        accepted = true;
        break;
      }
    }
    ++sol.iterations;
    if (params.record_dual_trace)
      sol.dual_trace.push_back(dual_value(sol.f, sol.g, a, b, C, eps));
    if (!accepted) return false;
  }
  return false;
}

}  // namespace

SinkhornSolution sinkhorn_solve(const DiscreteMeasure& mu,
                                const DiscreteMeasure& nu, const Matrix& C,
                                const SinkhornParams& params) {
  const Vector f0 = Vector::Zero(mu.size());
  const Vector g0 = Vector::Zero(nu.size());
  return sinkhorn_solve(mu, nu, C, params, f0, g0);
}

SinkhornSolution sinkhorn_solve(const DiscreteMeasure& mu,
                                const DiscreteMeasure& nu, const Matrix& C,
                                const SinkhornParams& params, const Vector& f0,
                                const Vector& g0) {
  const Eigen::Index n = mu.size();
  const Eigen::Index m = nu.size();
  if (C.rows() != n || C.cols() != m)
    throw std::invalid_argument("sinkhorn_solve: cost matrix shape mismatch");
  if (!C.allFinite())
    throw std::invalid_argument("sinkhorn_solve: non-finite cost matrix");
  if ((mu.weights.array() <= 0.0).any() || (nu.weights.array() <= 0.0).any())
    throw std::invalid_argument("sinkhorn_solve: weights must be strictly positive");
  if (f0.size() != n || g0.size() != m)
    throw std::invalid_argument("sinkhorn_solve: warm-start size mismatch");
  if (params.epsilon <= 0.0 || params.tol <= 0.0 || params.max_iters < 1)
    throw std::invalid_argument("sinkhorn_solve: invalid parameters");

  const double eps = params.epsilon;
  const Vector& a = mu.weights;
  const Vector& b = nu.weights;
  const Vector log_a = a.array().log().matrix();
  const Vector log_b = b.array().log().matrix();

  SinkhornSolution sol;
  sol.f = f0;
  sol.g = g0;

  double stall_window_error = std::numeric_limits<double>::infinity();
  while (sol.iterations < params.max_iters) {
    // one block-coordinate-ascent sweep: f given g, then g given f
    Matrix T = ((-C).rowwise() + sol.g.transpose()) / eps;
    sol.f = eps * (log_a - lse_rows(T));
    T = ((-C).colwise() + sol.f) / eps;
    sol.g = eps * (log_b - lse_cols(T));
    ++sol.iterations;

    const Matrix L = log_coupling(sol.f, sol.g, C, eps);
    const Vector row_sums = L.array().exp().rowwise().sum();
    const Vector col_sums = L.array().exp().colwise().sum();
    sol.marginal_error = std::max((row_sums - a).cwiseAbs().maxCoeff(),
                                  (col_sums - b).cwiseAbs().maxCoeff());
    if (params.record_dual_trace) {
      const double total = row_sums.sum();
      sol.dual_trace.push_back(sol.f.dot(a) + sol.g.dot(b) - eps * total);
    }
    if (sol.marginal_error <= params.tol) {
      sol.converged = true;
      break;
    }

    // Degenerate couplings flatten the sweep contraction; once the error
    // stops moving a decade per window, hand the tail to Newton.
    if (sol.iterations % 10 == 0) {
      const bool stalled = sol.iterations >= 30 &&
                           sol.marginal_error > 0.3 * stall_window_error;
      stall_window_error = sol.marginal_error;
      if (stalled &&
          newton_phase(a, b, C, eps, params.max_iters - sol.iterations, params, sol))
        break;
    }
  }

  const Matrix L = log_coupling(sol.f, sol.g, C, eps);
  const double total = L.array().exp().sum();
  sol.loss = sol.f.dot(a) + sol.g.dot(b) + eps * (1.0 - total);
  if (!sol.f.allFinite() || !sol.g.allFinite()) sol.converged = false;
  return sol;
}

SinkhornSolution sinkhorn_solve_symmetric(const DiscreteMeasure& mu,
                                          const Matrix& C,
                                          const SinkhornParams& params) {
  return sinkhorn_solve_symmetric(mu, C, params, Vector::Zero(mu.size()));
}

SinkhornSolution sinkhorn_solve_symmetric(const DiscreteMeasure& mu,
                                          const Matrix& C,
                                          const SinkhornParams& params,
                                          const Vector& f0) {
  const Eigen::Index n = mu.size();
  if (C.rows() != n || C.cols() != n)
    throw std::invalid_argument("sinkhorn_solve_symmetric: cost matrix shape mismatch");
  if (!C.allFinite())
    throw std::invalid_argument("sinkhorn_solve_symmetric: non-finite cost matrix");
  if ((mu.weights.array() <= 0.0).any())
    throw std::invalid_argument("sinkhorn_solve_symmetric: weights must be strictly positive");
  if (f0.size() != n)
    throw std::invalid_argument("sinkhorn_solve_symmetric: warm-start size mismatch");
  if (params.epsilon <= 0.0 || params.tol <= 0.0 || params.max_iters < 1)
    throw std::invalid_argument("sinkhorn_solve_symmetric: invalid parameters");

  const double eps = params.epsilon;
  const Vector& a = mu.weights;
  const Vector log_a = a.array().log().matrix();

  SinkhornSolution sol;
  sol.f = f0;
  double total = 0.0;

  auto refresh = [&](double& err) {
    Matrix L = ((-C).rowwise() + sol.f.transpose());
    L.colwise() += sol.f;
    L /= eps;
    const Vector row_sums = L.array().exp().rowwise().sum();
    total = row_sums.sum();
    err = (row_sums - a).cwiseAbs().maxCoeff();
  };

  double stall_window_error = std::numeric_limits<double>::infinity();
  while (sol.iterations < params.max_iters) {
    // averaged symmetric fixed-point update f <- (f + T f) / 2
    const Matrix T = ((-C).rowwise() + sol.f.transpose()) / eps;
    const Vector tf = eps * (log_a - lse_rows(T));
    sol.f = 0.5 * (sol.f + tf);
    ++sol.iterations;

    refresh(sol.marginal_error);
    if (params.record_dual_trace)
      sol.dual_trace.push_back(2.0 * sol.f.dot(a) - eps * total);
    if (sol.marginal_error <= params.tol) {
      sol.converged = true;
      break;
    }

    if (sol.iterations % 10 == 0) {
      const bool stalled = sol.iterations >= 30 &&
                           sol.marginal_error > 0.3 * stall_window_error;
      stall_window_error = sol.marginal_error;
      if (stalled) {
        // Newton on the symmetric dual: grad = 2(a - r), Hess = -2(diag r + P)/eps
        bool done = false;
        while (sol.iterations < params.max_iters) {
          Matrix L = ((-C).rowwise() + sol.f.transpose());
          L.colwise() += sol.f;
          const Matrix P = (L / eps).array().exp();
          const Vector r = P.rowwise().sum();
          sol.marginal_error = (r - a).cwiseAbs().maxCoeff();
          if (sol.marginal_error <= params.tol) {
            sol.converged = true;
            done = true;
            break;
          }
          Matrix H = Matrix(r.asDiagonal()) + P;
          H.diagonal().array() += 1e-12 * r.maxCoeff();
          const Vector dir = eps * H.ldlt().solve(a - r);

          auto dual = [&](const Vector& f) {
            Matrix Lf = ((-C).rowwise() + f.transpose());
            Lf.colwise() += f;
            Lf /= eps;
            const double shift = Lf.maxCoeff();
            if (shift > 690.0) return -std::numeric_limits<double>::infinity();
            return 2.0 * f.dot(a) -
                   eps * (Lf.array() - shift).exp().sum() * std::exp(shift);
          };
          const double d0 = dual(sol.f);
          bool accepted = false;
          for (double t = 1.0; t >= 1.0 / 1024.0; t *= 0.5) {
            const Vector f_try = sol.f + t * dir;
            if (dual(f_try) >= d0) {
              sol.f = f_try;
              accepted = true;
              break;
            }
          }
          ++sol.iterations;
          if (params.record_dual_trace) sol.dual_trace.push_back(dual(sol.f));
          if (!accepted) break;
        }
        if (done) break;
      }
    }
  }

  refresh(sol.marginal_error);
  if (sol.marginal_error <= params.tol) sol.converged = true;
  sol.g = sol.f;
  sol.loss = 2.0 * sol.f.dot(a) + eps * (1.0 - total);
  if (!sol.f.allFinite()) sol.converged = false;
  return sol;
}

Matrix coupling_from_potentials(const SinkhornSolution& sol, const Matrix& C,
                                double epsilon) {
  if (!sol.converged)
    throw std::invalid_argument(
        "coupling_from_potentials: solution did not converge");
  return log_coupling(sol.f, sol.g, C, epsilon).array().exp();
}

DivergenceSolution sinkhorn_divergence(const DiscreteMeasure& mu,
                                       const DiscreteMeasure& nu,
                                       const CostSpec& spec,
                                       const SinkhornParams& params) {
  DivergenceSolution out;
  const bool identical = mu.points.rows() == nu.points.rows() &&
                         mu.points == nu.points && mu.weights == nu.weights;
  if (identical) {
    // One symmetric solve serves all three terms and the debias cancels
    // exactly.
    out.xx = sinkhorn_solve_symmetric(mu, cost_matrix(mu.points, mu.points, spec), params);
    out.xy = out.xx;
    out.yy = out.xx;
    out.value = 0.0;
    return out;
  }
  out.xy = sinkhorn_solve(mu, nu, cost_matrix(mu.points, nu.points, spec), params);
  out.xx = sinkhorn_solve_symmetric(mu, cost_matrix(mu.points, mu.points, spec), params);
  out.yy = sinkhorn_solve_symmetric(nu, cost_matrix(nu.points, nu.points, spec), params);
  out.value = out.xy.loss - 0.5 * out.xx.loss - 0.5 * out.yy.loss;
  return out;
}

}  // namespace flowpool
