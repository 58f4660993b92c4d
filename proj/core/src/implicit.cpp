#include "flowpool/implicit.hpp"

#include <cmath>
#include <memory>
#include <stdexcept>

#include "flowpool/rng.hpp"

namespace flowpool {

namespace {

Vector flatten(const Matrix& m) {
  return Eigen::Map<const Vector>(m.data(), m.size());
}

Matrix unflatten(const Vector& v, Eigen::Index rows, Eigen::Index cols) {
  return Eigen::Map<const Matrix>(v.data(), rows, cols);
}

// Central difference of obj's X-gradient along V, potentials re-solved at
// X +/- hV. The perturbation magnitude is pinned to the scale of X.
Matrix fd_hvp(FlowObjective& obj, const Matrix& X, const Matrix& V,
              double fd_scale) {
  const double vnorm = V.cwiseAbs().maxCoeff();
  if (vnorm == 0.0) return Matrix::Zero(X.rows(), X.cols());
  const double h = fd_scale * (1.0 + X.cwiseAbs().maxCoeff()) / vnorm;
  const Matrix gp = obj.grad(X + h * V);
  const Matrix gm = obj.grad(X - h * V);
  return (gp - gm) / (2.0 * h);
}

// Adjoint of the mixed derivative: Schwarz symmetry turns the transpose of
// d_Y grad_X into the X-directional derivative of grad_Y, so one forward
// difference pair suffices. Only the cross term of grad_Y depends on X.
Matrix fd_cross_vjp(FlowObjective& obj, const Matrix& X, const Matrix& W,
                    double fd_scale) {
  const double wnorm = W.cwiseAbs().maxCoeff();
  if (wnorm == 0.0) return Matrix::Zero(obj.y().rows(), obj.y().cols());
  const double h = fd_scale * (1.0 + X.cwiseAbs().maxCoeff()) / wnorm;
  const Matrix gp = obj.grad_y_cross(X + h * W);
  const Matrix gm = obj.grad_y_cross(X - h * W);
  return (gp - gm) / (2.0 * h);
}

// Forward mixed derivative: perturb Y, differentiate grad_X. Fresh objectives
// per side, seeded from the base solve when available.
Matrix fd_cross_jvp(const Matrix& X, const Matrix& Y, const Matrix& U,
                    const CostSpec& spec, const SinkhornParams& params,
                    Objective objective, double fd_scale) {
  const double unorm = U.cwiseAbs().maxCoeff();
  if (unorm == 0.0) return Matrix::Zero(X.rows(), X.cols());
  const double h = fd_scale * (1.0 + Y.cwiseAbs().maxCoeff()) / unorm;
  FlowObjective plus(Y + h * U, spec, params, objective);
  FlowObjective minus(Y - h * U, spec, params, objective);
  return (plus.grad(X) - minus.grad(X)) / (2.0 * h);
}

struct ProbeState {
  Matrix X, Y;
  CostSpec spec;
  SinkhornParams params;
  Objective objective;
  double fd_scale;
  FlowObjective base;

  ProbeState(Matrix X_in, Matrix Y_in, CostSpec spec_in, SinkhornParams p,
             Objective obj, double scale)
      : X(std::move(X_in)),
        Y(std::move(Y_in)),
        spec(std::move(spec_in)),
        params(p),
        objective(obj),
        fd_scale(scale),
        base(Y, spec, params, obj) {}
};

double power_iteration(const std::function<Matrix(const Matrix&)>& apply,
                       Eigen::Index rows, Eigen::Index cols,
                       int max_iters = 30, double rel_tol = 1e-6) {
  Matrix z = rng::normal_matrix(rows, cols, 0x9e3779b97f4a7c15ull);
  z /= z.norm();
  double sigma = 0.0;
  for (int it = 0; it < max_iters; ++it) {
    Matrix w = apply(z);
    const double next = w.norm();
    if (next == 0.0) return 0.0;
    z = w / next;
    if (it > 0 && std::abs(next - sigma) <= rel_tol * next) {
      sigma = next;
      break;
    }
    sigma = next;
  }
  return sigma;
}

}  // namespace

SecondOrderProbe make_second_order_probe(const Matrix& X, const Matrix& Y,
                                         const CostSpec& spec,
                                         const SinkhornParams& params,
                                         Objective objective, double fd_scale) {
  auto state = std::make_shared<ProbeState>(X, Y, spec, params, objective,
                                            fd_scale);
  SecondOrderProbe probe;
  probe.hvp = [state](const Matrix& v) {
    return fd_hvp(state->base, state->X, v, state->fd_scale);
  };
  probe.cross_jvp = [state](const Matrix& u) {
    return fd_cross_jvp(state->X, state->Y, u, state->spec, state->params,
                        state->objective, state->fd_scale);
  };
  probe.cross_vjp = [state](const Matrix& w) {
    return fd_cross_vjp(state->base, state->X, w, state->fd_scale);
  };
  return probe;
}

Matrix hessian_vector_product(const Matrix& X, const Matrix& Y,
                              const Matrix& direction, const CostSpec& spec,
                              double epsilon, const SinkhornParams& params,
                              Objective objective) {
  SinkhornParams p = params;
  p.epsilon = epsilon;
  FlowObjective obj(Y, spec, p, objective);
  return fd_hvp(obj, X, direction, 1e-4);
}

Matrix cross_jacobian_vector_product(const Matrix& X, const Matrix& Y,
                                     const Matrix& direction,
                                     const CostSpec& spec, double epsilon,
                                     const SinkhornParams& params,
                                     Objective objective) {
  SinkhornParams p = params;
  p.epsilon = epsilon;
  return fd_cross_jvp(X, Y, direction, spec, p, objective, 1e-4);
}

CgResult conjugate_gradient(const std::function<Vector(const Vector&)>& apply,
                            const Vector& b, double tol, int max_iters) {
  CgResult res;
  res.x = Vector::Zero(b.size());
  const double bnorm = b.norm();
  if (bnorm == 0.0) {
    res.converged = true;
    return res;
  }
  Vector r = b;
  Vector p = r;
  double rs = r.squaredNorm();
  for (int it = 1; it <= max_iters; ++it) {
    const Vector Ap = apply(p);
    const double pAp = p.dot(Ap);
    if (pAp <= 0.0) break;  // operator lost positive definiteness
    const double alpha = rs / pAp;
    res.x += alpha * p;
    r -= alpha * Ap;
    const double rs_next = r.squaredNorm();
    res.iterations = it;
    res.residual = std::sqrt(rs_next) / bnorm;
    if (res.residual <= tol) {
      res.converged = true;
      break;
    }
    p = r + (rs_next / rs) * p;
    rs = rs_next;
  }
  return res;
}

Matrix implicit_vjp(const Matrix& x_star, const Matrix& Y,
                    const Matrix& cotangent, const CostSpec& spec,
                    const SinkhornParams& sinkhorn_params,
                    const ImplicitDiffParams& idp, Objective objective) {
  const Eigen::Index m = x_star.rows();
  const Eigen::Index d = x_star.cols();
  if (cotangent.rows() != m || cotangent.cols() != d)
    throw std::invalid_argument("implicit_vjp: cotangent shape mismatch");
  if (cotangent.isZero(0.0)) return Matrix::Zero(Y.rows(), d);

  auto state = std::make_shared<ProbeState>(x_star, Y, spec, sinkhorn_params,
                                            objective, 1e-4);
  const Matrix g0 = state->base.grad(x_star);
  if (g0.cwiseAbs().maxCoeff() > idp.fixed_point_grad_tol)
    throw std::invalid_argument(
        "implicit_vjp: x_star is not a fixed point (gradient sup-norm " +
        std::to_string(g0.cwiseAbs().maxCoeff()) + ")");

  auto hvp = [&](const Matrix& v) {
    return fd_hvp(state->base, state->X, v, state->fd_scale);
  };
  auto normal_op = [&](const Vector& v) {
    const Matrix V = unflatten(v, m, d);
    Vector out = flatten(hvp(hvp(V)));
    out += idp.lambda * v;
    return out;
  };

  const CgResult cg = conjugate_gradient(normal_op, flatten(cotangent),
                                         idp.cg_tol, idp.cg_max_iters);
  if (!cg.converged)
    throw std::runtime_error(
        "implicit_vjp: conjugate gradient stalled, relative residual " +
        std::to_string(cg.residual));

  const Matrix w = hvp(unflatten(cg.x, m, d));
  return -fd_cross_vjp(state->base, state->X, w, state->fd_scale);
}

UnrolledVjp unrolled_vjp(const Matrix& Y, const Matrix& X0,
                         const Matrix& cotangent, const FlowParams& flow_params,
                         const CostSpec& spec,
                         std::size_t memory_budget_bytes) {
  const std::size_t per_iterate = static_cast<std::size_t>(X0.size()) * sizeof(double);
  if (per_iterate * static_cast<std::size_t>(flow_params.max_steps) >
      memory_budget_bytes)
    throw std::runtime_error(
        "unrolled_vjp: iterate storage exceeds the memory budget (" +
        std::to_string(per_iterate * flow_params.max_steps) + " bytes)");

  std::vector<Matrix> iterates;
  pool_traced(Y, X0, flow_params, spec, iterates);

  UnrolledVjp out;
  out.grad_y = Matrix::Zero(Y.rows(), Y.cols());
  Matrix v = cotangent;
  out.cotangent_norms.push_back(v.norm());

  FlowObjective obj(Y, spec, flow_params.sinkhorn, flow_params.objective);
  constexpr double kFdScale = 1e-4;
  for (auto it = iterates.rbegin(); it != iterates.rend(); ++it) {
    const Matrix& Xl = *it;
    // X^(l+1) = X^(l) - tau * grad(X^(l), Y): push v through both slots.
    out.grad_y -= flow_params.tau * fd_cross_vjp(obj, Xl, v, kFdScale);
    v -= flow_params.tau * fd_hvp(obj, Xl, v, kFdScale);
    out.cotangent_norms.push_back(v.norm());
  }
  return out;
}

ConditionNumbers condition_numbers(const Matrix& X, const Matrix& Y,
                                   const CostSpec& spec,
                                   const SinkhornParams& params) {
  auto state = std::make_shared<ProbeState>(X, Y, spec, params,
                                            Objective::LossOnly, 1e-4);
  const Matrix g = state->base.grad(X);
  const double gnorm = g.norm();
  if (gnorm == 0.0)
    throw std::domain_error("condition_numbers: zero gradient, kappa undefined");

  const double sigma_x = power_iteration(
      [&](const Matrix& z) { return fd_hvp(state->base, X, z, state->fd_scale); },
      X.rows(), X.cols());
  // sigma_max of the rectangular cross operator from B^T B.
  const double sigma_y2 = power_iteration(
      [&](const Matrix& z) {
        const Matrix Bz = fd_cross_jvp(X, Y, z, spec, params,
                                       Objective::LossOnly, state->fd_scale);
        return fd_cross_vjp(state->base, X, Bz, state->fd_scale);
      },
      Y.rows(), Y.cols());

  ConditionNumbers out;
  out.kappa_x = sigma_x * X.norm() / gnorm;
  out.kappa_y = std::sqrt(std::max(0.0, sigma_y2)) * Y.norm() / gnorm;
  return out;
}

double linear_operator_condition(const Matrix& x_star, const Matrix& Y,
                                 const CostSpec& spec,
                                 const SinkhornParams& params, double lambda,
                                 Objective objective) {
  const Eigen::Index m = x_star.rows();
  const Eigen::Index d = x_star.cols();
  auto state = std::make_shared<ProbeState>(x_star, Y, spec, params, objective,
                                            1e-4);
  auto hvp = [&](const Matrix& v) {
    return fd_hvp(state->base, state->X, v, state->fd_scale);
  };
  auto op = [&](const Matrix& z) -> Matrix {
    return hvp(hvp(z)) + lambda * z;
  };

  const double mu_max = power_iteration(op, m, d);
  if (mu_max <= 0.0)
    throw std::runtime_error("linear_operator_condition: operator is null");

  // Inverse power iteration for the smallest eigenvalue of the shifted
  // operator; each step is a CG solve against op.
  auto op_vec = [&](const Vector& v) { return flatten(op(unflatten(v, m, d))); };
  Matrix z = rng::normal_matrix(m, d, 0xdeadbeefcafef00dull);
  z /= z.norm();
  double mu_min = mu_max;
  for (int it = 0; it < 30; ++it) {
    const CgResult cg = conjugate_gradient(op_vec, flatten(z), 1e-8,
                                           8 * static_cast<int>(m * d) + 50);
    if (!cg.converged)
      throw std::runtime_error(
          "linear_operator_condition: inverse iteration CG stalled, residual " +
          std::to_string(cg.residual));
    Matrix w = unflatten(cg.x, m, d);
    w /= w.norm();
    const double mu = w.cwiseProduct(op(w)).sum();
    const bool settled = it > 0 && std::abs(mu - mu_min) <= 1e-6 * std::abs(mu);
    z = w;
    mu_min = mu;
    if (settled) break;
  }
  return mu_max / mu_min;
}

}  // namespace flowpool
