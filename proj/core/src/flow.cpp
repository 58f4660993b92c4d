#include "flowpool/flow.hpp"

#include <atomic>
#include <stdexcept>
#include <string>
#include <thread>

#include "flowpool/rng.hpp"

namespace flowpool {

Matrix init_reference(int m, int d, std::uint64_t seed) {
  if (m < 1 || d < 1)
    throw std::invalid_argument("init_reference: need M >= 1, d >= 1");
  return rng::normal_matrix(m, d, seed);
}

FlowObjective::FlowObjective(Matrix Y, CostSpec spec, SinkhornParams params,
                             Objective obj)
    : y_(std::move(Y)),
      nu_(uniform_measure(y_)),
      spec_(std::move(spec)),
      params_(params),
      objective_(obj) {}

const SinkhornSolution& FlowObjective::solve_xy(const Matrix& X) {
  const DiscreteMeasure mu = uniform_measure(X);
  const Matrix C = cost_matrix(X, y_, spec_);
  SinkhornSolution sol = xy_ ? sinkhorn_solve(mu, nu_, C, params_, xy_->f, xy_->g)
                             : sinkhorn_solve(mu, nu_, C, params_);
  if (!sol.converged)
    throw std::runtime_error("sinkhorn did not converge (X-Y problem), marginal error " +
                             std::to_string(sol.marginal_error));
  xy_ = std::move(sol);
  return *xy_;
}

const SinkhornSolution& FlowObjective::solve_xx(const Matrix& X) {
  const DiscreteMeasure mu = uniform_measure(X);
  const Matrix C = cost_matrix(X, X, spec_);
  SinkhornSolution sol = xx_ ? sinkhorn_solve_symmetric(mu, C, params_, xx_->f)
                             : sinkhorn_solve_symmetric(mu, C, params_);
  if (!sol.converged)
    throw std::runtime_error("sinkhorn did not converge (X-X problem), marginal error " +
                             std::to_string(sol.marginal_error));
  xx_ = std::move(sol);
  return *xx_;
}

const SinkhornSolution& FlowObjective::solve_yy() {
  if (!yy_) {
    const Matrix C = cost_matrix(y_, y_, spec_);
    SinkhornSolution sol = sinkhorn_solve_symmetric(nu_, C, params_);
    if (!sol.converged)
      throw std::runtime_error("sinkhorn did not converge (Y-Y problem), marginal error " +
                               std::to_string(sol.marginal_error));
    yy_ = std::move(sol);
  }
  return *yy_;
}

double FlowObjective::value_and_grad(const Matrix& X, Matrix& grad_out) {
  if (objective_ == Objective::LossOnly) {
    const SinkhornSolution& xy = solve_xy(X);
    grad_out = grad_x_loss(X, y_, xy, spec_, params_.epsilon);
    return xy.loss;
  }
  const SinkhornSolution& xy = solve_xy(X);
  const SinkhornSolution& xx = solve_xx(X);
  const SinkhornSolution& yy = solve_yy();
  DivergenceSolution div;
  div.xy = xy;
  div.xx = xx;
  div.yy = yy;
  div.value = xy.loss - 0.5 * xx.loss - 0.5 * yy.loss;
  grad_out = grad_x_divergence(X, y_, div, spec_, params_.epsilon);
  return div.value;
}

Matrix FlowObjective::grad(const Matrix& X) {
  if (objective_ == Objective::LossOnly)
    return grad_x_loss(X, y_, solve_xy(X), spec_, params_.epsilon);
  const SinkhornSolution& xy = solve_xy(X);
  const SinkhornSolution& xx = solve_xx(X);
  DivergenceSolution div;
  div.xy = xy;
  div.xx = xx;
  div.yy.converged = true;  // value untouched; gradient needs xy and xx only
  return grad_x_divergence(X, y_, div, spec_, params_.epsilon);
}

Matrix FlowObjective::grad_y_cross(const Matrix& X) {
  return grad_y_loss(X, y_, solve_xy(X), spec_, params_.epsilon);
}

namespace {

FlowResult run_flow(const Matrix& Y, const Matrix& X0, const FlowParams& params,
                    const CostSpec& spec, std::vector<Matrix>* iterates) {
  if (Y.rows() < 1) throw std::invalid_argument("flowpool: Y must be nonempty");
  if (X0.cols() != Y.cols())
    throw std::invalid_argument("flowpool: X0 and Y dimension mismatch");
  if (params.tau <= 0.0 || params.max_steps < 1)
    throw std::invalid_argument("flowpool: invalid parameters");

  FlowObjective obj(Y, spec, params.sinkhorn, params.objective);
  FlowResult res;
  res.x_star = X0;
  Matrix grad;

  for (int step = 0; step <= params.max_steps; ++step) {
    double energy;
    try {
      energy = obj.value_and_grad(res.x_star, grad);
    } catch (const std::runtime_error& e) {
      throw std::runtime_error("flowpool: step " + std::to_string(step) + ": " + e.what());
    }
    res.energies.push_back(energy);
    res.final_grad_norm = grad.cwiseAbs().maxCoeff();
    res.steps_taken = step;

    if (energy > 10.0 * std::abs(res.energies.front()) + 1.0)
      throw std::runtime_error("flowpool: energy blew up at step " +
                               std::to_string(step) + " (tau too large?)");
    if (res.final_grad_norm < params.grad_tol) {
      res.converged = true;
      break;
    }
    if (step == params.max_steps) break;

    if (iterates) iterates->push_back(res.x_star);
    res.x_star -= params.tau * grad;
  }
  return res;
}

}  // namespace

FlowResult pool(const Matrix& Y, const Matrix& X0, const FlowParams& params,
                    const CostSpec& spec) {
  return run_flow(Y, X0, params, spec, nullptr);
}

FlowResult pool_traced(const Matrix& Y, const Matrix& X0,
                           const FlowParams& params, const CostSpec& spec,
                           std::vector<Matrix>& iterates) {
  iterates.clear();
  return run_flow(Y, X0, params, spec, &iterates);
}

std::vector<FlowResult> pool_batch(const std::vector<Matrix>& graph_reps,
                                   const Matrix& X0, const FlowParams& params,
                                   const CostSpec& spec, int threads) {
  std::vector<FlowResult> results(graph_reps.size());
  std::vector<std::string> errors(graph_reps.size());
  if (threads <= 0)
    threads = static_cast<int>(std::thread::hardware_concurrency());
  threads = std::max(1, std::min<int>(threads, static_cast<int>(graph_reps.size())));

  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next.fetch_add(1); i < graph_reps.size();
         i = next.fetch_add(1)) {
      try {
        results[i] = pool(graph_reps[i], X0, params, spec);
      } catch (const std::exception& e) {
        errors[i] = e.what();
      }
    }
  };
  std::vector<std::thread> pool;
  for (int t = 1; t < threads; ++t) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();

  for (std::size_t i = 0; i < errors.size(); ++i)
    if (!errors[i].empty())
      throw std::runtime_error("pool_batch: element " + std::to_string(i) +
                               ": " + errors[i]);
  return results;
}

}  // namespace flowpool
