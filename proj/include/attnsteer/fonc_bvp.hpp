#pragma once

// Solver for the first-order necessary conditions of the mixed-attention
// problem (0 < alpha < 1), treated as a two-point boundary value problem:
//
//   Sigma_dot  =  A Sigma + Sigma A^T + B B^T
//   -Lambda_dot = Lambda A + A^T Lambda - (1 - alpha) Adot^T Adot
//   Lambda Sigma = alpha A - (1 - alpha) d/dt(Adot Sigma)
//   Adot(0) = Adot(T) = 0,   Sigma(0) = Sigma_init,   Sigma(T) = Sigma_fin
//
// transcribed by implicit-midpoint collocation and solved with a damped
// Newton iteration (forward-difference Jacobian, block-bidiagonal sparsity,
// sparse LU). Sigma and Lambda are carried in symmetric-vectorization
// coordinates so symmetry is structural.

#include <Eigen/Sparse>
#include <Eigen/SparseLU>

#include <algorithm>
#include <cmath>
#include <optional>
#include <utility>
#include <vector>

#include "attnsteer/common.hpp"
#include "attnsteer/fonc_solution.hpp"
#include "attnsteer/model.hpp"
#include "attnsteer/types.hpp"

namespace attnsteer::bvp {

struct SolverConfig {
  int grid_size = 201;
  double newton_tol = 1e-9;  // on the scaled residual |R|_inf / (1 + |X|_inf)
  int max_newton_iters = 50;
  double backtrack_factor = 0.5;
  double min_step = 1e-4;
  std::vector<double> continuation_schedule;  // used by sweep helpers
};

namespace detail {

/// Node-block layout inside the packed unknown vector:
/// [ vech Sigma (p) | vech Lambda (p) | vec A (n^2) | vec Adot (n^2) ].
struct Packing {
  int n;
  int p;      // n (n + 1) / 2
  int nsq;    // n^2
  int d;      // block size per node: 2 p + 2 n^2

  explicit Packing(int dim)
      : n(dim), p(vech_size(dim)), nsq(dim * dim), d(2 * vech_size(dim) + 2 * dim * dim) {}

  int off_sigma() const { return 0; }
  int off_lambda() const { return p; }
  int off_A() const { return 2 * p; }
  int off_Adot() const { return 2 * p + nsq; }
};

struct EvalWorkspace {
  Matrix sigma, lambda, A, Adot;
  Matrix sigma_dot, lambda_dot, Addot, sigma_inv;

  explicit EvalWorkspace(int n)
      : sigma(n, n), lambda(n, n), A(n, n), Adot(n, n), sigma_dot(n, n), lambda_dot(n, n),
        Addot(n, n), sigma_inv(n, n) {}
};

inline void unpack_node(const Packing& pk, const double* x, EvalWorkspace& w) {
  unvech_into(x + pk.off_sigma(), pk.n, w.sigma);
  unvech_into(x + pk.off_lambda(), pk.n, w.lambda);
  w.A = Eigen::Map<const Matrix>(x + pk.off_A(), pk.n, pk.n);
  w.Adot = Eigen::Map<const Matrix>(x + pk.off_Adot(), pk.n, pk.n);
}

inline void pack_node(const Packing& pk, const Matrix& sigma, const Matrix& lambda,
                      const Matrix& A, const Matrix& Adot, double* x) {
  vech_into(sigma, x + pk.off_sigma());
  vech_into(lambda, x + pk.off_lambda());
  Eigen::Map<Matrix>(x + pk.off_A(), pk.n, pk.n) = A;
  Eigen::Map<Matrix>(x + pk.off_Adot(), pk.n, pk.n) = Adot;
}

/// Packed time-derivative of the joint state. The second derivative of the
/// gain comes from expanding d/dt(Adot Sigma) = Addot Sigma + Adot Sigma_dot
/// in the stationarity condition.
inline void state_derivative(double alpha, const Packing& pk, const double* x, double* dx,
                             EvalWorkspace& w, const Matrix& Q) {
  unpack_node(pk, x, w);

  Eigen::PartialPivLU<Matrix> lu(w.sigma);
  w.sigma_inv = lu.inverse();
  const double cond_est = w.sigma.cwiseAbs().rowwise().sum().maxCoeff() *
                          w.sigma_inv.cwiseAbs().rowwise().sum().maxCoeff();
  if (!(cond_est < 1e12))
    throw IllConditionedState("state_derivative: covariance condition number above 1e12");

  w.sigma_dot.noalias() = w.A * w.sigma;
  w.sigma_dot.noalias() += w.sigma * w.A.transpose();
  w.sigma_dot += Q;

  w.lambda_dot.noalias() = -(w.lambda * w.A);
  w.lambda_dot.noalias() -= w.A.transpose() * w.lambda;
  w.lambda_dot.noalias() += (1.0 - alpha) * w.Adot.transpose() * w.Adot;

  w.Addot.noalias() = (alpha / (1.0 - alpha)) * w.A;
  w.Addot.noalias() -= (1.0 / (1.0 - alpha)) * w.lambda * w.sigma;
  w.Addot.noalias() -= w.Adot * w.sigma_dot;
  w.Addot = w.Addot * w.sigma_inv;

  vech_into(w.sigma_dot, dx + pk.off_sigma());
  vech_into(symmetrize(w.lambda_dot), dx + pk.off_lambda());
  Eigen::Map<Matrix>(dx + pk.off_A(), pk.n, pk.n) = w.Adot;
  Eigen::Map<Matrix>(dx + pk.off_Adot(), pk.n, pk.n) = w.Addot;
}

/// Residual layout: [ Sigma_0 boundary (p) | interval defects ((N-1) d) |
/// Sigma_T boundary (p) | Adot_0 (n^2) | Adot_T (n^2) ].
inline Vector residual_packed(const SteeringProblem& problem, double alpha, const Packing& pk,
                              const TimeGrid& grid, const Vector& X, EvalWorkspace& w) {
  const int N = grid.size();
  const double h = grid.spacing();
  const Matrix Q = problem.noise_gram();
  Vector R(N * pk.d);

  Vector mid(pk.d), fmid(pk.d);
  const int defect_base = pk.p;
  for (int i = 0; i + 1 < N; ++i) {
    const double* xi = X.data() + i * pk.d;
    const double* xj = X.data() + (i + 1) * pk.d;
    for (int k = 0; k < pk.d; ++k) mid(k) = 0.5 * (xi[k] + xj[k]);
    state_derivative(alpha, pk, mid.data(), fmid.data(), w, Q);
    for (int k = 0; k < pk.d; ++k)
      R(defect_base + i * pk.d + k) = (xj[k] - xi[k]) / h - fmid(k);
  }

  Vector target(pk.p);
  vech_into(problem.sigma_init.value(), target.data());
  for (int k = 0; k < pk.p; ++k) R(k) = X(k) - target(k);

  vech_into(problem.sigma_fin.value(), target.data());
  const int bcT = pk.p + (N - 1) * pk.d;
  for (int k = 0; k < pk.p; ++k) R(bcT + k) = X((N - 1) * pk.d + k) - target(k);

  const int bcAdot0 = bcT + pk.p;
  for (int k = 0; k < pk.nsq; ++k) R(bcAdot0 + k) = X(pk.off_Adot() + k);
  const int bcAdotT = bcAdot0 + pk.nsq;
  for (int k = 0; k < pk.nsq; ++k) R(bcAdotT + k) = X((N - 1) * pk.d + pk.off_Adot() + k);

  return R;
}

inline double scaled_norm(const Vector& R, const Vector& X) {
  return R.cwiseAbs().maxCoeff() / (1.0 + X.cwiseAbs().maxCoeff());
}

/// Forward-difference Jacobian exploiting the block-bidiagonal structure:
/// only the midpoint derivative couples adjacent nodes.
inline Eigen::SparseMatrix<double> jacobian_packed(const SteeringProblem& problem, double alpha,
                                                   const Packing& pk, const TimeGrid& grid,
                                                   const Vector& X, EvalWorkspace& w) {
  const int N = grid.size();
  const int d = pk.d;
  const double h = grid.spacing();
  const Matrix Q = problem.noise_gram();

  std::vector<Eigen::Triplet<double>> trips;
  trips.reserve(static_cast<std::size_t>(N - 1) * 2 * d * d + 2 * pk.p + 2 * pk.nsq);

  Vector mid(d), fmid(d), fpert(d), col(d);
  const int defect_base = pk.p;
  for (int i = 0; i + 1 < N; ++i) {
    const double* xi = X.data() + i * d;
    const double* xj = X.data() + (i + 1) * d;
    for (int k = 0; k < d; ++k) mid(k) = 0.5 * (xi[k] + xj[k]);
    state_derivative(alpha, pk, mid.data(), fmid.data(), w, Q);

    const int row0 = defect_base + i * d;
    for (int j = 0; j < d; ++j) {
      const double eps = 1.4901161193847656e-08 * (1.0 + std::abs(mid(j)));
      const double saved = mid(j);
      mid(j) = saved + eps;
      state_derivative(alpha, pk, mid.data(), fpert.data(), w, Q);
      mid(j) = saved;
      col = (fpert - fmid) / eps;  // column j of df/dx at the midpoint

      for (int r = 0; r < d; ++r) {
        const double dfdx = 0.5 * col(r);
        double left = -dfdx;   // d defect_r / d x_i[j]
        double right = -dfdx;  // d defect_r / d x_{i+1}[j]
        if (r == j) {
          left -= 1.0 / h;
          right += 1.0 / h;
        }
        if (left != 0.0) trips.emplace_back(row0 + r, i * d + j, left);
        if (right != 0.0) trips.emplace_back(row0 + r, (i + 1) * d + j, right);
      }
    }
  }

  for (int k = 0; k < pk.p; ++k) trips.emplace_back(k, k, 1.0);
  const int bcT = pk.p + (N - 1) * d;
  for (int k = 0; k < pk.p; ++k) trips.emplace_back(bcT + k, (N - 1) * d + k, 1.0);
  const int bcAdot0 = bcT + pk.p;
  for (int k = 0; k < pk.nsq; ++k)
    trips.emplace_back(bcAdot0 + k, pk.off_Adot() + k, 1.0);
  const int bcAdotT = bcAdot0 + pk.nsq;
  for (int k = 0; k < pk.nsq; ++k)
    trips.emplace_back(bcAdotT + k, (N - 1) * d + pk.off_Adot() + k, 1.0);

  Eigen::SparseMatrix<double> J(N * d, N * d);
  J.setFromTriplets(trips.begin(), trips.end());
  return J;
}

inline bool nodes_positive_definite(const Packing& pk, const TimeGrid& grid, const Vector& X,
                                    Matrix& scratch) {
  for (int i = 0; i < grid.size(); ++i) {
    unvech_into(X.data() + i * pk.d + pk.off_sigma(), pk.n, scratch);
    Eigen::LLT<Matrix> llt(scratch);
    if (llt.info() != Eigen::Success) return false;
  }
  return true;
}

inline Vector pack_states(const Packing& pk, const std::vector<FoncState>& states) {
  Vector X(static_cast<int>(states.size()) * pk.d);
  for (std::size_t i = 0; i < states.size(); ++i)
    pack_node(pk, states[i].sigma, states[i].lambda, states[i].A, states[i].A_dot,
              X.data() + i * pk.d);
  return X;
}

inline std::vector<FoncState> unpack_states(const Packing& pk, int N, const Vector& X) {
  std::vector<FoncState> states(N);
  EvalWorkspace w(pk.n);
  for (int i = 0; i < N; ++i) {
    unpack_node(pk, X.data() + i * pk.d, w);
    states[i] = FoncState{w.sigma, w.lambda, w.A, w.Adot};
  }
  return states;
}

/// Default warm start: the feasibility path for (A, Sigma), Adot from its
/// closed-form derivative, Lambda = sym(alpha A Sigma^{-1}) which makes the
/// stationarity residual vanish wherever Adot is negligible.
inline Vector default_warm_start(const SteeringProblem& problem, double alpha,
                                 const Packing& pk, const TimeGrid& grid) {
  auto [gains, path] = model::feasibility_path(problem, grid);
  Vector X(grid.size() * pk.d);
  for (int i = 0; i < grid.size(); ++i) {
    const Matrix inv = path.sigma[i].partialPivLu().inverse();
    const Matrix lambda = symmetrize(alpha * gains.A[i] * inv);
    pack_node(pk, path.sigma[i], lambda, gains.A[i], gains.A_dot[i], X.data() + i * pk.d);
  }
  return X;
}

/// Resample a solution onto a (possibly different) grid by per-entry linear
/// interpolation in time.
inline Vector resample_warm_start(const FoncSolution& sol, const Packing& pk,
                                  const TimeGrid& grid) {
  Vector X(grid.size() * pk.d);
  const TimeGrid& src = sol.grid;
  for (int i = 0; i < grid.size(); ++i) {
    const double t = std::min(grid.t(i), src.horizon());
    const double pos = t / src.spacing();
    const int j = std::min(static_cast<int>(pos), src.size() - 2);
    const double wgt = pos - j;
    auto blend = [&](auto member) {
      return ((1.0 - wgt) * (sol.states[j].*member) + wgt * (sol.states[j + 1].*member)).eval();
    };
    pack_node(pk, blend(&FoncState::sigma), blend(&FoncState::lambda), blend(&FoncState::A),
              blend(&FoncState::A_dot), X.data() + i * pk.d);
  }
  return X;
}

}  // namespace detail

/// Time-derivative of the joint FONC state (right-hand side of the optimality system).
inline FoncState assemble_first_order_system(const SteeringProblem& problem,
                                             const FoncState& state) {
  if (!(problem.alpha > 0.0 && problem.alpha < 1.0))
    throw Error("assemble_first_order_system: requires 0 < alpha < 1");
  const detail::Packing pk(problem.n);
  detail::EvalWorkspace w(problem.n);
  Vector x(pk.d), dx(pk.d);
  detail::pack_node(pk, state.sigma, state.lambda, state.A, state.A_dot, x.data());
  detail::state_derivative(problem.alpha, pk, x.data(), dx.data(), w,
                           problem.noise_gram());
  detail::EvalWorkspace out(problem.n);
  detail::unpack_node(pk, dx.data(), out);
  return FoncState{out.sigma, out.lambda, out.A, out.Adot};
}

/// Implicit-midpoint collocation residual of a candidate trajectory.
inline Vector collocation_residual(const SteeringProblem& problem,
                                   const std::vector<FoncState>& candidate,
                                   const TimeGrid& grid) {
  if (static_cast<int>(candidate.size()) != grid.size())
    throw GridMismatch("collocation_residual: node count does not match grid");
  const detail::Packing pk(problem.n);
  detail::EvalWorkspace w(problem.n);
  const Vector X = detail::pack_states(pk, candidate);
  return detail::residual_packed(problem, problem.alpha, pk, grid, X, w);
}

/// Damped-Newton collocation solve of the first-order optimality system for 0 < alpha < 1.
inline FoncSolution solve_fonc(const SteeringProblem& problem, const SolverConfig& config,
                               const std::optional<FoncSolution>& warm_start = std::nullopt) {
  if (!(problem.alpha > 0.0 && problem.alpha < 1.0))
    throw Error("solve_fonc: requires 0 < alpha < 1 (edge cases belong to the limits module)");

  const detail::Packing pk(problem.n);
  const TimeGrid grid(config.grid_size, problem.T);
  const double alpha = problem.alpha;
  detail::EvalWorkspace w(problem.n);
  Matrix scratch(problem.n, problem.n);

  Vector X = warm_start ? detail::resample_warm_start(*warm_start, pk, grid)
                        : detail::default_warm_start(problem, alpha, pk, grid);

  Vector R = detail::residual_packed(problem, alpha, pk, grid, X, w);
  double norm = detail::scaled_norm(R, X);

  SolveStatus status = SolveStatus::NoConvergence;
  int iters = 0;
  for (; iters < config.max_newton_iters; ++iters) {
    if (norm <= config.newton_tol) {
      status = SolveStatus::Converged;
      break;
    }

    const Eigen::SparseMatrix<double> J =
        detail::jacobian_packed(problem, alpha, pk, grid, X, w);
    Eigen::SparseLU<Eigen::SparseMatrix<double>> lu(J);
    if (lu.info() != Eigen::Success) {
      status = SolveStatus::NoConvergence;
      break;
    }
    const Vector dX = lu.solve(-R);

    double step = 1.0;
    bool accepted = false;
    bool any_spd_trial = false;
    while (step >= config.min_step) {
      Vector Xtrial = X + step * dX;
      if (detail::nodes_positive_definite(pk, grid, Xtrial, scratch)) {
        any_spd_trial = true;
        bool ok = true;
        Vector Rtrial;
        try {
          Rtrial = detail::residual_packed(problem, alpha, pk, grid, Xtrial, w);
        } catch (const IllConditionedState&) {
          ok = false;
        }
        if (ok) {
          const double trial_norm = detail::scaled_norm(Rtrial, Xtrial);
          if (trial_norm < (1.0 - 1e-4 * step) * norm) {
            X = std::move(Xtrial);
            R = std::move(Rtrial);
            norm = trial_norm;
            accepted = true;
            break;
          }
        }
      }
      step *= config.backtrack_factor;
    }
    if (!accepted) {
      status = any_spd_trial ? SolveStatus::NoConvergence : SolveStatus::IndefiniteCovariance;
      break;
    }
  }
  if (iters == config.max_newton_iters && norm <= config.newton_tol)
    status = SolveStatus::Converged;

  FoncSolution sol(grid);
  sol.alpha = alpha;
  sol.states = detail::unpack_states(pk, grid.size(), X);
  sol.residual_norm = norm;
  sol.newton_iters = iters;
  sol.status = status;
  sol.M_0 = sol.states.front().lambda;
  sol.M_T = -sol.states.back().lambda;

  try {
    const auto cost = model::attention_cost(problem, sol.gains(), sol.path());
    sol.J_value = cost.total;
    sol.J_spatial = cost.spatial;
    sol.J_temporal = cost.temporal;
  } catch (const IndefiniteCovariance&) {
    sol.status = SolveStatus::IndefiniteCovariance;
  }
  return sol;
}

/// Continuation in alpha: each solve is warm-started from the previous one.
/// Per-alpha failures are recorded in the returned solutions without aborting
/// the sweep; an anchor failure aborts. An empty list falls back to the
/// configured schedule.
inline std::vector<FoncSolution> continuation_sweep(const SteeringProblem& problem,
                                                    const SolverConfig& config,
                                                    std::vector<double> alphas) {
  if (alphas.empty()) alphas = config.continuation_schedule;
  if (alphas.empty()) return {};
  for (double a : alphas)
    if (!(a > 0.0 && a < 1.0)) throw Error("continuation_sweep: alphas must lie in (0, 1)");

  std::vector<FoncSolution> out;
  out.reserve(alphas.size());

  FoncSolution anchor = solve_fonc(problem.with_alpha(alphas.front()), config);
  if (anchor.status != SolveStatus::Converged)
    throw SweepAborted("continuation_sweep: anchor solve at alpha = " +
                       std::to_string(alphas.front()) + " did not converge");
  out.push_back(anchor);

  std::size_t prev = 0;  // index of the most recent converged solve
  for (std::size_t i = 1; i < alphas.size(); ++i) {
    FoncSolution sol = solve_fonc(problem.with_alpha(alphas[i]), config, out[prev]);
    out.push_back(std::move(sol));
    if (out.back().status == SolveStatus::Converged) prev = out.size() - 1;
  }
  return out;
}

}  // namespace attnsteer::bvp
