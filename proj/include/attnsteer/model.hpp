#pragma once

// Problem-level operations: Lyapunov propagation, the attention functional,
// the always-feasible reference path, uniform spectral bounds, and the
// finite-difference residuals of the first-order necessary conditions.

#include <cmath>
#include <optional>
#include <utility>
#include <vector>

#include "attnsteer/common.hpp"
#include "attnsteer/fonc_solution.hpp"
#include "attnsteer/matfun.hpp"
#include "attnsteer/types.hpp"

namespace attnsteer::model {

/// Integrates the differential Lyapunov equation
///   dSigma/dt = A Sigma + Sigma A^T + B B^T
/// by one RK4 step per grid interval, with the gain interpolated linearly.
/// Nodes are symmetrized after every step; positive definiteness is enforced
/// at every node.
inline CovariancePath propagate_lyapunov(const SteeringProblem& problem,
                                         const GainTrajectory& gains) {
  if (std::abs(gains.grid.horizon() - problem.T) > 1e-12 * problem.T)
    throw GridMismatch("propagate_lyapunov: gain horizon differs from problem horizon");

  const int N = gains.grid.size();
  const double h = gains.grid.spacing();
  const Matrix Q = problem.noise_gram();

  auto rhs = [&](const Matrix& sigma, double t) -> Matrix {
    const Matrix A = gains.gain_at(t);
    return A * sigma + sigma * A.transpose() + Q;
  };

  std::vector<Matrix> nodes;
  nodes.reserve(N);
  nodes.push_back(problem.sigma_init.value());
  Matrix sigma = problem.sigma_init.value();
  for (int i = 0; i + 1 < N; ++i) {
    const double t = gains.grid.t(i);
    const Matrix k1 = rhs(sigma, t);
    const Matrix k2 = rhs(sigma + 0.5 * h * k1, t + 0.5 * h);
    const Matrix k3 = rhs(sigma + 0.5 * h * k2, t + 0.5 * h);
    const Matrix k4 = rhs(sigma + h * k3, t + h);
    sigma = symmetrize(sigma + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4));
    if (!is_positive_definite(sigma)) throw IndefiniteCovariance(i + 1);
    nodes.push_back(sigma);
  }
  return CovariancePath(gains.grid, std::move(nodes));
}

struct AttentionCost {
  double total;
  double spatial;   // integral of tr(A A^T)
  double temporal;  // integral of tr(Adot Sigma Adot^T)
};

/// Composite-trapezoid evaluation of the attention functional
///   J_alpha = alpha * int tr(A A^T) + (1 - alpha) * int tr(Adot Sigma Adot^T).
inline AttentionCost attention_cost(const SteeringProblem& problem, const GainTrajectory& gains,
                                    const CovariancePath& path) {
  if (!gains.grid.same_as(path.grid))
    throw GridMismatch("attention_cost: gain and covariance grids differ");
  const int N = gains.grid.size();
  const double h = gains.grid.spacing();

  double spatial = 0.0, temporal = 0.0;
  for (int i = 0; i < N; ++i) {
    const double w = (i == 0 || i == N - 1) ? 0.5 * h : h;
    spatial += w * gains.A[i].squaredNorm();
    temporal += w * (gains.A_dot[i] * path.sigma[i] * gains.A_dot[i].transpose()).trace();
  }
  return AttentionCost{problem.alpha * spatial + (1.0 - problem.alpha) * temporal, spatial,
                       temporal};
}

/// The always-feasible reference pair: covariance linearly interpolated
/// between the endpoints (SPD by convexity) and the gain that realizes it,
///   A_t = (1/2) (Sigma_dot - B B^T) Sigma_t^{-1}.
inline std::pair<GainTrajectory, CovariancePath> feasibility_path(const SteeringProblem& problem,
                                                                  const TimeGrid& grid) {
  const int N = grid.size();
  const Matrix Q = problem.noise_gram();
  const Matrix sigma_dot = (problem.sigma_fin.value() - problem.sigma_init.value()) / problem.T;

  std::vector<Matrix> sigma(N), A(N), A_dot(N);
  for (int i = 0; i < N; ++i) {
    const double w = grid.t(i) / problem.T;
    sigma[i] = (1.0 - w) * problem.sigma_init.value() + w * problem.sigma_fin.value();
    const Matrix inv = sigma[i].partialPivLu().inverse();
    A[i] = 0.5 * (sigma_dot - Q) * inv;
    A_dot[i] = -0.5 * (sigma_dot - Q) * inv * sigma_dot * inv;
  }
  return {GainTrajectory(grid, std::move(A), std::move(A_dot)),
          CovariancePath(grid, std::move(sigma))};
}

struct SpectralBounds {
  double c_lower;
  double C_upper;
  double attention_value_used;
};

/// Uniform spectral bounds c I <= Sigma_t <= C I valid for any feasible pair
/// whose attention value is admissible_J:
///   c = exp(-2 sqrt(T J / alpha)) lambda_min(Sigma_init)
///   C = exp(+2 sqrt(T J / alpha)) (lambda_max(Sigma_init) + T lambda_max(B B^T)).
/// For alpha = 1 the exponent is sqrt(T J). Unavailable at alpha = 0.
inline SpectralBounds spectral_bounds(const SteeringProblem& problem, double admissible_J) {
  if (problem.alpha <= 0.0)
    throw BoundsUnavailable("spectral_bounds: constants are alpha-normalized; alpha must be > 0");
  if (admissible_J < 0.0) throw Error("spectral_bounds: attention value must be nonnegative");

  const auto init_eig = matfun::sym_eig(problem.sigma_init.value());
  const double lam_min = init_eig.eigenvalues.minCoeff();
  const double lam_max = init_eig.eigenvalues.maxCoeff();
  const Matrix Q = problem.noise_gram();
  const double q_max = matfun::sym_eig(Q).eigenvalues.maxCoeff();

  const double expo = 2.0 * std::sqrt(problem.T * admissible_J / problem.alpha);
  return SpectralBounds{std::exp(-expo) * lam_min,
                        std::exp(expo) * (lam_max + problem.T * q_max), admissible_J};
}

/// Overload using the feasibility-path cost as the admissible value.
inline SpectralBounds spectral_bounds(const SteeringProblem& problem) {
  const TimeGrid grid(201, problem.T);
  auto [gains, path] = feasibility_path(problem, grid);
  const AttentionCost cost = attention_cost(problem, gains, path);
  return spectral_bounds(problem, cost.total);
}

/// Max-norm residual report for the first-order necessary conditions, evaluated with centered
/// differences at interior nodes. Truncation-limited at O(h^2) -- this is an
/// implementation-independent diagnostic, not the solver's own residual.
struct FoncResiduals {
  double primal_max;
  double adjoint_max;
  double stationarity_max;
  double adot_start;        // |Adot_0|, boundary condition
  double adot_end;          // |Adot_T|, boundary condition
  double endpoint_init_gap; // max |Sigma_0 - Sigma_init|
  double endpoint_fin_gap;  // max |Sigma_N - Sigma_fin|
};

inline FoncResiduals fonc_residuals(const SteeringProblem& problem, const FoncSolution& sol) {
  const int N = sol.grid.size();
  const double h = sol.grid.spacing();
  const double alpha = sol.alpha;
  const Matrix Q = problem.noise_gram();

  FoncResiduals r{0, 0, 0, 0, 0, 0, 0};
  for (int i = 1; i + 1 < N; ++i) {
    const FoncState& s = sol.states[i];
    const FoncState& prev = sol.states[i - 1];
    const FoncState& next = sol.states[i + 1];

    const Matrix sigma_dot = (next.sigma - prev.sigma) / (2.0 * h);
    const Matrix lambda_dot = (next.lambda - prev.lambda) / (2.0 * h);
    const Matrix prod_dot =
        (next.A_dot * next.sigma - prev.A_dot * prev.sigma) / (2.0 * h);

    const Matrix primal = sigma_dot - (s.A * s.sigma + s.sigma * s.A.transpose() + Q);
    const Matrix adjoint = lambda_dot + s.lambda * s.A + s.A.transpose() * s.lambda -
                           (1.0 - alpha) * s.A_dot.transpose() * s.A_dot;
    const Matrix stationarity =
        s.lambda * s.sigma - alpha * s.A + (1.0 - alpha) * prod_dot;

    r.primal_max = std::max(r.primal_max, primal.cwiseAbs().maxCoeff());
    r.adjoint_max = std::max(r.adjoint_max, adjoint.cwiseAbs().maxCoeff());
    r.stationarity_max = std::max(r.stationarity_max, stationarity.cwiseAbs().maxCoeff());
  }
  r.adot_start = sol.states.front().A_dot.cwiseAbs().maxCoeff();
  r.adot_end = sol.states.back().A_dot.cwiseAbs().maxCoeff();
  r.endpoint_init_gap =
      (sol.states.front().sigma - problem.sigma_init.value()).cwiseAbs().maxCoeff();
  r.endpoint_fin_gap =
      (sol.states.back().sigma - problem.sigma_fin.value()).cwiseAbs().maxCoeff();
  return r;
}

}  // namespace attnsteer::model
