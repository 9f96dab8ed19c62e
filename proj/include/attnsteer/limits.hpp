#pragma once

// The attention-weight edge cases.
//
// alpha = 1 (spatial): the stationarity condition collapses to A = Lambda
// Sigma, turning the FONC into a polynomial ODE in (Sigma, Lambda); the
// boundary problem is solved by single shooting in the symmetric unknown
// Lambda_0. In the zero-noise case the flow has closed forms (constant skew
// part, conjugated symmetric part).
//
// alpha = 0 (temporal): every constant feasible gain is optimal, so the
// selected solution minimizes tr(A A^T) over constant feasible controls;
// with zero noise this is a logarithmic Procrustes problem over O(n).

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <utility>
#include <vector>

#include "attnsteer/common.hpp"
#include "attnsteer/direct_opt.hpp"
#include "attnsteer/fonc_solution.hpp"
#include "attnsteer/matfun.hpp"
#include "attnsteer/model.hpp"
#include "attnsteer/types.hpp"

namespace attnsteer::limits {

/// Symmetric/antisymmetric split of a gain matrix.
struct SpatialDecomposition {
  Matrix S0;     // symmetric part
  Matrix Omega;  // antisymmetric part
  Matrix A0;     // their sum

  explicit SpatialDecomposition(const Matrix& A)
      : S0(symmetrize(A)), Omega(skew_part(A)), A0(A) {}
};

struct ConstantControl {
  Matrix A;
  double frobenius_sq;

  explicit ConstantControl(Matrix gain) : A(std::move(gain)), frobenius_sq(A.squaredNorm()) {}
};

struct ProcrustesResult {
  Matrix R;                         // orthogonal
  std::vector<double> theta_params; // group-component parameters (angle for n=2)
  double objective;                 // |log(Sigma_T^{1/2} R Sigma_0^{-1/2})|_F^2
  bool reflection;                  // which O(n) component (meaningful for n=2)
};

struct SpatialConfig {
  int grid_size = 201;
  double newton_tol = 1e-10;  // on the endpoint matching residual
  int max_newton_iters = 60;
  double min_step = 1e-4;
  std::vector<double> start_scales = {1.0, 0.5, 2.0, 0.25, 4.0, 0.1};
};

// ---------------------------------------------------------------------------
// alpha = 1

struct SpatialFlow {
  TimeGrid grid;
  std::vector<Matrix> sigma;
  std::vector<Matrix> lambda;
  std::vector<Matrix> A;  // A = Lambda Sigma along the flow
  bool diverged = false;

  explicit SpatialFlow(TimeGrid g) : grid(std::move(g)) {}
};

/// Forward integration of the alpha = 1 FONC flow from (Sigma_init, Lambda_0):
///   Sigma_dot  = Lambda Sigma^2 + Sigma^2 Lambda + B B^T
///   Lambda_dot = -(Lambda^2 Sigma + Sigma Lambda^2)
/// (A = Lambda Sigma substituted). Flags divergence when |Sigma| > 1e8.
inline SpatialFlow spatial_fonc_flow(const SteeringProblem& problem, const Matrix& lambda0,
                                     const TimeGrid& grid) {
  if (symmetry_defect(lambda0) > kSymmetryTol)
    throw SymmetryViolation("spatial_fonc_flow: Lambda_0 must be symmetric");

  const double h = grid.spacing();
  const Matrix Q = problem.noise_gram();

  auto rhs = [&Q](const Matrix& sig, const Matrix& lam) -> std::pair<Matrix, Matrix> {
    const Matrix sig2 = sig * sig;
    const Matrix lam2 = lam * lam;
    return {lam * sig2 + sig2 * lam + Q, -(lam2 * sig + sig * lam2)};
  };

  SpatialFlow flow(grid);
  flow.sigma.reserve(grid.size());
  flow.lambda.reserve(grid.size());
  flow.A.reserve(grid.size());

  Matrix sig = problem.sigma_init.value();
  Matrix lam = symmetrize(lambda0);
  flow.sigma.push_back(sig);
  flow.lambda.push_back(lam);
  flow.A.push_back(lam * sig);

  for (int i = 0; i + 1 < grid.size(); ++i) {
    const auto [ks1, kl1] = rhs(sig, lam);
    const auto [ks2, kl2] = rhs(sig + 0.5 * h * ks1, lam + 0.5 * h * kl1);
    const auto [ks3, kl3] = rhs(sig + 0.5 * h * ks2, lam + 0.5 * h * kl2);
    const auto [ks4, kl4] = rhs(sig + h * ks3, lam + h * kl3);
    sig = symmetrize(sig + (h / 6.0) * (ks1 + 2.0 * ks2 + 2.0 * ks3 + ks4));
    lam = symmetrize(lam + (h / 6.0) * (kl1 + 2.0 * kl2 + 2.0 * kl3 + kl4));
    if (!all_finite(sig) || !all_finite(lam) || sig.norm() > 1e8) {
      flow.diverged = true;
      break;
    }
    flow.sigma.push_back(sig);
    flow.lambda.push_back(lam);
    flow.A.push_back(lam * sig);
  }
  return flow;
}

namespace detail {

/// Endpoint mismatch vech(Sigma(T; Lambda_0) - target), or nullopt when the
/// flow diverges or loses definiteness.
inline std::optional<Vector> shooting_residual(const SteeringProblem& problem,
                                               const TimeGrid& grid, const Matrix& lambda0,
                                               const Matrix& target) {
  const SpatialFlow flow = spatial_fonc_flow(problem, lambda0, grid);
  if (flow.diverged) return std::nullopt;
  for (const auto& s : flow.sigma)
    if (!is_positive_definite(s)) return std::nullopt;
  return vech(flow.sigma.back() - target);
}

struct ShootOutcome {
  Matrix lambda0;
  double norm = std::numeric_limits<double>::infinity();
  int iters = 0;
  bool converged = false;
};

/// Damped Newton on the endpoint-matching map in vech(Lambda_0) coordinates.
inline ShootOutcome newton_shoot(const SteeringProblem& problem, const TimeGrid& grid,
                                 const Matrix& lambda0_init, const Matrix& target,
                                 double tol, int max_iters, double min_step) {
  const int n = problem.n;
  const int p = vech_size(n);

  ShootOutcome out;
  out.lambda0 = symmetrize(lambda0_init);
  auto res = shooting_residual(problem, grid, out.lambda0, target);
  if (!res) return out;
  out.norm = res->cwiseAbs().maxCoeff();

  for (; out.iters < max_iters && out.norm > tol; ++out.iters) {
    Matrix J(p, p);
    const Vector v0 = vech(out.lambda0);
    bool jac_ok = true;
    for (int j = 0; j < p; ++j) {
      const double eps = 1.4901161193847656e-08 * (1.0 + std::abs(v0(j)));
      Vector vp = v0;
      vp(j) += eps;
      const auto rp = shooting_residual(problem, grid, unvech(vp, n), target);
      if (!rp) {
        jac_ok = false;
        break;
      }
      J.col(j) = (*rp - *res) / eps;
    }
    if (!jac_ok) break;

    const Vector step = J.partialPivLu().solve(-*res);
    double damping = 1.0;
    bool accepted = false;
    while (damping >= min_step) {
      const Matrix trial = unvech(v0 + damping * step, n);
      const auto rt = shooting_residual(problem, grid, trial, target);
      if (rt) {
        const double tn = rt->cwiseAbs().maxCoeff();
        if (tn < (1.0 - 1e-4 * damping) * out.norm) {
          out.lambda0 = trial;
          res = rt;
          out.norm = tn;
          accepted = true;
          break;
        }
      }
      damping *= 0.5;
    }
    if (!accepted) break;
  }
  out.converged = out.norm <= tol;
  return out;
}

}  // namespace detail

/// Single shooting for the spatial case: damped Newton in the symmetric
/// unknown Lambda_0, multi-started from scaled versions of the feasibility
/// path's initial gain. A caller-supplied warm start (eg the multiplier of a
/// nearby interior-alpha solution) is tried first. When no start converges,
/// the endpoint is reached by homotopy: the target is walked from the
/// zero-control terminal covariance to Sigma_fin with Newton re-solves.
inline FoncSolution solve_spatial(const SteeringProblem& problem,
                                  const SpatialConfig& config = {},
                                  const std::optional<Matrix>& warm_start_lambda0 = std::nullopt) {
  if (problem.alpha != 1.0) throw Error("solve_spatial: requires alpha = 1");

  const int n = problem.n;
  const TimeGrid grid(config.grid_size, problem.T);
  const Matrix target_fin = problem.sigma_fin.value();

  // feasibility-path initial gain, symmetrized against Sigma_init
  const auto [feas_gains, feas_path] = model::feasibility_path(problem, grid);
  const Matrix sigma0_inv = problem.sigma_init.value().partialPivLu().inverse();
  const Matrix lambda_base = symmetrize(feas_gains.A.front() * sigma0_inv);

  std::vector<Matrix> starts;
  if (warm_start_lambda0) starts.push_back(symmetrize(*warm_start_lambda0));
  for (double scale : config.start_scales) starts.push_back(scale * lambda_base);

  detail::ShootOutcome best;
  for (const Matrix& start : starts) {
    const auto out = detail::newton_shoot(problem, grid, start, target_fin, config.newton_tol,
                                          config.max_newton_iters, config.min_step);
    if (out.norm < best.norm) best = out;
    if (best.converged) break;
  }

  if (!best.converged) {
    // homotopy in the terminal target, starting from the zero-control flow
    Matrix lambda0 = Matrix::Zero(n, n);
    const SpatialFlow zero_flow = spatial_fonc_flow(problem, lambda0, grid);
    const Matrix target0 = zero_flow.sigma.back();

    double tau = 0.0, dtau = 0.25;
    int homotopy_iters = 0;
    while (tau < 1.0 && dtau >= 1.0 / 4096.0) {
      const double tau_next = std::min(1.0, tau + dtau);
      const Matrix target = (1.0 - tau_next) * target0 + tau_next * target_fin;
      const auto out = detail::newton_shoot(problem, grid, lambda0, target, config.newton_tol,
                                            config.max_newton_iters, config.min_step);
      homotopy_iters += out.iters;
      if (out.converged) {
        lambda0 = out.lambda0;
        tau = tau_next;
        dtau = std::min(0.25, 2.0 * dtau);
      } else {
        dtau *= 0.5;
      }
    }
    if (tau >= 1.0) {
      best = detail::newton_shoot(problem, grid, lambda0, target_fin, config.newton_tol,
                                  config.max_newton_iters, config.min_step);
      best.iters += homotopy_iters;
    }
  }

  const Matrix best_lambda0 = best.lambda0;
  const double best_norm = best.norm;
  const int best_iters = best.iters;
  const bool converged = best.converged;

  const SpatialFlow flow = spatial_fonc_flow(problem, best_lambda0, grid);
  FoncSolution sol(grid);
  sol.alpha = 1.0;
  sol.states.resize(grid.size());
  const Matrix Q = problem.noise_gram();
  for (int i = 0; i < grid.size(); ++i) {
    auto& s = sol.states[i];
    s.sigma = flow.sigma[i];
    s.lambda = flow.lambda[i];
    s.A = flow.A[i];
    // Adot = Lambda_dot Sigma + Lambda Sigma_dot along the flow
    const Matrix sig2 = s.sigma * s.sigma;
    const Matrix lam2 = s.lambda * s.lambda;
    const Matrix sigma_dot = s.lambda * sig2 + sig2 * s.lambda + Q;
    const Matrix lambda_dot = -(lam2 * s.sigma + s.sigma * lam2);
    s.A_dot = lambda_dot * s.sigma + s.lambda * sigma_dot;
  }
  sol.residual_norm = best_norm;
  sol.newton_iters = best_iters;
  sol.status = converged ? SolveStatus::Converged : SolveStatus::NoConvergence;
  sol.M_0 = sol.states.front().lambda;
  sol.M_T = -sol.states.back().lambda;

  const auto cost = model::attention_cost(problem, sol.gains(), sol.path());
  sol.J_value = cost.total;
  sol.J_spatial = cost.spatial;
  sol.J_temporal = cost.temporal;
  return sol;
}

/// Zero-noise closed forms of the spatial FONC flow:
///   A_t     = e^{2 Omega t} S_0 e^{-2 Omega t} + Omega
///   Sigma_t = e^{2 Omega t} e^{A_0^T t} Sigma_0 e^{A_0 t} e^{-2 Omega t}.
inline std::pair<Matrix, Matrix> zero_noise_closed_form(const Matrix& A0, const Matrix& Sigma0,
                                                        double t) {
  const SpatialDecomposition dec(A0);
  const Matrix rot = matfun::mat_exp(2.0 * t * dec.Omega);
  const Matrix rot_inv = matfun::mat_exp(-2.0 * t * dec.Omega);
  const Matrix drift = matfun::mat_exp(t * A0);
  const Matrix A_t = rot * dec.S0 * rot_inv + dec.Omega;
  const Matrix Sigma_t = rot * drift.transpose() * Sigma0 * drift * rot_inv;
  return {A_t, Sigma_t};
}

struct SpatialInvariantReport {
  double skew_deviation;  // max |skew(A_t) - skew(A_0)|
  double trace_drift;     // max |tr A_t - tr A_0|
};

/// Checks the Prop.-11 conserved quantities along a gain trajectory.
inline SpatialInvariantReport spatial_invariants_check(const std::vector<Matrix>& A_nodes) {
  if (A_nodes.empty()) throw Error("spatial_invariants_check: empty trajectory");
  const Matrix skew0 = skew_part(A_nodes.front());
  const double trace0 = A_nodes.front().trace();
  SpatialInvariantReport rep{0.0, 0.0};
  for (const auto& A : A_nodes) {
    rep.skew_deviation = std::max(rep.skew_deviation, (skew_part(A) - skew0).norm());
    rep.trace_drift = std::max(rep.trace_drift, std::abs(A.trace() - trace0));
  }
  return rep;
}

// ---------------------------------------------------------------------------
// alpha = 0

struct TemporalConfig {
  int grid_size = 201;
  std::vector<double> penalty_schedule = {1e2, 1e4, 1e6};
  int max_iters_per_stage = 5000;
  double gradient_tol = 1e-10;
  int multistart_count = 5;
  double perturbation_scale = 0.25;
  std::uint64_t seed = 777;
  std::optional<Matrix> initial_gain;  // multi-start base; default is the
                                       // time-averaged feasibility-path gain
};

struct TemporalResult {
  ConstantControl control;
  CovariancePath path;
  double endpoint_gap;
  std::vector<direct::RunRecord> runs;
};

namespace detail {

/// Propagates the constant-gain Lyapunov flow and reports the endpoint gap.
/// Reuses the direct-transcription kernel so the temporal search shares no
/// machinery with the collocation solver.
struct ConstantGainObjective {
  direct::detail::Transcription tr;
  mutable direct::detail::Workspace ws;

  ConstantGainObjective(const SteeringProblem& problem, int grid_size)
      : tr(problem, grid_size), ws(grid_size, problem.n) {}

  bool eval(const Matrix& A, double rho, double& value, double& gap) const {
    const int nsq = tr.n * tr.n;
    std::vector<double> x(static_cast<std::size_t>(tr.N) * nsq);
    for (int i = 0; i < tr.N; ++i)
      for (int r = 0; r < tr.n; ++r)
        for (int c = 0; c < tr.n; ++c) x[i * nsq + r * tr.n + c] = A(r, c);
    double dummy;
    if (!tr.eval(x.data(), 0.0, ws, dummy, gap)) return false;
    value = A.squaredNorm() + rho * gap * gap;
    return true;
  }
};

}  // namespace detail

/// Temporal selection (vanishing-weight limit): minimize tr(A A^T) over constant
/// gains meeting the endpoint, by the same staged-penalty descent used in the
/// direct oracle, multi-started around the feasibility path's initial gain.
inline TemporalResult solve_temporal_constant(const SteeringProblem& problem,
                                              const TemporalConfig& config = {}) {
  if (problem.alpha != 0.0) throw Error("solve_temporal_constant: requires alpha = 0");

  const int n = problem.n;
  const TimeGrid grid(config.grid_size, problem.T);
  const detail::ConstantGainObjective obj(problem, config.grid_size);

  Matrix base;
  if (config.initial_gain) {
    base = *config.initial_gain;
  } else {
    const auto [feas_gains, feas_path] = model::feasibility_path(problem, grid);
    base = Matrix::Zero(n, n);
    for (const auto& A : feas_gains.A) base += A;
    base /= static_cast<double>(feas_gains.A.size());  // time-average gain
  }

  struct Run {
    Matrix A;
    direct::RunRecord record;
  };
  std::vector<Run> runs;

  for (int r = 0; r < config.multistart_count; ++r) {
    const std::uint64_t run_seed = config.seed + static_cast<std::uint64_t>(r);
    Matrix A = base;
    if (r > 0) {
      SplitMix64 rng(run_seed);
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) A(i, j) += config.perturbation_scale * rng.normal();
    }

    double fx, gap;
    if (!obj.eval(A, config.penalty_schedule.front(), fx, gap)) A = base;

    int iters = 0;
    for (double rho : config.penalty_schedule) {
      obj.eval(A, rho, fx, gap);
      Matrix grad(n, n), A_prev, grad_prev;
      auto compute_grad = [&](const Matrix& at, Matrix& g) {
        double vp, vm, gp;
        for (int i = 0; i < n; ++i)
          for (int j = 0; j < n; ++j) {
            const double step = 1e-6 * (1.0 + std::abs(at(i, j)));
            Matrix t = at;
            t(i, j) = at(i, j) + step;
            const bool okp = obj.eval(t, rho, vp, gp);
            t(i, j) = at(i, j) - step;
            const bool okm = obj.eval(t, rho, vm, gp);
            g(i, j) = (okp && okm) ? (vp - vm) / (2.0 * step)
                                   : std::numeric_limits<double>::quiet_NaN();
          }
      };
      compute_grad(A, grad);

      for (; iters < config.max_iters_per_stage; ++iters) {
        const double gnorm = grad.cwiseAbs().maxCoeff();
        if (!(gnorm > config.gradient_tol)) break;

        double step;
        if (A_prev.size() == 0) {
          step = 1.0 / (1.0 + gnorm);
        } else {
          const Matrix s = A - A_prev;
          const Matrix y = grad - grad_prev;
          const double sy = (s.array() * y.array()).sum();
          step = (sy > 1e-300) ? s.squaredNorm() / sy : 1.0 / (1.0 + gnorm);
          step = std::clamp(step, 1e-12, 1e6);
        }

        const double gsq = grad.squaredNorm();
        bool accepted = false;
        while (step * std::sqrt(gsq) > 1e-16 * (1.0 + A.norm())) {
          const Matrix At = A - step * grad;
          double ft, gapt;
          if (obj.eval(At, rho, ft, gapt) && ft <= fx - 1e-4 * step * gsq) {
            A_prev = A;
            grad_prev = grad;
            A = At;
            fx = ft;
            gap = gapt;
            accepted = true;
            break;
          }
          step *= 0.5;
        }
        if (!accepted) break;
        compute_grad(A, grad);
      }
    }

    double value_unused;
    obj.eval(A, 0.0, value_unused, gap);
    const bool feasible = gap <= 1e-4 * problem.sigma_fin.value().norm();
    runs.push_back(Run{A, direct::RunRecord{run_seed, A.squaredNorm(), gap, feasible, iters}});
  }

  const Run* best = nullptr;
  for (const auto& r : runs) {
    if (!r.record.feasible) continue;
    if (!best || r.record.J < best->record.J ||
        (r.record.J == best->record.J && r.record.seed < best->record.seed))
      best = &r;
  }
  std::vector<direct::RunRecord> records;
  for (const auto& r : runs) records.push_back(r.record);
  if (!best)
    throw InfeasibleWithinBudget(
        "solve_temporal_constant: no constant feasible control found within budget "
        "(the constant-feasible set may be empty for this instance)");

  std::vector<Matrix> A_nodes(grid.size(), best->A),
      Adot_nodes(grid.size(), Matrix::Zero(n, n));
  GainTrajectory gains(grid, std::move(A_nodes), std::move(Adot_nodes));
  CovariancePath path = model::propagate_lyapunov(problem, gains);
  return TemporalResult{ConstantControl(best->A), std::move(path), best->record.endpoint_gap,
                        std::move(records)};
}

// ---------------------------------------------------------------------------
// zero-noise Procrustes parametrization of the temporal selection

struct ProcrustesConfig {
  double grid_resolution = 1e-3;    // angle step for the n = 2 exhaustive scan
  int refine_iters = 60;            // golden-section steps around the best cell
  int multistart_count = 8;         // for the n >= 3 manifold descent
  int max_iters = 400;
  double gradient_tol = 1e-12;
  std::uint64_t seed = 99;
};

namespace detail {

inline std::optional<double> log_objective(const Matrix& sqrtT, const Matrix& inv_sqrt0,
                                           const Matrix& R) {
  const auto L = matfun::real_log(sqrtT * R * inv_sqrt0);
  if (!L) return std::nullopt;
  return L->squaredNorm();
}

inline Matrix rotation2(double theta) {
  Matrix R(2, 2);
  R << std::cos(theta), -std::sin(theta), std::sin(theta), std::cos(theta);
  return R;
}

inline Matrix component2(double theta, bool reflection) {
  Matrix R = rotation2(theta);
  if (reflection) R.col(1) *= -1.0;
  return R;
}

}  // namespace detail

namespace detail {

/// n = 2 reference path: exhaustive scan over both O(2) components at the
/// configured angle resolution, then golden-section refinement around the
/// best cell. Angles whose argument has no real logarithm are skipped.
inline std::optional<ProcrustesResult> procrustes_grid_2d(const Matrix& sqrtT,
                                                          const Matrix& inv_sqrt0,
                                                          const ProcrustesConfig& config) {
  std::optional<ProcrustesResult> best;
  const double two_pi = 2.0 * M_PI;
  for (bool reflection : {false, true}) {
    double comp_best = std::numeric_limits<double>::infinity();
    double comp_theta = 0.0;
    bool found = false;
    const int cells = static_cast<int>(std::ceil(two_pi / config.grid_resolution));
    for (int k = 0; k < cells; ++k) {
      const double theta = k * config.grid_resolution;
      const auto obj = log_objective(sqrtT, inv_sqrt0, component2(theta, reflection));
      if (obj && *obj < comp_best) {
        comp_best = *obj;
        comp_theta = theta;
        found = true;
      }
    }
    if (!found) continue;  // whole component blocked by the branch cut

    // golden-section refinement around the best cell; the objective is
    // smooth there, so unimodality holds at cell scale
    const double gr = 0.5 * (std::sqrt(5.0) - 1.0);
    double lo = comp_theta - config.grid_resolution;
    double hi = comp_theta + config.grid_resolution;
    double x1 = hi - gr * (hi - lo), x2 = lo + gr * (hi - lo);
    auto value_at = [&](double th) {
      const auto o = log_objective(sqrtT, inv_sqrt0, component2(th, reflection));
      return o ? *o : std::numeric_limits<double>::infinity();
    };
    double f1 = value_at(x1), f2 = value_at(x2);
    for (int it = 0; it < config.refine_iters; ++it) {
      if (f1 < f2) {
        hi = x2;
        x2 = x1;
        f2 = f1;
        x1 = hi - gr * (hi - lo);
        f1 = value_at(x1);
      } else {
        lo = x1;
        x1 = x2;
        f1 = f2;
        x2 = lo + gr * (hi - lo);
        f2 = value_at(x2);
      }
    }
    const double theta_ref = (f1 < f2) ? x1 : x2;
    const double obj_ref = std::min(f1, f2);
    double theta_fin = (obj_ref < comp_best) ? theta_ref : comp_theta;
    const double obj_fin = std::min(obj_ref, comp_best);
    if (theta_fin < 0.0) theta_fin += two_pi;

    if (!best || obj_fin < best->objective)
      best = ProcrustesResult{component2(theta_fin, reflection), {theta_fin}, obj_fin,
                              reflection};
  }
  return best;
}

/// Projected gradient descent on O(n): R <- R exp(-eta X) with X skew,
/// finite-difference tangent gradients, multi-started over both components.
/// Works for any n; at n = 2 it cross-validates the grid scan.
inline std::optional<ProcrustesResult> procrustes_manifold(const Matrix& sqrtT,
                                                           const Matrix& inv_sqrt0, int n,
                                                           const ProcrustesConfig& config) {
  const int q = n * (n - 1) / 2;
  std::optional<ProcrustesResult> best;
  SplitMix64 rng(config.seed);
  for (int start = 0; start < config.multistart_count; ++start) {
    Matrix G(n, n);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) G(i, j) = rng.normal();
    Eigen::HouseholderQR<Matrix> qr(G);
    Matrix R = qr.householderQ();
    if (start % 2 == 1) R.col(0) *= -1.0;  // alternate components

    auto value_at = [&](const Matrix& rot) {
      const auto o = log_objective(sqrtT, inv_sqrt0, rot);
      return o ? *o : std::numeric_limits<double>::infinity();
    };
    double f = value_at(R);
    if (!std::isfinite(f)) continue;

    for (int it = 0; it < config.max_iters; ++it) {
      Vector g(q);
      int idx = 0;
      for (int r = 0; r < n; ++r)
        for (int c = r + 1; c < n; ++c, ++idx) {
          Matrix E = Matrix::Zero(n, n);
          E(r, c) = 1.0;
          E(c, r) = -1.0;
          const double eps = 1e-6;
          const double fp = value_at(R * matfun::mat_exp(eps * E));
          const double fm = value_at(R * matfun::mat_exp(-eps * E));
          g(idx) =
              (std::isfinite(fp) && std::isfinite(fm)) ? (fp - fm) / (2.0 * eps) : 0.0;
        }
      if (g.cwiseAbs().maxCoeff() <= config.gradient_tol) break;

      Matrix X = Matrix::Zero(n, n);
      idx = 0;
      for (int r = 0; r < n; ++r)
        for (int c = r + 1; c < n; ++c, ++idx) {
          X(r, c) = g(idx);
          X(c, r) = -g(idx);
        }
      double eta = 1.0 / (1.0 + g.norm());
      bool accepted = false;
      while (eta > 1e-14) {
        const Matrix Rt = R * matfun::mat_exp(-eta * X);
        const double ft = value_at(Rt);
        if (ft < f - 1e-4 * eta * g.squaredNorm()) {
          R = Rt;
          f = ft;
          accepted = true;
          break;
        }
        eta *= 0.5;
      }
      if (!accepted) break;
    }

    if (std::isfinite(f) && (!best || f < best->objective)) {
      // parameters: strictly-upper entries of log R when it exists
      std::vector<double> params;
      if (const auto LR = matfun::real_log(R)) {
        for (int r = 0; r < n; ++r)
          for (int c = r + 1; c < n; ++c) params.push_back((*LR)(r, c));
      }
      best = ProcrustesResult{R, params, f, R.determinant() < 0.0};
    }
  }
  return best;
}

inline std::pair<ProcrustesResult, ConstantControl> finish_procrustes(
    const std::optional<ProcrustesResult>& best, const Matrix& sqrtT, const Matrix& inv_sqrt0,
    double T, const char* who) {
  if (!best)
    throw NoRealLogAnywhere(std::string(who) +
                            ": no orthogonal factor admits a real logarithm");
  const Matrix L = *matfun::real_log(sqrtT * best->R * inv_sqrt0);
  return {*best, ConstantControl(L / T)};
}

}  // namespace detail

/// Zero-noise temporal selection as a logarithmic Procrustes problem over
/// O(n): exhaustive scan + refinement at n = 2 (exact at desk scale, doubling
/// as the oracle), manifold gradient descent for n >= 3.
inline std::pair<ProcrustesResult, ConstantControl> solve_procrustes_zero_noise(
    const Matrix& Sigma0, const Matrix& SigmaT, double T, const ProcrustesConfig& config = {}) {
  const int n = static_cast<int>(Sigma0.rows());
  const Matrix sqrtT = matfun::spd_sqrt(SigmaT);
  const Matrix inv_sqrt0 = matfun::spd_pow(Sigma0, -0.5);
  const auto best = (n == 2) ? detail::procrustes_grid_2d(sqrtT, inv_sqrt0, config)
                             : detail::procrustes_manifold(sqrtT, inv_sqrt0, n, config);
  return detail::finish_procrustes(best, sqrtT, inv_sqrt0, T, "solve_procrustes_zero_noise");
}

/// The manifold-descent route exposed at every dimension (at n = 2 it is the
/// independent cross-check of the grid scan).
inline std::pair<ProcrustesResult, ConstantControl> solve_procrustes_manifold(
    const Matrix& Sigma0, const Matrix& SigmaT, double T, const ProcrustesConfig& config = {}) {
  const int n = static_cast<int>(Sigma0.rows());
  const Matrix sqrtT = matfun::spd_sqrt(SigmaT);
  const Matrix inv_sqrt0 = matfun::spd_pow(Sigma0, -0.5);
  const auto best = detail::procrustes_manifold(sqrtT, inv_sqrt0, n, config);
  return detail::finish_procrustes(best, sqrtT, inv_sqrt0, T, "solve_procrustes_manifold");
}

/// Residual report for the alpha = 0 adjoint/stationarity conditions at a
/// constant gain:
///   -Lambda_dot = A^T Lambda + Lambda A
///   2 T A + int_0^T (Lambda Sigma + Sigma Lambda) dt = 0.
/// Lambda_T is the symmetric unknown; the map Lambda_T -> integral is linear,
/// so the ansatz is fitted by (square) least squares before reporting the
/// stationarity residual.
struct TemporalFoncReport {
  double stationarity_residual;  // Frobenius norm of the fitted condition
  Matrix lambda_T;               // fitted terminal multiplier
};

inline TemporalFoncReport temporal_fonc_check(const Matrix& A, const CovariancePath& path,
                                              double T) {
  const int n = static_cast<int>(A.rows());
  const int p = vech_size(n);
  const TimeGrid& grid = path.grid;
  const int N = grid.size();
  const double h = grid.spacing();

  // Lambda_t = Phi_t^T Lambda_T Phi_t with Phi_t = e^{A (T - t)} solves the
  // adjoint equation; precompute the propagators once.
  std::vector<Matrix> phi(N);
  for (int i = 0; i < N; ++i) phi[i] = matfun::mat_exp((T - grid.t(i)) * A);

  // Full stationarity: 2 T A + 2 int Lambda_t Sigma_t dt = 0 over symmetric
  // Lambda_T; its symmetric part is the adjoint-remark identity
  // 2 T A + int (Lambda Sigma + Sigma Lambda) dt = 0, and its skew part must
  // vanish as well. Fitting the n^2 equations by least squares over the
  // n(n+1)/2 unknowns makes the residual a genuine optimality diagnostic.
  Matrix system(n * n, p);
  int col = 0;
  for (int r = 0; r < n; ++r)
    for (int c = 0; c <= r; ++c, ++col) {
      Matrix E = Matrix::Zero(n, n);
      E(r, c) = 1.0;
      E(c, r) = 1.0;
      Matrix integral = Matrix::Zero(n, n);
      for (int i = 0; i < N; ++i) {
        const double w = (i == 0 || i == N - 1) ? 0.5 * h : h;
        integral += (2.0 * w) * (phi[i].transpose() * E * phi[i]) * path.sigma[i];
      }
      system.col(col) = Eigen::Map<Vector>(integral.data(), n * n);
    }

  Matrix tgt = (-2.0 * T) * A;
  const Vector target = Eigen::Map<Vector>(tgt.data(), n * n);
  const Vector solved = system.colPivHouseholderQr().solve(target);
  const double residual = (system * solved - target).norm();
  return TemporalFoncReport{residual, unvech(solved, n)};
}

}  // namespace attnsteer::limits
