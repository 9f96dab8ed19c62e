#pragma once

// Independent oracle for the FONC solver: minimize the discretized attention
// functional directly over node gains (single shooting through the Lyapunov
// equation) with a staged endpoint penalty, monotone gradient descent with
// adaptive (Barzilai-Borwein) trial steps, finite-difference gradients, and
// seeded multi-start. Deliberately shares no adjoint or collocation code with
// the BVP solver.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <utility>
#include <vector>

#include "attnsteer/common.hpp"
#include "attnsteer/model.hpp"
#include "attnsteer/types.hpp"

namespace attnsteer::direct {

struct DirectConfig {
  int grid_size = 41;  // coarse by default: FD gradients make fine grids costly
  std::vector<double> penalty_schedule = {1e2, 1e4, 1e6};
  int max_iters_per_stage = 5000;
  double gradient_tol = 1e-8;
  int multistart_count = 5;
  double perturbation_scale = 0.2;
  std::uint64_t seed = 12345;  // base seed; run k perturbs with seed + k
};

struct RunRecord {
  std::uint64_t seed;
  double J;             // unpenalized attention value at the final iterate
  double endpoint_gap;  // Frobenius gap at the final time
  bool feasible;        // gap <= 1e-4 * |Sigma_fin|_F
  int total_iters;
};

struct DirectResult {
  GainTrajectory gains;
  double J;
  double endpoint_gap;
  std::vector<RunRecord> runs;
};

namespace detail {

// Flat row-major kernels; the decision vector is the node gains only,
// node-major. Everything here is allocation-free per evaluation.

inline void lyap_rhs(int n, const double* A, const double* S, const double* Q, double* F) {
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      double acc = Q[i * n + j];
      for (int k = 0; k < n; ++k)
        acc += A[i * n + k] * S[k * n + j] + S[i * n + k] * A[j * n + k];
      F[i * n + j] = acc;
    }
}

inline bool cholesky_pd(int n, const double* S, double* L) {
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j <= i; ++j) {
      double acc = S[i * n + j];
      for (int k = 0; k < j; ++k) acc -= L[i * n + k] * L[j * n + k];
      if (i == j) {
        if (!(acc > 0.0)) return false;
        L[i * n + i] = std::sqrt(acc);
      } else {
        L[i * n + j] = acc / L[j * n + j];
      }
    }
  }
  return true;
}

struct Workspace {
  std::vector<double> adot;   // N * n^2
  std::vector<double> sigma;  // N * n^2
  std::vector<double> amid, k1, k2, k3, k4, stage, chol, prod;

  Workspace(int N, int n)
      : adot(static_cast<std::size_t>(N) * n * n), sigma(adot.size()), amid(n * n), k1(n * n),
        k2(n * n), k3(n * n), k4(n * n), stage(n * n), chol(n * n), prod(n * n) {}
};

struct Transcription {
  int n, N;
  double h, T, alpha;
  std::vector<double> Q, sigma0, sigmaT;
  double sigmaT_norm;

  Transcription(const SteeringProblem& problem, int grid_size)
      : n(problem.n), N(grid_size), h(problem.T / (grid_size - 1)), T(problem.T),
        alpha(problem.alpha), Q(n * n), sigma0(n * n), sigmaT(n * n) {
    const Matrix Qm = problem.noise_gram();
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) {
        Q[i * n + j] = Qm(i, j);
        sigma0[i * n + j] = problem.sigma_init(i, j);
        sigmaT[i * n + j] = problem.sigma_fin(i, j);
      }
    sigmaT_norm = problem.sigma_fin.value().norm();
  }

  int vars() const { return N * n * n; }

  /// Penalized cost of the node-gain vector x. Returns false (with the first
  /// bad node in *bad_node) if the propagated covariance loses positive
  /// definiteness.
  bool eval(const double* x, double rho, Workspace& ws, double& value, double& gap,
            int* bad_node = nullptr) const {
    const int nsq = n * n;

    // finite differences of the decision gains
    for (int k = 0; k < nsq; ++k) {
      ws.adot[k] = (x[nsq + k] - x[k]) / h;
      ws.adot[(N - 1) * nsq + k] = (x[(N - 1) * nsq + k] - x[(N - 2) * nsq + k]) / h;
    }
    for (int i = 1; i + 1 < N; ++i)
      for (int k = 0; k < nsq; ++k)
        ws.adot[i * nsq + k] = (x[(i + 1) * nsq + k] - x[(i - 1) * nsq + k]) / (2.0 * h);

    // RK4 propagation of the Lyapunov equation
    std::copy(sigma0.begin(), sigma0.end(), ws.sigma.begin());
    for (int i = 0; i + 1 < N; ++i) {
      const double* Ai = x + i * nsq;
      const double* Aj = x + (i + 1) * nsq;
      const double* S = ws.sigma.data() + i * nsq;
      double* Snext = ws.sigma.data() + (i + 1) * nsq;
      for (int k = 0; k < nsq; ++k) ws.amid[k] = 0.5 * (Ai[k] + Aj[k]);

      lyap_rhs(n, Ai, S, Q.data(), ws.k1.data());
      for (int k = 0; k < nsq; ++k) ws.stage[k] = S[k] + 0.5 * h * ws.k1[k];
      lyap_rhs(n, ws.amid.data(), ws.stage.data(), Q.data(), ws.k2.data());
      for (int k = 0; k < nsq; ++k) ws.stage[k] = S[k] + 0.5 * h * ws.k2[k];
      lyap_rhs(n, ws.amid.data(), ws.stage.data(), Q.data(), ws.k3.data());
      for (int k = 0; k < nsq; ++k) ws.stage[k] = S[k] + h * ws.k3[k];
      lyap_rhs(n, Aj, ws.stage.data(), Q.data(), ws.k4.data());

      for (int k = 0; k < nsq; ++k)
        Snext[k] = S[k] + (h / 6.0) * (ws.k1[k] + 2.0 * ws.k2[k] + 2.0 * ws.k3[k] + ws.k4[k]);
      for (int r = 0; r < n; ++r)
        for (int c = 0; c < r; ++c) {
          const double avg = 0.5 * (Snext[r * n + c] + Snext[c * n + r]);
          Snext[r * n + c] = avg;
          Snext[c * n + r] = avg;
        }
      if (!cholesky_pd(n, Snext, ws.chol.data())) {
        if (bad_node) *bad_node = i + 1;
        return false;
      }
    }

    // trapezoid quadrature of the attention functional
    double spatial = 0.0, temporal = 0.0;
    for (int i = 0; i < N; ++i) {
      const double w = (i == 0 || i == N - 1) ? 0.5 * h : h;
      const double* Ai = x + i * nsq;
      const double* Di = ws.adot.data() + i * nsq;
      const double* Si = ws.sigma.data() + i * nsq;
      double sp = 0.0;
      for (int k = 0; k < nsq; ++k) sp += Ai[k] * Ai[k];
      // tr(D S D^T) = sum_ij (D S)_ij D_ij
      double tp = 0.0;
      for (int r = 0; r < n; ++r)
        for (int c = 0; c < n; ++c) {
          double acc = 0.0;
          for (int k = 0; k < n; ++k) acc += Di[r * n + k] * Si[k * n + c];
          tp += acc * Di[r * n + c];
        }
      spatial += w * sp;
      temporal += w * tp;
    }

    double gap_sq = 0.0;
    const double* ST = ws.sigma.data() + (N - 1) * nsq;
    for (int k = 0; k < nsq; ++k) {
      const double dminus = ST[k] - sigmaT[k];
      gap_sq += dminus * dminus;
    }
    gap = std::sqrt(gap_sq);
    value = alpha * spatial + (1.0 - alpha) * temporal + rho * gap_sq;
    return true;
  }

  /// Central finite-difference gradient, step 1e-6 * (1 + |entry|). Entries
  /// are independent, so evaluation parallelizes deterministically.
  void fd_gradient(const double* x, double rho, Vector& grad) const {
    const int m = vars();
    grad.resize(m);
    std::vector<double> xs(x, x + m);
    parallel_for(0, (m + 63) / 64, [&](int chunk) {
      Workspace ws(N, n);
      std::vector<double> xl(xs);
      double vp, vm, gap;
      const int lo = chunk * 64, hi = std::min(m, lo + 64);
      for (int j = lo; j < hi; ++j) {
        const double step = 1e-6 * (1.0 + std::abs(xl[j]));
        const double saved = xl[j];
        xl[j] = saved + step;
        const bool okp = eval(xl.data(), rho, ws, vp, gap);
        xl[j] = saved - step;
        const bool okm = eval(xl.data(), rho, ws, vm, gap);
        xl[j] = saved;
        grad(j) = (okp && okm) ? (vp - vm) / (2.0 * step)
                               : std::numeric_limits<double>::quiet_NaN();
      }
    });
  }

  Vector flatten(const GainTrajectory& gains) const {
    Vector x(vars());
    const int nsq = n * n;
    for (int i = 0; i < N; ++i)
      for (int r = 0; r < n; ++r)
        for (int c = 0; c < n; ++c) x(i * nsq + r * n + c) = gains.A[i](r, c);
    return x;
  }

  GainTrajectory lift(const Vector& x, const TimeGrid& grid) const {
    const int nsq = n * n;
    std::vector<Matrix> A(N), A_dot(N);
    for (int i = 0; i < N; ++i) {
      A[i].resize(n, n);
      for (int r = 0; r < n; ++r)
        for (int c = 0; c < n; ++c) A[i](r, c) = x(i * nsq + r * n + c);
    }
    A_dot[0] = (A[1] - A[0]) / h;
    A_dot[N - 1] = (A[N - 1] - A[N - 2]) / h;
    for (int i = 1; i + 1 < N; ++i) A_dot[i] = (A[i + 1] - A[i - 1]) / (2.0 * h);
    return GainTrajectory(grid, std::move(A), std::move(A_dot));
  }
};

struct StageOutcome {
  double value;
  double gap;
  int iters;
};

/// Monotone descent: Barzilai-Borwein trial step safeguarded by Armijo
/// backtracking; infeasible trials are rejected like ascent steps.
inline StageOutcome descend_stage(const Transcription& tr, Vector& x, double rho,
                                  int max_iters, double gtol, Workspace& ws) {
  double fx, gap;
  if (!tr.eval(x.data(), rho, ws, fx, gap))
    throw IndefiniteCovariance(0);  // start must be feasible; callers guarantee it

  Vector grad, grad_prev, x_prev;
  tr.fd_gradient(x.data(), rho, grad);

  int it = 0;
  for (; it < max_iters; ++it) {
    const double gnorm = grad.cwiseAbs().maxCoeff();
    if (!(gnorm > gtol)) break;

    double step;
    if (it == 0 || x_prev.size() == 0) {
      step = 1.0 / (1.0 + gnorm);
    } else {
      const Vector s = x - x_prev;
      const Vector y = grad - grad_prev;
      const double sy = s.dot(y);
      step = (sy > 1e-300) ? s.squaredNorm() / sy : 1.0 / (1.0 + gnorm);
      step = std::clamp(step, 1e-12, 1e6);
    }

    const double gsq = grad.squaredNorm();
    bool accepted = false;
    Vector xt(x.size());
    while (step * std::sqrt(gsq) > 1e-16 * (1.0 + x.norm())) {
      xt = x - step * grad;
      double ft, gapt;
      if (tr.eval(xt.data(), rho, ws, ft, gapt) && ft <= fx - 1e-4 * step * gsq) {
        x_prev = x;
        grad_prev = grad;
        x.swap(xt);
        fx = ft;
        gap = gapt;
        accepted = true;
        break;
      }
      step *= 0.5;
    }
    if (!accepted) break;  // line search stagnated at this stage
    tr.fd_gradient(x.data(), rho, grad);
  }
  return StageOutcome{fx, gap, it};
}

}  // namespace detail

/// Penalized objective J_alpha + rho * |Sigma_T - Sigma_fin|_F^2 together with
/// the endpoint gap. The gain derivative is rebuilt by finite differences of
/// the node gains, matching the oracle's decision variables.
inline std::pair<double, double> penalized_cost(const SteeringProblem& problem,
                                                const GainTrajectory& gains, double rho) {
  if (std::abs(gains.grid.horizon() - problem.T) > 1e-12 * problem.T)
    throw GridMismatch("penalized_cost: gain horizon differs from problem horizon");
  const detail::Transcription tr(problem, gains.grid.size());
  detail::Workspace ws(tr.N, tr.n);
  const Vector x = tr.flatten(gains);
  double value, gap;
  int bad_node = 0;
  if (!tr.eval(x.data(), rho, ws, value, gap, &bad_node)) throw IndefiniteCovariance(bad_node);
  return {value, gap};
}

/// Central finite-difference gradient of the penalized objective with respect
/// to the node gains.
inline Vector gradient(const SteeringProblem& problem, const GainTrajectory& gains, double rho) {
  const detail::Transcription tr(problem, gains.grid.size());
  const Vector x = tr.flatten(gains);
  Vector grad;
  tr.fd_gradient(x.data(), rho, grad);
  return grad;
}

/// Staged-penalty multi-start minimization. Start 0 is the feasibility path;
/// subsequent starts perturb it with seeded Gaussian noise. Returns the
/// best feasible run (ties broken by seed); throws InfeasibleWithinBudget if
/// no run reaches an endpoint gap of 1e-4 * |Sigma_fin|_F.
inline DirectResult minimize_direct(const SteeringProblem& problem, const DirectConfig& config) {
  const detail::Transcription tr(problem, config.grid_size);
  const TimeGrid grid(config.grid_size, problem.T);
  auto [feas_gains, feas_path] = model::feasibility_path(problem, grid);
  const Vector x_feas = tr.flatten(feas_gains);

  struct Candidate {
    Vector x;
    RunRecord record;
  };
  std::vector<Candidate> finished;

  for (int run = 0; run < config.multistart_count; ++run) {
    const std::uint64_t run_seed = config.seed + static_cast<std::uint64_t>(run);
    Vector x = x_feas;
    if (run > 0) {
      SplitMix64 rng(run_seed);
      for (int j = 0; j < x.size(); ++j)
        x(j) += config.perturbation_scale * rng.normal();
    }

    detail::Workspace ws(tr.N, tr.n);
    {  // a perturbed start may already be infeasible; fall back to the path
      double v, g;
      if (!tr.eval(x.data(), 0.0, ws, v, g)) x = x_feas;
    }

    int iters = 0;
    for (double rho : config.penalty_schedule) {
      const auto outcome =
          detail::descend_stage(tr, x, rho, config.max_iters_per_stage,
                                config.gradient_tol, ws);
      iters += outcome.iters;
    }

    double value, gap;
    tr.eval(x.data(), 0.0, ws, value, gap);  // unpenalized attention value
    const bool feasible = gap <= 1e-4 * tr.sigmaT_norm;
    finished.push_back(
        Candidate{std::move(x), RunRecord{run_seed, value, gap, feasible, iters}});
  }

  std::vector<RunRecord> records;
  records.reserve(finished.size());
  for (const auto& c : finished) records.push_back(c.record);

  const Candidate* best = nullptr;
  for (const auto& c : finished) {
    if (!c.record.feasible) continue;
    if (!best || c.record.J < best->record.J ||
        (c.record.J == best->record.J && c.record.seed < best->record.seed))
      best = &c;
  }
  if (!best)
    throw InfeasibleWithinBudget(
        "minimize_direct: no multi-start run met the endpoint gap tolerance");

  return DirectResult{tr.lift(best->x, grid), best->record.J, best->record.endpoint_gap,
                      std::move(records)};
}

}  // namespace attnsteer::direct
