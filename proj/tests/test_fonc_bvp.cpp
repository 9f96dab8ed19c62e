#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "attnsteer/fonc_bvp.hpp"
#include "test_helpers.hpp"

using namespace attnsteer;
using test::rel_frobenius;

namespace {

FoncState zero_state(int n) {
  return FoncState{Matrix::Identity(n, n), Matrix::Zero(n, n), Matrix::Zero(n, n),
                   Matrix::Zero(n, n)};
}

SteeringProblem identity_problem(int n, double alpha) {
  return SteeringProblem(SpdMatrix{Matrix::Identity(n, n)}, SpdMatrix{Matrix::Identity(n, n)},
                         Matrix::Zero(n, n), 1.0, alpha);
}

}  // namespace

TEST_CASE("assemble_first_order_system at the trivial equilibrium", "[fonc_bvp]") {
  const auto problem = identity_problem(2, 0.5);
  const FoncState dot = bvp::assemble_first_order_system(problem, zero_state(2));
  REQUIRE(dot.sigma.norm() == 0.0);
  REQUIRE(dot.lambda.norm() == 0.0);
  REQUIRE(dot.A.norm() == 0.0);
  REQUIRE(dot.A_dot.norm() == 0.0);
}

TEST_CASE("assemble_first_order_system matches the scalar hand transcription", "[fonc_bvp]") {
  // n=1: sigma_dot = 2 a s + b^2, lambda_dot = -2 a l + (1-alpha) adot^2,
  // addot = [(alpha a - l s)/(1-alpha) - adot sigma_dot] / s
  const double s = 1.7, l = -0.4, a = 0.9, adot = 0.35, b = 0.3, alpha = 0.37;
  Matrix i0(1, 1), i1(1, 1), B(1, 1);
  i0 << 1.0;
  i1 << 2.0;
  B << b;
  const SteeringProblem problem(SpdMatrix(i0), SpdMatrix(i1), B, 1.0, alpha);

  FoncState st{Matrix::Constant(1, 1, s), Matrix::Constant(1, 1, l), Matrix::Constant(1, 1, a),
               Matrix::Constant(1, 1, adot)};
  const FoncState dot = bvp::assemble_first_order_system(problem, st);

  const double sigma_dot = 2.0 * a * s + b * b;
  const double lambda_dot = -2.0 * a * l + (1.0 - alpha) * adot * adot;
  const double addot = ((alpha * a - l * s) / (1.0 - alpha) - adot * sigma_dot) / s;
  REQUIRE(dot.sigma(0, 0) == Catch::Approx(sigma_dot).epsilon(1e-14));
  REQUIRE(dot.lambda(0, 0) == Catch::Approx(lambda_dot).epsilon(1e-14));
  REQUIRE(dot.A(0, 0) == Catch::Approx(adot).epsilon(1e-14));
  REQUIRE(dot.A_dot(0, 0) == Catch::Approx(addot).epsilon(1e-12));
}

TEST_CASE("stationarity pins the gain acceleration to zero when alpha A = Lambda Sigma",
          "[fonc_bvp]") {
  SplitMix64 rng(3);
  const double alpha = 0.31;
  const Matrix S = test::random_spd(rng, 3, 8.0);
  const SteeringProblem problem(SpdMatrix{S}, SpdMatrix{S}, Matrix::Zero(3, 3), 1.0, alpha);

  // A = S is symmetric and commutes against Sigma = S, so Lambda = alpha I
  FoncState st{S, alpha * Matrix::Identity(3, 3), S, Matrix::Zero(3, 3)};
  const FoncState dot = bvp::assemble_first_order_system(problem, st);
  REQUIRE(dot.A_dot.cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("assemble_first_order_system rejects ill-conditioned covariances", "[fonc_bvp]") {
  const auto problem = identity_problem(2, 0.5);
  FoncState st = zero_state(2);
  st.sigma(1, 1) = 1e-14;
  REQUIRE_THROWS_AS(bvp::assemble_first_order_system(problem, st), IllConditionedState);
}

TEST_CASE("collocation_residual vanishes at a constant equilibrium", "[fonc_bvp]") {
  const auto problem = identity_problem(2, 0.5);
  const TimeGrid grid(31, 1.0);
  const std::vector<FoncState> states(grid.size(), zero_state(2));
  const Vector R = bvp::collocation_residual(problem, states, grid);
  REQUIRE(R.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("collocation_residual flags the feasibility path with zero multiplier", "[fonc_bvp]") {
  const auto problem = test::example_problem(0.5);
  const TimeGrid grid(51, 1.0);
  const auto [gains, path] = model::feasibility_path(problem, grid);
  std::vector<FoncState> states(grid.size());
  for (int i = 0; i < grid.size(); ++i)
    states[i] = FoncState{path.sigma[i], Matrix::Zero(2, 2), gains.A[i], gains.A_dot[i]};
  const Vector R = bvp::collocation_residual(problem, states, grid);
  REQUIRE(R.cwiseAbs().maxCoeff() > 1e-2);  // stationarity block is materially nonzero
}

TEST_CASE("solve_fonc returns the zero solution on the trivial problem", "[fonc_bvp]") {
  const auto problem = identity_problem(2, 0.3);
  bvp::SolverConfig cfg;
  cfg.grid_size = 51;
  const FoncSolution sol = bvp::solve_fonc(problem, cfg);
  REQUIRE(sol.status == SolveStatus::Converged);
  REQUIRE(sol.J_value < 1e-12);
  for (const auto& s : sol.states) {
    REQUIRE(s.A.norm() < 1e-8);
    REQUIRE(s.lambda.norm() < 1e-8);
  }
}

TEST_CASE("solve_fonc refuses the edge weights", "[fonc_bvp]") {
  REQUIRE_THROWS_AS(bvp::solve_fonc(identity_problem(2, 0.0), bvp::SolverConfig{}), Error);
  REQUIRE_THROWS_AS(bvp::solve_fonc(identity_problem(2, 1.0), bvp::SolverConfig{}), Error);
}

TEST_CASE("solve_fonc converges on the worked example", "[fonc_bvp]") {
  const auto problem = test::example_problem(0.5);
  bvp::SolverConfig cfg;
  const FoncSolution sol = bvp::solve_fonc(problem, cfg);
  REQUIRE(sol.status == SolveStatus::Converged);
  REQUIRE(sol.residual_norm <= 1e-8);

  // endpoints are hit exactly at the boundary nodes
  REQUIRE(rel_frobenius(sol.states.front().sigma, problem.sigma_init.value()) < 1e-12);
  REQUIRE(rel_frobenius(sol.states.back().sigma, problem.sigma_fin.value()) < 1e-12);

  // gain-derivative boundary conditions
  REQUIRE(sol.states.front().A_dot.cwiseAbs().maxCoeff() < 1e-10);
  REQUIRE(sol.states.back().A_dot.cwiseAbs().maxCoeff() < 1e-10);

  // J_value is the attention cost of the returned trajectory
  const auto cost = model::attention_cost(problem, sol.gains(), sol.path());
  REQUIRE(std::abs(cost.total - sol.J_value) <= 1e-10 * std::max(1.0, sol.J_value));

  // multiplier endpoints are read off the converged trajectory
  REQUIRE(rel_frobenius(sol.M_0, sol.states.front().lambda) < 1e-14);
  REQUIRE(rel_frobenius(sol.M_T, -sol.states.back().lambda) < 1e-14);

  // post-solve collocation residual stays at solver tolerance
  const Vector R = bvp::collocation_residual(problem, sol.states, sol.grid);
  REQUIRE(R.cwiseAbs().maxCoeff() / (1.0 + 10.0) <= 1e-8);

  // covariance spectrum within the uniform bounds from the solution's own J
  const auto bounds = model::spectral_bounds(problem, sol.J_value);
  for (const auto& s : sol.states) {
    const auto eig = matfun::sym_eig(s.sigma);
    REQUIRE(eig.eigenvalues.minCoeff() >= bounds.c_lower - 1e-12);
    REQUIRE(eig.eigenvalues.maxCoeff() <= bounds.C_upper + 1e-12);
  }
}

TEST_CASE("independent finite-difference residuals decay at second order", "[fonc_bvp]") {
  // fonc_residuals uses centered differences, so its value on a converged
  // collocation solution is dominated by O(h^2) truncation; refining the grid
  // must shrink it by ~4x per halving.
  const auto problem = test::example_problem(0.5);
  auto residual_at = [&](int N) {
    bvp::SolverConfig cfg;
    cfg.grid_size = N;
    const FoncSolution sol = bvp::solve_fonc(problem, cfg);
    REQUIRE(sol.status == SolveStatus::Converged);
    const auto r = model::fonc_residuals(problem, sol);
    return std::max({r.primal_max, r.adjoint_max, r.stationarity_max});
  };
  const double coarse = residual_at(101);
  const double fine = residual_at(201);
  REQUIRE(coarse / fine > 2.5);
  REQUIRE(coarse / fine < 6.0);
  REQUIRE(fine < 1e-3);
}

TEST_CASE("grid refinement converges at second order in the attention value", "[fonc_bvp]") {
  const auto problem = test::example_problem(0.5);
  double J[3];
  const int Ns[3] = {51, 101, 201};
  for (int k = 0; k < 3; ++k) {
    bvp::SolverConfig cfg;
    cfg.grid_size = Ns[k];
    const FoncSolution sol = bvp::solve_fonc(problem, cfg);
    REQUIRE(sol.status == SolveStatus::Converged);
    J[k] = sol.J_value;
  }
  const double ratio = (J[0] - J[1]) / (J[1] - J[2]);
  REQUIRE(ratio > 3.5);
  REQUIRE(ratio < 4.5);
}

TEST_CASE("gain smoothness improves under refinement", "[fonc_bvp]") {
  // interior second differences of the gain scale with h^2 curvature; their
  // max should drop by ~4x per grid halving on a smooth solution
  const auto problem = test::example_problem(0.5);
  auto second_diff = [&](int N) {
    bvp::SolverConfig cfg;
    cfg.grid_size = N;
    const FoncSolution sol = bvp::solve_fonc(problem, cfg);
    double worst = 0.0;
    for (int i = 1; i + 1 < sol.grid.size(); ++i) {
      const Matrix dd = sol.states[i + 1].A - 2.0 * sol.states[i].A + sol.states[i - 1].A;
      worst = std::max(worst, dd.cwiseAbs().maxCoeff());
    }
    return worst;
  };
  const double coarse = second_diff(51);
  const double fine = second_diff(101);
  REQUIRE(fine < coarse);
  REQUIRE(coarse / fine > 2.0);
}

TEST_CASE("continuation sweep of a single weight equals a direct solve", "[fonc_bvp]") {
  const auto problem = test::example_problem(0.5);
  bvp::SolverConfig cfg;
  cfg.grid_size = 101;
  const auto sweep = bvp::continuation_sweep(problem, cfg, {0.5});
  const auto direct = bvp::solve_fonc(problem, cfg);
  REQUIRE(sweep.size() == 1);
  REQUIRE(sweep.front().J_value == Catch::Approx(direct.J_value).epsilon(1e-12));
}

TEST_CASE("continuation toward the spatial edge raises the temporal term", "[fonc_bvp]") {
  const auto problem = test::example_problem(0.5);
  bvp::SolverConfig cfg;
  cfg.grid_size = 101;
  const auto up = bvp::continuation_sweep(problem, cfg, {0.5, 0.7, 0.9});
  REQUIRE(up.size() == 3);
  for (const auto& s : up) REQUIRE(s.status == SolveStatus::Converged);
  REQUIRE(up[2].J_temporal > up[1].J_temporal);
  REQUIRE(up[1].J_temporal > up[0].J_temporal);
}

TEST_CASE("scalar continuation approaches the closed-form spatial value", "[fonc_bvp]") {
  // n=1, B=0, sigma 1 -> 4: the constant-gain solution gives
  // J_spatial = (log 2)^2 at every alpha (one-dimensional zero-noise flows
  // have constant optimal gain), so the alpha -> 1 continuation must agree.
  Matrix i0(1, 1), i1(1, 1);
  i0 << 1.0;
  i1 << 4.0;
  const SteeringProblem problem(SpdMatrix(i0), SpdMatrix(i1), Matrix::Zero(1, 1), 1.0, 0.5);
  bvp::SolverConfig cfg;
  const auto sweep = bvp::continuation_sweep(problem, cfg, {0.5, 0.9, 0.99, 0.999});
  const double expected = std::log(2.0) * std::log(2.0);
  REQUIRE(sweep.back().status == SolveStatus::Converged);
  REQUIRE(std::abs(sweep.back().J_spatial - expected) / expected < 1e-4);
}

TEST_CASE("continuation sweep rejects out-of-range weights", "[fonc_bvp]") {
  const auto problem = test::example_problem(0.5);
  bvp::SolverConfig cfg;
  REQUIRE_THROWS_AS(bvp::continuation_sweep(problem, cfg, {0.5, 1.0}), Error);
}
