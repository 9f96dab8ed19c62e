#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "attnsteer/fisher.hpp"
#include "attnsteer/fonc_bvp.hpp"
#include "test_helpers.hpp"

using namespace attnsteer;
using test::rel_frobenius;

TEST_CASE("fisher_geodesic endpoints, generator, and scalar closed form", "[fisher]") {
  const Matrix S0 = test::example_sigma_init();
  const Matrix ST = test::example_sigma_fin();
  const TimeGrid grid(201, 1.0);
  const auto pair = fisher::fisher_geodesic(S0, ST, 1.0, grid);

  REQUIRE(rel_frobenius(pair.path.sigma.front(), S0) < 1e-10);
  REQUIRE(rel_frobenius(pair.path.sigma.back(), ST) < 1e-10);

  // A_F = (1/2T) Sigma0^{1/2} C Sigma0^{-1/2} by construction
  const Matrix rebuilt = 0.5 * pair.sqrt0 * pair.C * pair.inv_sqrt0;
  REQUIRE(rel_frobenius(pair.A_F, rebuilt) < 1e-12);

  // generator compatibility A_F Sigma = Sigma A_F^T along the whole path
  for (const auto& s : pair.path.sigma)
    REQUIRE((pair.A_F * s - s * pair.A_F.transpose()).norm() < 1e-9);

  // scalar case: sigma^F_t = 4^t and A_F = log 2
  Matrix s1(1, 1), s4(1, 1);
  s1 << 1.0;
  s4 << 4.0;
  const auto scal = fisher::fisher_geodesic(s1, s4, 1.0, TimeGrid(11, 1.0));
  REQUIRE(scal.A_F(0, 0) == Catch::Approx(std::log(2.0)).epsilon(1e-12));
  for (int i = 0; i < 11; ++i)
    REQUIRE(scal.path.sigma[i](0, 0) ==
            Catch::Approx(std::pow(4.0, i / 10.0)).epsilon(1e-12));
}

TEST_CASE("commutant dimension follows the eigenvalue multiplicities", "[fisher]") {
  const TimeGrid grid(21, 1.0);

  // simple spectrum: unique generator
  const auto simple =
      fisher::fisher_geodesic(test::example_sigma_init(), test::example_sigma_fin(), 1.0, grid);
  REQUIRE(simple.commutant_basis.empty());

  // equal endpoints: M = I, full antisymmetric space
  SplitMix64 rng(3);
  for (int n : {2, 3, 4}) {
    const Matrix S = test::random_spd(rng, n, 5.0);
    const auto eq = fisher::fisher_geodesic(S, S, 1.0, grid);
    REQUIRE(static_cast<int>(eq.commutant_basis.size()) == n * (n - 1) / 2);
    REQUIRE(eq.A_F.norm() < 1e-12);
    for (const auto& X : eq.commutant_basis) {
      REQUIRE((X + X.transpose()).norm() < 1e-10);
      REQUIRE((X * eq.M - eq.M * X).norm() < 1e-10);
    }
  }

  // multiplicities (2,1) at n=3 and (2,2) at n=4: dims 1 and 2
  Matrix D3 = Matrix::Zero(3, 3);
  D3.diagonal() << 4.0, 4.0, 9.0;
  const auto deg3 = fisher::fisher_geodesic(Matrix::Identity(3, 3), D3, 1.0, grid);
  REQUIRE(deg3.commutant_basis.size() == 1);

  Matrix D4 = Matrix::Zero(4, 4);
  D4.diagonal() << 4.0, 4.0, 9.0, 9.0;
  const auto deg4 = fisher::fisher_geodesic(Matrix::Identity(4, 4), D4, 1.0, grid);
  REQUIRE(deg4.commutant_basis.size() == 2);
}

TEST_CASE("every commutant direction still induces the geodesic", "[fisher]") {
  // degenerate endpoints with a shared eigenvalue ratio leave generator
  // freedom; any commutant coefficient must keep the ODE residual at the
  // discretization floor, while a non-commutant direction must not
  const TimeGrid grid(201, 1.0);
  SplitMix64 rng(9);
  const Matrix S = test::random_spd(rng, 2, 3.0);
  const auto pair = fisher::fisher_geodesic(S, 4.0 * S, 1.0, grid);  // M = 4I
  REQUIRE(pair.commutant_basis.size() == 1);

  REQUIRE(fisher::verify_geodesic_generator(pair, {0.0}) < 1e-3);
  REQUIRE(fisher::verify_geodesic_generator(pair, {0.8}) < 1e-3);

  // residual decays at second order with refinement
  const auto fine = fisher::fisher_geodesic(S, 4.0 * S, 1.0, TimeGrid(401, 1.0));
  REQUIRE(fisher::verify_geodesic_generator(fine, {0.8}) <
          0.5 * fisher::verify_geodesic_generator(pair, {0.8}) + 1e-12);

  // a skew direction outside the commutant breaks the ODE at O(1)
  const auto simple =
      fisher::fisher_geodesic(test::example_sigma_init(), test::example_sigma_fin(), 1.0, grid);
  Matrix X(2, 2);
  X << 0.0, 0.5, -0.5, 0.0;
  const Matrix A_bad = simple.A_F + simple.sqrt0 * X * simple.inv_sqrt0;
  double worst = 0.0;
  const double h = grid.spacing();
  for (int i = 1; i + 1 < grid.size(); ++i) {
    const Matrix dot = (simple.path.sigma[i + 1] - simple.path.sigma[i - 1]) / (2.0 * h);
    worst = std::max(worst, (dot - A_bad * simple.path.sigma[i] -
                             simple.path.sigma[i] * A_bad.transpose())
                                .norm());
  }
  REQUIRE(worst > 0.1);
}

TEST_CASE("fisher_cost vanishes exactly on the Fisher pair", "[fisher]") {
  const Matrix S0 = test::example_sigma_init();
  const Matrix ST = test::example_sigma_fin();
  for (int N : {101, 201}) {
    const TimeGrid grid(N, 1.0);
    const auto pair = fisher::fisher_geodesic(S0, ST, 1.0, grid);
    std::vector<Matrix> A(grid.size(), pair.A_F), Ad(grid.size(), Matrix::Zero(2, 2));
    const GainTrajectory gains(grid, A, Ad);
    const auto F = fisher::fisher_cost(0.5, gains, pair.path);
    REQUIRE(F.total < 1e-10);
    REQUIRE(F.temporal == 0.0);
  }
}

TEST_CASE("fisher_cost is positive away from the Fisher pair", "[fisher]") {
  const auto problem = test::example_problem(0.5);
  const TimeGrid grid(201, 1.0);
  const auto [gains, path] = model::feasibility_path(problem, grid);
  const auto F = fisher::fisher_cost(0.5, gains, path);
  REQUIRE(F.total > 1e-3);

  // scalar sanity: everything commutes in one dimension
  Matrix one(1, 1);
  one << 1.0;
  const TimeGrid g1(21, 1.0);
  std::vector<Matrix> A(g1.size(), Matrix::Constant(1, 1, 0.8)),
      Ad(g1.size(), Matrix::Zero(1, 1)), sig(g1.size(), one);
  const auto F1 = fisher::fisher_cost(0.4, GainTrajectory(g1, A, Ad), CovariancePath(g1, sig));
  REQUIRE(F1.total == 0.0);

  REQUIRE_THROWS_AS(fisher::fisher_cost(0.0, gains, path), Error);
}

TEST_CASE("fisher bound holds on the solved paper problem", "[fisher]") {
  const auto problem = test::example_problem(0.5);
  bvp::SolverConfig cfg;
  cfg.grid_size = 101;
  const auto sol = bvp::solve_fonc(problem, cfg);
  REQUIRE(sol.status == SolveStatus::Converged);
  for (double beta : {0.25, 0.5, 0.75}) {
    const auto check = fisher::fisher_bound_check(problem, sol, beta);
    REQUIRE(check.satisfied);
    REQUIRE(check.c_realized > 0.0);
    REQUIRE(check.C_realized >= check.c_realized);
  }
}

TEST_CASE("fisher bound holds on random feasible non-optimal pairs", "[fisher]") {
  // the inequality needs only the dynamics and the realized spectral
  // extremes, so any propagated pair must satisfy it
  SplitMix64 rng(21);
  const TimeGrid grid(101, 1.0);
  for (int trial = 0; trial < 10; ++trial) {
    const Matrix S0 = test::random_spd(rng, 2, 6.0);
    const SteeringProblem problem(SpdMatrix{S0}, SpdMatrix{S0}, Matrix::Zero(2, 2), 1.0, 0.5);
    const auto gains = test::smooth_gains(grid, rng, 2, 0.5);
    const auto path = model::propagate_lyapunov(problem, gains);

    FoncSolution sol(grid);
    sol.alpha = 0.5;
    sol.states.resize(grid.size());
    for (int i = 0; i < grid.size(); ++i)
      sol.states[i] = FoncState{path.sigma[i], Matrix::Zero(2, 2), gains.A[i], gains.A_dot[i]};
    const auto cost = model::attention_cost(problem, gains, path);
    sol.J_value = cost.total;

    for (double beta : {0.25, 0.75}) {
      const auto check = fisher::fisher_bound_check(problem, sol, beta);
      REQUIRE(check.satisfied);
    }
  }
}

TEST_CASE("one-dimensional Fisher geodesic is the zero-noise spatial path", "[fisher]") {
  Matrix s0(1, 1), sT(1, 1);
  s0 << 1.0;
  sT << 4.0;
  const TimeGrid grid(101, 1.0);
  const auto pair = fisher::fisher_geodesic(s0, sT, 1.0, grid);
  // spatial optimum: constant a = log 2, sigma_t = exp(2 a t)
  for (int i = 0; i < grid.size(); i += 10)
    REQUIRE(pair.path.sigma[i](0, 0) ==
            Catch::Approx(std::exp(2.0 * std::log(2.0) * grid.t(i))).epsilon(1e-10));
}
