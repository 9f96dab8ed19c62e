#pragma once

// Command implementations behind the CLI front end. Each command returns the
// process exit code (0 success, 2 parse/usage error, 3 solver failure with
// best-iterate artifacts still written), prints a single JSON status line on
// stdout, and keeps diagnostics on stderr.

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "attnsteer/direct_opt.hpp"
#include "attnsteer/fisher.hpp"
#include "attnsteer/fonc_bvp.hpp"
#include "attnsteer/io.hpp"
#include "attnsteer/limits.hpp"
#include "attnsteer/mc_sim.hpp"
#include "attnsteer/model.hpp"

namespace attnsteer::cli {

namespace detail {

namespace fs = std::filesystem;
using io::json;

inline bvp::SolverConfig solver_config(const io::SolverOptions& opts) {
  bvp::SolverConfig cfg;
  if (opts.grid_size) cfg.grid_size = *opts.grid_size;
  if (opts.newton_tol) cfg.newton_tol = *opts.newton_tol;
  if (opts.max_newton_iters) cfg.max_newton_iters = *opts.max_newton_iters;
  return cfg;
}

/// Dispatch on alpha: collocation BVP inside (0,1), spatial shooting at 1,
/// constant-gain selection at 0. Returns a FoncSolution-shaped record either
/// way (the temporal case carries zero Adot and no multiplier endpoints).
inline FoncSolution dispatch_solve(const SteeringProblem& problem, const io::SolverOptions& opts,
                                   bool* multipliers_valid = nullptr) {
  if (multipliers_valid) *multipliers_valid = true;
  if (problem.alpha > 0.0 && problem.alpha < 1.0)
    return bvp::solve_fonc(problem, solver_config(opts));

  if (problem.alpha == 1.0) {
    limits::SpatialConfig cfg;
    if (opts.grid_size) cfg.grid_size = *opts.grid_size;
    if (opts.max_newton_iters) cfg.max_newton_iters = *opts.max_newton_iters;
    return limits::solve_spatial(problem, cfg);
  }

  limits::TemporalConfig cfg;
  if (opts.grid_size) cfg.grid_size = *opts.grid_size;
  if (opts.seed) cfg.seed = *opts.seed;
  const limits::TemporalResult res = limits::solve_temporal_constant(problem, cfg);
  if (multipliers_valid) *multipliers_valid = false;

  const TimeGrid& grid = res.path.grid;
  FoncSolution sol(grid);
  sol.alpha = 0.0;
  sol.states.resize(grid.size());
  const int n = problem.n;
  for (int i = 0; i < grid.size(); ++i) {
    sol.states[i].sigma = res.path.sigma[i];
    sol.states[i].lambda = Matrix::Zero(n, n);
    sol.states[i].A = res.control.A;
    sol.states[i].A_dot = Matrix::Zero(n, n);
  }
  sol.residual_norm = res.endpoint_gap;
  sol.status = SolveStatus::Converged;
  const auto cost = model::attention_cost(problem, sol.gains(), sol.path());
  sol.J_value = cost.total;
  sol.J_spatial = cost.spatial;
  sol.J_temporal = cost.temporal;
  return sol;
}

inline json bounds_report(const SteeringProblem& problem, const FoncSolution& sol) {
  if (problem.alpha <= 0.0) return nullptr;  // bound constants are alpha-normalized
  json rep;
  auto check = [&](const model::SpectralBounds& b) {
    bool ok = true;
    for (const auto& s : sol.states) {
      const auto eig = matfun::sym_eig(s.sigma);
      if (eig.eigenvalues.minCoeff() < b.c_lower - 1e-12 ||
          eig.eigenvalues.maxCoeff() > b.C_upper + 1e-12) {
        ok = false;
        break;
      }
    }
    return json{{"c", b.c_lower}, {"C", b.C_upper}, {"J_used", b.attention_value_used},
                {"satisfied", ok}};
  };
  rep["from_solution_J"] = check(model::spectral_bounds(problem, sol.J_value));
  rep["from_feasibility_J"] = check(model::spectral_bounds(problem));
  return rep;
}

inline void write_solution_artifacts(const fs::path& dir, const SteeringProblem& problem,
                                     const FoncSolution& sol, bool multipliers_valid,
                                     double contour_scale, int contour_angles) {
  fs::create_directories(dir);
  const GainTrajectory gains = sol.gains();
  const CovariancePath path = sol.path();
  io::write_sigma_csv(dir / "sigma.csv", path);
  io::write_gain_csv(dir / "gain.csv", gains);
  if (problem.n == 2)
    io::write_ellipse_csv(dir / "ellipse.csv", path, contour_angles, contour_scale);

  json result;
  result["alpha"] = sol.alpha;
  result["status"] = to_string(sol.status);
  result["grid_size"] = sol.grid.size();
  result["J_total"] = sol.J_value;
  result["J_spatial"] = sol.J_spatial;
  result["J_temporal"] = sol.J_temporal;
  result["residual_norm"] = sol.residual_norm;
  result["newton_iters"] = sol.newton_iters;
  const auto residuals = model::fonc_residuals(problem, sol);
  result["fonc_residuals"] = {
      {"primal", residuals.primal_max},         {"adjoint", residuals.adjoint_max},
      {"stationarity", residuals.stationarity_max}, {"adot_start", residuals.adot_start},
      {"adot_end", residuals.adot_end},         {"endpoint_init", residuals.endpoint_init_gap},
      {"endpoint_fin", residuals.endpoint_fin_gap}};
  result["bounds"] = bounds_report(problem, sol);
  if (multipliers_valid) {
    result["M_0"] = io::matrix_to_json(sol.M_0);
    result["M_T"] = io::matrix_to_json(sol.M_T);
  }
  io::write_json(dir / "result.json", result);
}

inline int status_exit(const FoncSolution& sol) {
  return sol.status == SolveStatus::Converged ? 0 : 3;
}

inline void emit_status(const json& doc) { std::cout << doc.dump() << std::endl; }

}  // namespace detail

/// attnsteer solve <problem.json> [--alpha a] [--out dir] [--contour-scale s]
inline int cmd_solve(const std::string& problem_path, std::optional<double> alpha_override,
                     const std::string& out_dir, double contour_scale = 1.0,
                     int contour_angles = 128) {
  namespace fs = std::filesystem;
  using io::json;
  try {
    io::ProblemFile pf = io::load_problem(problem_path);
    SteeringProblem problem =
        alpha_override ? pf.problem.with_alpha(*alpha_override) : pf.problem;

    bool multipliers_valid = true;
    FoncSolution sol = detail::dispatch_solve(problem, pf.solver, &multipliers_valid);
    detail::write_solution_artifacts(out_dir, problem, sol, multipliers_valid, contour_scale,
                                     contour_angles);
    const int code = detail::status_exit(sol);
    detail::emit_status(json{{"command", "solve"},
                             {"alpha", problem.alpha},
                             {"status", to_string(sol.status)},
                             {"J_total", sol.J_value},
                             {"out", out_dir},
                             {"exit_code", code}});
    return code;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    detail::emit_status(io::json{{"command", "solve"}, {"status", "error"},
                                 {"message", e.what()}, {"exit_code", 2}});
    return 2;
  }
}

/// attnsteer sweep <problem.json> --alphas a1,a2,... [--out dir]
/// Interior weights are solved by continuation anchored at 0.5; the edge
/// weights 0 and 1 are routed to the limits module warm-started from the
/// nearest interior solution.
inline int cmd_sweep(const std::string& problem_path, std::vector<double> alphas,
                     const std::string& out_dir) {
  namespace fs = std::filesystem;
  using io::json;
  try {
    io::ProblemFile pf = io::load_problem(problem_path);
    const SteeringProblem& base = pf.problem;
    if (alphas.empty() && pf.solver.continuation) alphas = *pf.solver.continuation;
    if (alphas.empty()) throw Error("sweep: no alpha list given");
    for (double a : alphas)
      if (!(a >= 0.0 && a <= 1.0)) throw Error("sweep: alphas must lie in [0, 1]");
    std::sort(alphas.begin(), alphas.end());
    alphas.erase(std::unique(alphas.begin(), alphas.end()), alphas.end());

    const bvp::SolverConfig cfg = detail::solver_config(pf.solver);
    const double anchor_alpha = 0.5;

    std::vector<double> up, down;  // interior weights, walked outward from 0.5
    for (double a : alphas) {
      if (a <= 0.0 || a >= 1.0 || a == anchor_alpha) continue;
      (a > anchor_alpha ? up : down).push_back(a);
    }
    std::sort(up.begin(), up.end());
    std::sort(down.rbegin(), down.rend());

    FoncSolution anchor = bvp::solve_fonc(base.with_alpha(anchor_alpha), cfg);
    if (anchor.status != SolveStatus::Converged)
      throw SweepAborted("sweep: anchor solve at alpha = 0.5 did not converge");

    struct Entry {
      FoncSolution sol;
      bool multipliers_valid;
    };
    std::vector<Entry> entries;

    auto chain = [&](const std::vector<double>& seq) {
      const FoncSolution* prev = &anchor;
      for (double a : seq) {
        FoncSolution sol = bvp::solve_fonc(base.with_alpha(a), cfg, *prev);
        entries.push_back(Entry{std::move(sol), true});
        if (entries.back().sol.status == SolveStatus::Converged) prev = &entries.back().sol;
      }
      return prev;  // nearest interior solution on this side
    };
    entries.reserve(alphas.size() + 1);
    const FoncSolution* top = chain(up);
    const FoncSolution* bottom = chain(down);

    if (std::find(alphas.begin(), alphas.end(), 1.0) != alphas.end()) {
      limits::SpatialConfig scfg;
      if (pf.solver.grid_size) scfg.grid_size = *pf.solver.grid_size;
      // stationarity Lambda Sigma ~ alpha A gives the shooting warm start
      const Matrix lambda0 = top->states.front().lambda / top->alpha;
      entries.push_back(
          Entry{limits::solve_spatial(base.with_alpha(1.0), scfg, lambda0), true});
    }
    if (std::find(alphas.begin(), alphas.end(), 0.0) != alphas.end()) {
      limits::TemporalConfig tcfg;
      if (pf.solver.grid_size) tcfg.grid_size = *pf.solver.grid_size;
      if (pf.solver.seed) tcfg.seed = *pf.solver.seed;
      Matrix avg = Matrix::Zero(base.n, base.n);
      for (const auto& s : bottom->states) avg += s.A;
      tcfg.initial_gain = avg / static_cast<double>(bottom->states.size());
      const limits::TemporalResult res =
          limits::solve_temporal_constant(base.with_alpha(0.0), tcfg);

      FoncSolution sol(res.path.grid);
      sol.alpha = 0.0;
      sol.states.resize(res.path.grid.size());
      for (int i = 0; i < res.path.grid.size(); ++i) {
        sol.states[i] = FoncState{res.path.sigma[i], Matrix::Zero(base.n, base.n),
                                  res.control.A, Matrix::Zero(base.n, base.n)};
      }
      sol.residual_norm = res.endpoint_gap;
      sol.status = SolveStatus::Converged;
      const auto cost = model::attention_cost(base.with_alpha(0.0), sol.gains(), sol.path());
      sol.J_value = cost.total;
      sol.J_spatial = cost.spatial;
      sol.J_temporal = cost.temporal;
      entries.push_back(Entry{std::move(sol), false});
    }
    if (std::find(alphas.begin(), alphas.end(), anchor_alpha) != alphas.end())
      entries.push_back(Entry{anchor, true});

    std::sort(entries.begin(), entries.end(),
              [](const Entry& a, const Entry& b) { return a.sol.alpha < b.sol.alpha; });

    fs::create_directories(out_dir);
    std::vector<io::SweepRow> rows;
    for (const auto& e : entries) {
      // only weights the caller asked for are written out
      if (std::none_of(alphas.begin(), alphas.end(),
                       [&](double a) { return a == e.sol.alpha; }))
        continue;
      char sub[32];
      std::snprintf(sub, sizeof(sub), "alpha_%.6f", e.sol.alpha);
      detail::write_solution_artifacts(fs::path(out_dir) / sub, base.with_alpha(e.sol.alpha),
                                       e.sol, e.multipliers_valid, 1.0, 128);
      rows.push_back(io::SweepRow{e.sol.alpha, e.sol.J_value, e.sol.J_spatial,
                                  e.sol.J_temporal, e.sol.residual_norm, e.sol.newton_iters,
                                  to_string(e.sol.status)});
    }
    io::write_summary_csv(fs::path(out_dir) / "summary.csv", rows);

    detail::emit_status(json{{"command", "sweep"},
                             {"alphas", alphas},
                             {"status", "ok"},
                             {"out", out_dir},
                             {"exit_code", 0}});
    return 0;
  } catch (const SweepAborted& e) {
    std::cerr << "error: " << e.what() << "\n";
    detail::emit_status(io::json{{"command", "sweep"}, {"status", "sweep_aborted"},
                                 {"message", e.what()}, {"exit_code", 3}});
    return 3;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    detail::emit_status(io::json{{"command", "sweep"}, {"status", "error"},
                                 {"message", e.what()}, {"exit_code", 2}});
    return 2;
  }
}

/// attnsteer fisher <problem.json> [--beta b] [--out dir]
inline int cmd_fisher(const std::string& problem_path, double beta, const std::string& out_dir) {
  namespace fs = std::filesystem;
  using io::json;
  try {
    if (!(beta > 0.0 && beta < 1.0)) throw Error("fisher: beta must lie in (0, 1)");
    io::ProblemFile pf = io::load_problem(problem_path);
    const SteeringProblem& problem = pf.problem;

    const int N = pf.solver.grid_size.value_or(201);
    const TimeGrid grid(N, problem.T);
    const fisher::FisherPair pair = fisher::fisher_geodesic(
        problem.sigma_init.value(), problem.sigma_fin.value(), problem.T, grid);

    fs::create_directories(out_dir);
    io::write_sigma_csv(fs::path(out_dir) / "fisher.csv", pair.path);

    json doc;
    doc["A_F"] = io::matrix_to_json(pair.A_F);
    doc["commutant_dim"] = pair.commutant_basis.size();
    doc["null_space_threshold"] = pair.null_space_threshold;
    doc["beta"] = beta;
    doc["alpha"] = problem.alpha;

    int code = 0;
    std::string status = "ok";
    if (problem.alpha > 0.0 && problem.alpha < 1.0) {
      bool multipliers_valid = true;
      const FoncSolution sol = detail::dispatch_solve(problem, pf.solver, &multipliers_valid);
      const auto check = fisher::fisher_bound_check(problem, sol, beta);
      doc["bound"] = {{"F", check.F_value},      {"K", check.K},
                      {"J", check.J_value},      {"c", check.c_realized},
                      {"C", check.C_realized},   {"satisfied", check.satisfied},
                      {"solver_status", to_string(sol.status)}};
      if (sol.status != SolveStatus::Converged) {
        code = 3;
        status = to_string(sol.status);
      }
    } else {
      doc["bound"] = nullptr;  // K is undefined at the alpha edges
    }
    io::write_json(fs::path(out_dir) / "bound.json", doc);

    detail::emit_status(json{{"command", "fisher"},
                             {"beta", beta},
                             {"status", status},
                             {"commutant_dim", pair.commutant_basis.size()},
                             {"out", out_dir},
                             {"exit_code", code}});
    return code;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    detail::emit_status(io::json{{"command", "fisher"}, {"status", "error"},
                                 {"message", e.what()}, {"exit_code", 2}});
    return 2;
  }
}

/// attnsteer simulate <problem.json> [--paths P] [--seed s] [--substeps k]
///                    [--gains gain.csv] [--out dir]
inline int cmd_simulate(const std::string& problem_path, std::optional<int> paths,
                        std::optional<std::uint64_t> seed, std::optional<int> substeps,
                        const std::string& gains_csv, const std::string& out_dir,
                        int sample_count = 32) {
  namespace fs = std::filesystem;
  using io::json;
  try {
    io::ProblemFile pf = io::load_problem(problem_path);
    const SteeringProblem& problem = pf.problem;

    mc::SimConfig cfg;
    cfg.num_paths = paths.value_or(pf.solver.num_paths.value_or(20000));
    cfg.substeps = substeps.value_or(pf.solver.substeps.value_or(4));
    cfg.seed = seed.value_or(pf.solver.seed.value_or(12345));

    std::optional<GainTrajectory> gains;
    std::string gain_source;
    if (!gains_csv.empty()) {
      gains = io::read_gain_csv(gains_csv, problem.n);
      gain_source = gains_csv;
    } else {
      const FoncSolution sol = detail::dispatch_solve(problem, pf.solver);
      if (sol.status != SolveStatus::Converged)
        throw Error("simulate: inline solve did not converge; pass --gains instead");
      gains = sol.gains();
      gain_source = "inline solve";
    }

    const mc::SimResult sim = mc::simulate_paths(problem, *gains, cfg, sample_count);

    fs::create_directories(out_dir);
    {
      auto out = io::detail::open_out(fs::path(out_dir) / "empirical.csv");
      const int n = problem.n;
      out << "t";
      for (int i = 0; i < n; ++i)
        for (int j = 0; j <= i; ++j) out << ",emp_" << i << "_" << j;
      out << ",deviation\n";
      for (int k = 0; k < sim.reference.grid.size(); ++k) {
        out << format_full(sim.reference.grid.t(k));
        for (int i = 0; i < n; ++i)
          for (int j = 0; j <= i; ++j) out << "," << format_full(sim.empirical[k](i, j));
        out << "," << format_full(sim.node_deviation[k]) << "\n";
      }
    }
    {
      auto out = io::detail::open_out(fs::path(out_dir) / "sample_paths.csv");
      out << "path,t";
      for (int i = 0; i < problem.n; ++i) out << ",x_" << i;
      out << "\n";
      for (std::size_t p = 0; p < sim.sample_paths.size(); ++p)
        for (int k = 0; k < sim.reference.grid.size(); ++k) {
          out << p << "," << format_full(sim.reference.grid.t(k));
          for (int i = 0; i < problem.n; ++i)
            out << "," << format_full(sim.sample_paths[p][k](i));
          out << "\n";
        }
    }
    io::write_json(fs::path(out_dir) / "simulation.json",
                   json{{"num_paths", cfg.num_paths},
                        {"substeps", cfg.substeps},
                        {"seed", cfg.seed},
                        {"gain_source", gain_source},
                        {"max_rel_deviation", sim.max_rel_deviation}});

    detail::emit_status(json{{"command", "simulate"},
                             {"paths", cfg.num_paths},
                             {"seed", cfg.seed},
                             {"max_rel_deviation", sim.max_rel_deviation},
                             {"status", "ok"},
                             {"out", out_dir},
                             {"exit_code", 0}});
    return 0;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    detail::emit_status(io::json{{"command", "simulate"}, {"status", "error"},
                                 {"message", e.what()}, {"exit_code", 2}});
    return 2;
  }
}

}  // namespace attnsteer::cli
