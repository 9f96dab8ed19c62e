#pragma once

#include <utility>
#include <vector>

#include "attnsteer/common.hpp"
#include "attnsteer/types.hpp"

namespace attnsteer {

enum class SolveStatus {
  Converged,
  NoConvergence,         // stagnated with residual above tolerance; best iterate kept
  IndefiniteCovariance,  // no SPD-preserving step could be found
  FlowDiverged,          // forward flow blew up (shooting methods)
};

inline const char* to_string(SolveStatus s) {
  switch (s) {
    case SolveStatus::Converged: return "converged";
    case SolveStatus::NoConvergence: return "no_convergence";
    case SolveStatus::IndefiniteCovariance: return "indefinite_covariance";
    case SolveStatus::FlowDiverged: return "flow_diverged";
  }
  return "unknown";
}

/// Joint state of the first-order necessary conditions at one grid node.
struct FoncState {
  Matrix sigma;   // symmetric positive definite
  Matrix lambda;  // symmetric multiplier
  Matrix A;
  Matrix A_dot;
};

/// Output of a FONC solve: the grid trajectory plus diagnostics.
struct FoncSolution {
  TimeGrid grid;
  std::vector<FoncState> states;
  double alpha = 0.0;
  double J_value = 0.0;
  double J_spatial = 0.0;
  double J_temporal = 0.0;
  double residual_norm = 0.0;
  int newton_iters = 0;
  Matrix M_0;  // multiplier endpoint, Lambda_0
  Matrix M_T;  // multiplier endpoint, -Lambda_T
  SolveStatus status = SolveStatus::Converged;

  explicit FoncSolution(TimeGrid g) : grid(std::move(g)) {}

  GainTrajectory gains() const {
    std::vector<Matrix> A, A_dot;
    A.reserve(states.size());
    A_dot.reserve(states.size());
    for (const auto& s : states) {
      A.push_back(s.A);
      A_dot.push_back(s.A_dot);
    }
    return GainTrajectory(grid, std::move(A), std::move(A_dot));
  }

  CovariancePath path() const {
    std::vector<Matrix> sigma;
    sigma.reserve(states.size());
    for (const auto& s : states) sigma.push_back(s.sigma);
    return CovariancePath(grid, std::move(sigma));
  }
};

}  // namespace attnsteer
