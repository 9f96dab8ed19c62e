#pragma once

// Fisher-Rao geodesic between SPD endpoints, the affine family of constant
// generators inducing it, the geodesic-inducing cost F_beta, and the bound
// F_beta <= K J_alpha with K = max(4 beta C^2 / (alpha c), (1-beta)/(1-alpha)).

#include <cmath>
#include <limits>
#include <utility>
#include <vector>

#include "attnsteer/common.hpp"
#include "attnsteer/fonc_solution.hpp"
#include "attnsteer/matfun.hpp"
#include "attnsteer/model.hpp"
#include "attnsteer/types.hpp"

namespace attnsteer::fisher {

struct FisherPair {
  Matrix A_F;                          // (1/2T) Sigma0^{1/2} log(M) Sigma0^{-1/2}
  CovariancePath path;                 // Sigma_t^F = Sigma0^{1/2} M^{t/T} Sigma0^{1/2}
  Matrix M;                            // Sigma0^{-1/2} SigmaT Sigma0^{-1/2}
  Matrix C;                            // log M, symmetric
  std::vector<Matrix> commutant_basis; // antisymmetric X with [X, M] = 0
  double null_space_threshold;         // singular-value cutoff used for the basis
  Matrix sqrt0;                        // Sigma0^{1/2}, kept for generator assembly
  Matrix inv_sqrt0;                    // Sigma0^{-1/2}
};

/// Canonical geodesic data between SPD endpoints on a grid. The commutant
/// basis spans the antisymmetric solutions of [X, M] = 0, extracted as the
/// null space of the commutator operator with a relative SVD threshold.
inline FisherPair fisher_geodesic(const Matrix& Sigma0, const Matrix& SigmaT, double T,
                                  const TimeGrid& grid) {
  const int n = static_cast<int>(Sigma0.rows());
  const Matrix sqrt0 = matfun::spd_sqrt(Sigma0);
  const Matrix inv_sqrt0 = matfun::spd_pow(Sigma0, -0.5);
  const Matrix M = symmetrize(inv_sqrt0 * SigmaT * inv_sqrt0);
  const Matrix C = matfun::spd_log(M);
  const Matrix A_F = (0.5 / T) * sqrt0 * C * inv_sqrt0;

  std::vector<Matrix> nodes(grid.size());
  for (int i = 0; i < grid.size(); ++i)
    nodes[i] = symmetrize(sqrt0 * matfun::spd_pow(M, grid.t(i) / T) * sqrt0);

  // commutator operator restricted to the antisymmetric matrices
  const int q = n * (n - 1) / 2;
  std::vector<Matrix> basis;
  double threshold = 0.0;
  if (q > 0) {
    std::vector<Matrix> skew_basis;
    skew_basis.reserve(q);
    for (int r = 0; r < n; ++r)
      for (int c = r + 1; c < n; ++c) {
        Matrix E = Matrix::Zero(n, n);
        E(r, c) = 1.0;
        E(c, r) = -1.0;
        skew_basis.push_back(std::move(E));
      }
    Matrix K(n * n, q);
    for (int k = 0; k < q; ++k) {
      const Matrix comm = skew_basis[k] * M - M * skew_basis[k];
      K.col(k) = Eigen::Map<const Vector>(comm.data(), n * n);
    }
    Eigen::JacobiSVD<Matrix> svd(K, Eigen::ComputeFullV);
    const double sigma_max = svd.singularValues().size() ? svd.singularValues()(0) : 0.0;
    threshold = 1e-10 * std::max(sigma_max, 1.0);
    for (int k = 0; k < q; ++k) {
      const double sv = (k < svd.singularValues().size()) ? svd.singularValues()(k) : 0.0;
      if (sv > threshold) continue;
      Matrix X = Matrix::Zero(n, n);
      for (int j = 0; j < q; ++j) X += svd.matrixV()(j, k) * skew_basis[j];
      basis.push_back(std::move(X));
    }
  }

  return FisherPair{A_F,
                    CovariancePath(grid, std::move(nodes)),
                    M,
                    C,
                    std::move(basis),
                    threshold,
                    sqrt0,
                    inv_sqrt0};
}

/// Residual of the geodesic ODE for A = A_F + Sigma0^{1/2} (sum c_i X_i)
/// Sigma0^{-1/2}: max over interior nodes of
/// |dSigma^F/dt - A Sigma^F - Sigma^F A^T|_F with centered differences.
inline double verify_geodesic_generator(const FisherPair& pair,
                                        const std::vector<double>& coeffs) {
  if (coeffs.size() != pair.commutant_basis.size())
    throw Error("verify_geodesic_generator: coefficient count != basis size");
  const int n = static_cast<int>(pair.A_F.rows());
  Matrix X = Matrix::Zero(n, n);
  for (std::size_t i = 0; i < coeffs.size(); ++i) X += coeffs[i] * pair.commutant_basis[i];
  const Matrix A = pair.A_F + pair.sqrt0 * X * pair.inv_sqrt0;

  const TimeGrid& grid = pair.path.grid;
  const double h = grid.spacing();
  double worst = 0.0;
  for (int i = 1; i + 1 < grid.size(); ++i) {
    const Matrix dot = (pair.path.sigma[i + 1] - pair.path.sigma[i - 1]) / (2.0 * h);
    const Matrix res = dot - A * pair.path.sigma[i] - pair.path.sigma[i] * A.transpose();
    worst = std::max(worst, res.norm());
  }
  return worst;
}

struct FisherCost {
  double total;
  double asym;      // integral of |A - Sigma A^T Sigma^{-1}|_Sigma^2
  double temporal;  // integral of tr(Adot Sigma Adot^T)
};

/// Fisher geodesic-inducing cost
///   F_beta = beta int |A - Sigma A^T Sigma^{-1}|_Sigma^2
///          + (1 - beta) int tr(Adot Sigma Adot^T),
/// with |X|_Sigma^2 = tr(X Sigma X^T), by composite trapezoid.
inline FisherCost fisher_cost(double beta, const GainTrajectory& gains,
                              const CovariancePath& path) {
  if (!(beta > 0.0 && beta < 1.0)) throw Error("fisher_cost: beta must be in (0, 1)");
  if (!gains.grid.same_as(path.grid))
    throw GridMismatch("fisher_cost: gain and covariance grids differ");

  const int N = gains.grid.size();
  const double h = gains.grid.spacing();
  double asym = 0.0, temporal = 0.0;
  for (int i = 0; i < N; ++i) {
    const double w = (i == 0 || i == N - 1) ? 0.5 * h : h;
    const Matrix& S = path.sigma[i];
    const Matrix X = gains.A[i] - S * gains.A[i].transpose() * S.partialPivLu().inverse();
    asym += w * (X * S * X.transpose()).trace();
    temporal += w * (gains.A_dot[i] * S * gains.A_dot[i].transpose()).trace();
  }
  return FisherCost{beta * asym + (1.0 - beta) * temporal, asym, temporal};
}

struct FisherBoundCheck {
  double F_value;
  double K;
  double J_value;
  double c_realized;  // smallest covariance eigenvalue along the path
  double C_realized;  // largest
  bool satisfied;
};

/// Checks F_beta(A, Sigma) <= K J_alpha(A, Sigma) with
/// K = max(4 beta C^2 / (alpha c), (1 - beta)/(1 - alpha)) built from the
/// realized spectral extremes of the solution path (the sharpest constants
/// the bound admits).
inline FisherBoundCheck fisher_bound_check(const SteeringProblem& problem,
                                           const FoncSolution& solution, double beta) {
  const double alpha = solution.alpha;
  if (!(alpha > 0.0 && alpha < 1.0))
    throw Error("fisher_bound_check: requires 0 < alpha < 1");
  if (!(beta > 0.0 && beta < 1.0)) throw Error("fisher_bound_check: requires 0 < beta < 1");

  const CovariancePath path = solution.path();
  const GainTrajectory gains = solution.gains();

  double c = std::numeric_limits<double>::infinity(), C = 0.0;
  for (const auto& node : path.sigma) {
    const auto eig = matfun::sym_eig(node);
    c = std::min(c, eig.eigenvalues.minCoeff());
    C = std::max(C, eig.eigenvalues.maxCoeff());
  }

  const double K = std::max(4.0 * beta * C * C / (alpha * c), (1.0 - beta) / (1.0 - alpha));
  const double F = fisher_cost(beta, gains, path).total;
  const double J = model::attention_cost(problem.with_alpha(alpha), gains, path).total;
  return FisherBoundCheck{F, K, J, c, C, F <= K * J * (1.0 + 1e-9)};
}

}  // namespace attnsteer::fisher
