#pragma once

// Shared generators and assertions for the test suite. All randomness is
// seeded SplitMix64 so every test run is reproducible.

#include <cmath>
#include <vector>

#include "attnsteer/common.hpp"
#include "attnsteer/matfun.hpp"
#include "attnsteer/types.hpp"

namespace test {

using attnsteer::Matrix;
using attnsteer::SplitMix64;
using attnsteer::Vector;

inline Matrix random_matrix(SplitMix64& rng, int rows, int cols) {
  Matrix A(rows, cols);
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j) A(i, j) = rng.normal();
  return A;
}

inline Matrix random_orthogonal(SplitMix64& rng, int n) {
  const Matrix G = random_matrix(rng, n, n);
  Eigen::HouseholderQR<Matrix> qr(G);
  Matrix Q = qr.householderQ();
  // fix signs so the factorization is unique-ish
  const Matrix R = qr.matrixQR().triangularView<Eigen::Upper>();
  for (int j = 0; j < n; ++j)
    if (R(j, j) < 0) Q.col(j) *= -1.0;
  return Q;
}

/// Random SPD matrix with prescribed condition number (eigenvalues log-spaced
/// in [1/sqrt(cond), sqrt(cond)]).
inline Matrix random_spd(SplitMix64& rng, int n, double cond) {
  const Matrix Q = random_orthogonal(rng, n);
  Vector eigs(n);
  for (int i = 0; i < n; ++i) {
    const double f = (n == 1) ? 0.5 : static_cast<double>(i) / (n - 1);
    eigs(i) = std::pow(cond, f - 0.5);
  }
  return attnsteer::symmetrize(Q * eigs.asDiagonal() * Q.transpose());
}

inline double rel_frobenius(const Matrix& A, const Matrix& B) {
  const double scale = B.norm();
  return (A - B).norm() / (scale > 0 ? scale : 1.0);
}

/// The shipped 2-D example endpoints used throughout the suite.
inline Matrix example_sigma_init() {
  Matrix S(2, 2);
  const double r = std::sqrt(11.0);
  S << 4.0, r, r, 3.0;
  return S;
}

inline Matrix example_sigma_fin() {
  Matrix S(2, 2);
  S << 2.0, -1.0, -1.0, 1.0;
  return S;
}

inline attnsteer::SteeringProblem example_problem(double alpha) {
  return attnsteer::SteeringProblem(attnsteer::SpdMatrix(example_sigma_init()),
                                    attnsteer::SpdMatrix(example_sigma_fin()),
                                    0.2 * Matrix::Identity(2, 2), 1.0, alpha);
}

/// Smooth synthetic gain trajectory for property tests.
inline attnsteer::GainTrajectory smooth_gains(const attnsteer::TimeGrid& grid, SplitMix64& rng,
                                              int n, double amplitude = 0.6) {
  const Matrix M0 = amplitude * random_matrix(rng, n, n);
  const Matrix M1 = amplitude * random_matrix(rng, n, n);
  std::vector<Matrix> A(grid.size()), A_dot(grid.size());
  for (int i = 0; i < grid.size(); ++i) {
    const double t = grid.t(i);
    A[i] = M0 * std::sin(t) + M1 * std::cos(2.0 * t);
    A_dot[i] = M0 * std::cos(t) - 2.0 * M1 * std::sin(2.0 * t);
  }
  return attnsteer::GainTrajectory(grid, std::move(A), std::move(A_dot));
}

}  // namespace test
