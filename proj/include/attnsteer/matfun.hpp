#pragma once

// Dense matrix-function kernels for small matrices (n <= ~10). Symmetric
// functions go through a full eigendecomposition; the general exponential
// uses scaling-and-squaring with a diagonal Pade core; the general real
// logarithm uses inverse scaling (Denman-Beavers square roots) plus a
// Gauss-Legendre quadrature of the integral representation.

#include <algorithm>
#include <cmath>
#include <optional>

#include "attnsteer/common.hpp"
#include "attnsteer/types.hpp"

namespace attnsteer::matfun {

struct SymEig {
  Vector eigenvalues;   // ascending
  Matrix eigenvectors;  // orthonormal columns
};

/// Eigendecomposition of a symmetric matrix; input is symmetrized after the
/// defect check so round-off drift does not leak into the spectrum.
inline SymEig sym_eig(const Matrix& S) {
  if (S.rows() != S.cols()) throw SymmetryViolation("sym_eig: matrix is not square");
  if (!all_finite(S)) throw SymmetryViolation("sym_eig: non-finite entries");
  if (symmetry_defect(S) > kSymmetryTol)
    throw SymmetryViolation("sym_eig: symmetry defect exceeds tolerance");
  Eigen::SelfAdjointEigenSolver<Matrix> es(symmetrize(S));
  if (es.info() != Eigen::Success) throw Error("sym_eig: eigensolver failed");
  return SymEig{es.eigenvalues(), es.eigenvectors()};
}

namespace detail {

template <class Fn>
Matrix sym_function(const Matrix& S, Fn&& f, bool require_positive, const char* name) {
  SymEig eig = sym_eig(S);
  if (require_positive && eig.eigenvalues.minCoeff() <= 0.0)
    throw NotPositiveDefinite(std::string(name) + ": matrix is not positive definite");
  Vector mapped = eig.eigenvalues.unaryExpr(f);
  return symmetrize(eig.eigenvectors * mapped.asDiagonal() * eig.eigenvectors.transpose());
}

}  // namespace detail

/// Principal square root of an SPD matrix.
inline Matrix spd_sqrt(const Matrix& S) {
  return detail::sym_function(S, [](double x) { return std::sqrt(x); }, true, "spd_sqrt");
}

/// Principal logarithm of an SPD matrix (symmetric result).
inline Matrix spd_log(const Matrix& S) {
  return detail::sym_function(S, [](double x) { return std::log(x); }, true, "spd_log");
}

/// Exponential of a symmetric matrix (SPD result).
inline Matrix spd_exp(const Matrix& S) {
  return detail::sym_function(S, [](double x) { return std::exp(x); }, false, "spd_exp");
}

/// Fractional power of an SPD matrix: eigenvalues raised to p in its eigenbasis.
inline Matrix spd_pow(const Matrix& S, double p) {
  return detail::sym_function(S, [p](double x) { return std::pow(x, p); }, true, "spd_pow");
}

/// General matrix exponential: scaling-and-squaring with a (6,6) Pade core.
inline Matrix mat_exp(const Matrix& A) {
  if (A.rows() != A.cols()) throw Error("mat_exp: matrix is not square");
  if (!all_finite(A)) throw Error("mat_exp: non-finite entries");
  const int n = static_cast<int>(A.rows());
  const Matrix I = Matrix::Identity(n, n);

  const double norm = A.cwiseAbs().rowwise().sum().maxCoeff();  // infinity norm
  int s = 0;
  if (norm > 0.5) s = static_cast<int>(std::ceil(std::log2(norm / 0.5)));

  Matrix X = A / std::pow(2.0, s);
  constexpr int q = 6;
  double c = 1.0;
  Matrix num = I;  // numerator polynomial in X
  Matrix den = I;  // denominator polynomial in -X
  Matrix P = I;
  for (int k = 1; k <= q; ++k) {
    c *= static_cast<double>(q - k + 1) / (k * (2 * q - k + 1));
    P = P * X;
    num += c * P;
    den += (k % 2 == 0 ? c : -c) * P;
  }
  Matrix E = den.partialPivLu().solve(num);
  for (int k = 0; k < s; ++k) E = E * E;
  return E;
}

namespace detail {

// 16-point Gauss-Legendre rule on [-1, 1].
inline constexpr double kGlNodes[8] = {
    0.0950125098376374, 0.2816035507792589, 0.4580167776572274, 0.6178762444026438,
    0.7554044083550030, 0.8656312023878318, 0.9445750230732326, 0.9894009349916499};
inline constexpr double kGlWeights[8] = {
    0.1894506104550685, 0.1826034150449236, 0.1691565193950025, 0.1495959888165767,
    0.1246289712555339, 0.0951585116824928, 0.0622535239386479, 0.0271524594117541};

/// log(G) for ||G - I|| small, via the integral representation
/// log(G) = int_0^1 (G - I) [t (G - I) + I]^{-1} dt on a 16-point rule.
inline Matrix log_near_identity(const Matrix& G) {
  const int n = static_cast<int>(G.rows());
  const Matrix E = G - Matrix::Identity(n, n);
  Matrix L = Matrix::Zero(n, n);
  for (int i = 0; i < 8; ++i) {
    for (int sign : {-1, 1}) {
      const double t = 0.5 + 0.5 * sign * kGlNodes[i];
      const Matrix M = t * E + Matrix::Identity(n, n);
      L += (0.5 * kGlWeights[i]) * M.partialPivLu().solve(E);
    }
  }
  return L;
}

/// Denman-Beavers iteration for the principal square root. Returns false if
/// the iteration fails to settle (spectrum too close to the negative axis).
inline bool db_sqrt(const Matrix& G, Matrix& root) {
  const int n = static_cast<int>(G.rows());
  Matrix Y = G;
  Matrix Z = Matrix::Identity(n, n);
  for (int it = 0; it < 100; ++it) {
    const Matrix Yinv = Y.partialPivLu().inverse();
    const Matrix Zinv = Z.partialPivLu().inverse();
    const Matrix Ynext = 0.5 * (Y + Zinv);
    const Matrix Znext = 0.5 * (Z + Yinv);
    const double delta = (Ynext - Y).norm();
    Y = Ynext;
    Z = Znext;
    if (!all_finite(Y) || !all_finite(Z)) return false;
    if (delta <= 1e-14 * std::max(1.0, Y.norm())) {
      root = Y;
      return true;
    }
  }
  return false;
}

}  // namespace detail

/// Real logarithm of an invertible matrix. Adopts the sufficient condition
/// that no eigenvalue lies on the closed negative real axis; returns nullopt
/// when the condition fails (or the inverse-scaling iteration cannot settle,
/// which happens only next to that branch cut).
inline std::optional<Matrix> real_log(const Matrix& G) {
  if (G.rows() != G.cols()) throw Error("real_log: matrix is not square");
  if (!all_finite(G)) throw Error("real_log: non-finite entries");
  const int n = static_cast<int>(G.rows());

  Eigen::EigenSolver<Matrix> es(G);
  if (es.info() != Eigen::Success) throw Error("real_log: eigensolver failed");
  const double scale = std::max(1.0, G.norm());
  for (int i = 0; i < n; ++i) {
    const std::complex<double> lam = es.eigenvalues()(i);
    if (std::abs(lam) <= 1e-14 * scale) throw SingularMatrix("real_log: singular matrix");
    if (lam.real() <= 0.0 && std::abs(lam.imag()) <= 1e-12 * std::max(1.0, std::abs(lam)))
      return std::nullopt;
  }

  Matrix X = G;
  int halvings = 0;
  while ((X - Matrix::Identity(n, n)).norm() > 0.25) {
    if (halvings >= 60) return std::nullopt;
    Matrix root;
    if (!detail::db_sqrt(X, root)) return std::nullopt;
    X = root;
    ++halvings;
  }
  Matrix L = std::pow(2.0, halvings) * detail::log_near_identity(X);

  // Round-trip guard: exp(L) must reproduce G to the documented tolerance.
  if ((mat_exp(L) - G).norm() > 1e-8 * std::max(1.0, G.norm())) return std::nullopt;
  return L;
}

/// State transition matrix Phi(t, s) solving d/dt Phi = A_t Phi, Phi(s,s) = I.
/// Classical RK4 at half the grid spacing, with the gain interpolated linearly
/// between nodes. s and t may be in either order.
inline Matrix state_transition(const GainTrajectory& gains, double t, double s) {
  const double T = gains.grid.horizon();
  const double slack = 1e-12 * T;
  if (t < -slack || t > T + slack || s < -slack || s > T + slack)
    throw OutOfHorizon("state_transition: time outside [0, T]");

  const int n = gains.dim();
  Matrix phi = Matrix::Identity(n, n);
  if (t == s) return phi;

  const double substep = 0.5 * gains.grid.spacing();
  const int steps = std::max(1, static_cast<int>(std::ceil(std::abs(t - s) / substep)));
  const double dt = (t - s) / steps;

  double u = s;
  for (int k = 0; k < steps; ++k) {
    const Matrix k1 = gains.gain_at(u) * phi;
    const Matrix k2 = gains.gain_at(u + 0.5 * dt) * (phi + 0.5 * dt * k1);
    const Matrix k3 = gains.gain_at(u + 0.5 * dt) * (phi + 0.5 * dt * k2);
    const Matrix k4 = gains.gain_at(u + dt) * (phi + dt * k3);
    phi += (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    u = s + (k + 1) * dt;
  }
  return phi;
}

}  // namespace attnsteer::matfun
