#pragma once

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "attnsteer/common.hpp"

namespace attnsteer {

/// Relative tolerance under which a matrix counts as symmetric.
inline constexpr double kSymmetryTol = 1e-12;

/// Symmetric positive definite matrix. Construction symmetrizes (after
/// checking the defect is within tolerance) and verifies the smallest
/// eigenvalue is strictly positive.
class SpdMatrix {
 public:
  explicit SpdMatrix(const Matrix& S) : m_(validate(S)) {}

  const Matrix& value() const { return m_; }
  int dim() const { return static_cast<int>(m_.rows()); }
  double operator()(int i, int j) const { return m_(i, j); }

 private:
  static Matrix validate(const Matrix& S) {
    if (S.rows() != S.cols()) throw SymmetryViolation("SpdMatrix: matrix is not square");
    if (!all_finite(S)) throw NotPositiveDefinite("SpdMatrix: non-finite entries");
    if (symmetry_defect(S) > kSymmetryTol)
      throw SymmetryViolation("SpdMatrix: symmetry defect exceeds tolerance");
    Matrix sym = symmetrize(S);
    Eigen::SelfAdjointEigenSolver<Matrix> es(sym, Eigen::EigenvaluesOnly);
    if (es.eigenvalues().minCoeff() <= 0.0)
      throw NotPositiveDefinite("SpdMatrix: smallest eigenvalue is not strictly positive");
    return sym;
  }

  Matrix m_;
};

/// Uniform grid of N nodes on [0, T].
class TimeGrid {
 public:
  TimeGrid(int num_nodes, double horizon) : N_(num_nodes), T_(horizon) {
    if (num_nodes < 2) throw Error("TimeGrid: need at least 2 nodes");
    if (!(horizon > 0.0)) throw Error("TimeGrid: horizon must be positive");
    times_.resize(N_);
    for (int i = 0; i < N_; ++i) times_[i] = T_ * static_cast<double>(i) / (N_ - 1);
    times_.front() = 0.0;
    times_.back() = T_;  // endpoints exact
  }

  int size() const { return N_; }
  double horizon() const { return T_; }
  double spacing() const { return T_ / (N_ - 1); }
  double t(int i) const { return times_[i]; }
  const std::vector<double>& times() const { return times_; }

  bool same_as(const TimeGrid& other) const {
    return N_ == other.N_ && T_ == other.T_;
  }

 private:
  int N_;
  double T_;
  std::vector<double> times_;
};

/// Feedback gain trajectory: per-node gain A and its time derivative.
struct GainTrajectory {
  TimeGrid grid;
  std::vector<Matrix> A;
  std::vector<Matrix> A_dot;

  GainTrajectory(TimeGrid g, std::vector<Matrix> a, std::vector<Matrix> a_dot)
      : grid(std::move(g)), A(std::move(a)), A_dot(std::move(a_dot)) {
    if (static_cast<int>(A.size()) != grid.size() ||
        static_cast<int>(A_dot.size()) != grid.size())
      throw GridMismatch("GainTrajectory: node count does not match grid");
  }

  int dim() const { return static_cast<int>(A.front().rows()); }

  /// Linear interpolation of the gain between nodes (clamped at the ends).
  Matrix gain_at(double time) const {
    const double h = grid.spacing();
    if (time <= 0.0) return A.front();
    if (time >= grid.horizon()) return A.back();
    const int i = std::min(static_cast<int>(time / h), grid.size() - 2);
    const double w = (time - grid.t(i)) / h;
    return (1.0 - w) * A[i] + w * A[i + 1];
  }

  /// Diagnostic: max deviation of centered differences of A from A_dot at
  /// interior nodes. O(h^2) on smooth trajectories.
  double derivative_mismatch() const {
    const double h = grid.spacing();
    double worst = 0.0;
    for (int i = 1; i + 1 < grid.size(); ++i) {
      const Matrix fd = (A[i + 1] - A[i - 1]) / (2.0 * h);
      worst = std::max(worst, (fd - A_dot[i]).cwiseAbs().maxCoeff());
    }
    return worst;
  }
};

/// Covariance trajectory; every node must be SPD.
struct CovariancePath {
  TimeGrid grid;
  std::vector<Matrix> sigma;

  CovariancePath(TimeGrid g, std::vector<Matrix> nodes)
      : grid(std::move(g)), sigma(std::move(nodes)) {
    if (static_cast<int>(sigma.size()) != grid.size())
      throw GridMismatch("CovariancePath: node count does not match grid");
    for (std::size_t i = 0; i < sigma.size(); ++i) {
      if (!is_positive_definite(sigma[i])) throw IndefiniteCovariance(static_cast<int>(i));
      sigma[i] = symmetrize(sigma[i]);
    }
  }

  int dim() const { return static_cast<int>(sigma.front().rows()); }
};

/// A full covariance steering problem instance.
struct SteeringProblem {
  int n;
  int m;
  SpdMatrix sigma_init;
  SpdMatrix sigma_fin;
  Matrix B;  // n x m noise channel
  double T;
  double alpha;

  SteeringProblem(SpdMatrix init, SpdMatrix fin, Matrix noise, double horizon, double weight)
      : n(init.dim()),
        m(static_cast<int>(noise.cols())),
        sigma_init(std::move(init)),
        sigma_fin(std::move(fin)),
        B(std::move(noise)),
        T(horizon),
        alpha(weight) {
    if (sigma_fin.dim() != n) throw Error("SteeringProblem: endpoint dimensions differ");
    if (B.rows() != n) throw Error("SteeringProblem: noise channel row count != n");
    if (!all_finite(B)) throw Error("SteeringProblem: noise channel has non-finite entries");
    if (!(T > 0.0)) throw Error("SteeringProblem: horizon must be positive");
    if (!(alpha >= 0.0 && alpha <= 1.0)) throw Error("SteeringProblem: alpha must be in [0, 1]");
  }

  Matrix noise_gram() const { return B * B.transpose(); }

  SteeringProblem with_alpha(double a) const {
    return SteeringProblem(sigma_init, sigma_fin, B, T, a);
  }
};

}  // namespace attnsteer
