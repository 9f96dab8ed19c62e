#pragma once

// Monte-Carlo validation of solved gain trajectories: Euler-Maruyama
// simulation of dX = A_t X dt + B dW with X_0 ~ N(0, Sigma_init), empirical
// covariances at the grid nodes, and the deviation from the deterministic
// Lyapunov path. Per-path RNG streams are keyed by (seed, path index) and
// partial sums are accumulated in fixed chunks, so output is bit-identical
// for any thread count.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <utility>
#include <vector>

#include "attnsteer/common.hpp"
#include "attnsteer/matfun.hpp"
#include "attnsteer/model.hpp"
#include "attnsteer/types.hpp"

namespace attnsteer::mc {

struct SimConfig {
  int num_paths = 20000;
  int substeps = 4;       // Euler substeps per grid interval
  std::uint64_t seed = 0; // required; recorded in all outputs
};

struct SimResult {
  std::vector<Matrix> empirical;            // per-node (1/P) sum x x^T
  CovariancePath reference;                 // deterministic Lyapunov path
  std::vector<double> node_deviation;       // |emp - ref|_F / |ref|_F per node
  double max_rel_deviation;
  std::vector<std::vector<Vector>> sample_paths;  // first K paths, per node
};

namespace detail {

inline constexpr int kChunk = 256;

}  // namespace detail

inline SimResult simulate_paths(const SteeringProblem& problem, const GainTrajectory& gains,
                                const SimConfig& config, int keep_paths = 32) {
  if (config.num_paths < 100) throw Error("simulate_paths: need at least 100 paths");
  if (config.substeps < 1) throw Error("simulate_paths: need at least 1 substep");

  const int n = problem.n;
  const int m = problem.m;
  const int N = gains.grid.size();
  const int P = config.num_paths;
  const int S = config.substeps;
  const double h = gains.grid.spacing();
  const double dt = h / S;
  const double sqrt_dt = std::sqrt(dt);
  const int kept = std::min(keep_paths, P);

  const Matrix sqrt_init = matfun::spd_sqrt(problem.sigma_init.value());
  const Matrix& B = problem.B;

  // gains at substep midpoints, shared across paths
  std::vector<Matrix> gain_mid(static_cast<std::size_t>(N - 1) * S);
  for (int i = 0; i + 1 < N; ++i)
    for (int s = 0; s < S; ++s) {
      const double w = (static_cast<double>(s) + 0.5) / S;
      gain_mid[i * S + s] = (1.0 - w) * gains.A[i] + w * gains.A[i + 1];
    }

  const int chunks = (P + detail::kChunk - 1) / detail::kChunk;
  std::vector<std::vector<double>> partial(chunks);
  std::vector<std::vector<Vector>> samples(kept);

  parallel_for(0, chunks, [&](int c) {
    std::vector<double>& acc = partial[c];
    acc.assign(static_cast<std::size_t>(N) * n * n, 0.0);
    Vector x(n), tmp(n), noise(m), w(m);

    const int lo = c * detail::kChunk;
    const int hi = std::min(P, lo + detail::kChunk);
    for (int p = lo; p < hi; ++p) {
      SplitMix64 rng(config.seed, static_cast<std::uint64_t>(p));
      for (int i = 0; i < n; ++i) tmp(i) = rng.normal();
      x.noalias() = sqrt_init * tmp;

      const bool record = p < kept;
      if (record) {
        samples[p].resize(N);
        samples[p][0] = x;
      }
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) acc[static_cast<std::size_t>(i) * n + j] += x(i) * x(j);

      for (int i = 0; i + 1 < N; ++i) {
        for (int s = 0; s < S; ++s) {
          const Matrix& A = gain_mid[i * S + s];
          tmp.noalias() = A * x;
          for (int k = 0; k < m; ++k) w(k) = rng.normal();
          noise.noalias() = B * w;
          x += dt * tmp + sqrt_dt * noise;
        }
        double* node_acc = acc.data() + static_cast<std::size_t>(i + 1) * n * n;
        for (int r = 0; r < n; ++r)
          for (int cc = 0; cc < n; ++cc) node_acc[r * n + cc] += x(r) * x(cc);
        if (record) samples[p][i + 1] = x;
      }
    }
  });

  // deterministic reduction in chunk order
  std::vector<Matrix> empirical(N, Matrix::Zero(n, n));
  for (int c = 0; c < chunks; ++c)
    for (int i = 0; i < N; ++i)
      for (int r = 0; r < n; ++r)
        for (int cc = 0; cc < n; ++cc)
          empirical[i](r, cc) += partial[c][static_cast<std::size_t>(i) * n * n + r * n + cc];
  for (auto& E : empirical) E /= static_cast<double>(P);

  CovariancePath reference = model::propagate_lyapunov(problem, gains);
  std::vector<double> deviation(N);
  double worst = 0.0;
  for (int i = 0; i < N; ++i) {
    deviation[i] = (empirical[i] - reference.sigma[i]).norm() / reference.sigma[i].norm();
    worst = std::max(worst, deviation[i]);
  }

  return SimResult{std::move(empirical), std::move(reference), std::move(deviation), worst,
                   std::move(samples)};
}

}  // namespace attnsteer::mc
