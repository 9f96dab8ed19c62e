#pragma once

#include <Eigen/Dense>

#include <atomic>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace attnsteer {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// Base class for all library errors.
struct Error : std::runtime_error {
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

struct SymmetryViolation : Error {
  using Error::Error;
};
struct NotPositiveDefinite : Error {
  using Error::Error;
};
struct SingularMatrix : Error {
  using Error::Error;
};
struct OutOfHorizon : Error {
  using Error::Error;
};
struct GridMismatch : Error {
  using Error::Error;
};
struct IllConditionedState : Error {
  using Error::Error;
};
struct BoundsUnavailable : Error {
  using Error::Error;
};
struct SweepAborted : Error {
  using Error::Error;
};
struct InfeasibleWithinBudget : Error {
  using Error::Error;
};
struct NoRealLogAnywhere : Error {
  using Error::Error;
};

/// Covariance lost positive definiteness during propagation or a solve.
struct IndefiniteCovariance : Error {
  int node;
  explicit IndefiniteCovariance(int node_index)
      : Error("covariance not positive definite at node " + std::to_string(node_index)),
        node(node_index) {}
};

// ---------------------------------------------------------------------------
// Small matrix helpers shared across modules.

inline Matrix symmetrize(const Matrix& S) { return 0.5 * (S + S.transpose()); }

inline Matrix skew_part(const Matrix& A) { return 0.5 * (A - A.transpose()); }

inline bool all_finite(const Matrix& A) { return A.allFinite(); }

/// Max |S_ij - S_ji| relative to max|S|; zero for exactly symmetric input.
inline double symmetry_defect(const Matrix& S) {
  const double scale = S.cwiseAbs().maxCoeff();
  if (scale == 0.0) return 0.0;
  return (S - S.transpose()).cwiseAbs().maxCoeff() / scale;
}

/// Cholesky-based positive definiteness test on an (assumed symmetric) matrix.
inline bool is_positive_definite(const Matrix& S) {
  Eigen::LLT<Matrix> llt(symmetrize(S));
  return llt.info() == Eigen::Success;
}

// ---------------------------------------------------------------------------
// Symmetric vectorization (vech): lower triangle, row by row.

inline int vech_size(int n) { return n * (n + 1) / 2; }

inline void vech_into(const Matrix& S, double* out) {
  int k = 0;
  for (int i = 0; i < S.rows(); ++i)
    for (int j = 0; j <= i; ++j) out[k++] = S(i, j);
}

inline Vector vech(const Matrix& S) {
  Vector v(vech_size(static_cast<int>(S.rows())));
  vech_into(S, v.data());
  return v;
}

inline void unvech_into(const double* v, int n, Matrix& S) {
  S.resize(n, n);
  int k = 0;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j <= i; ++j) {
      S(i, j) = v[k];
      S(j, i) = v[k];
      ++k;
    }
}

inline Matrix unvech(const Vector& v, int n) {
  Matrix S;
  unvech_into(v.data(), n, S);
  return S;
}

// ---------------------------------------------------------------------------
// Deterministic RNG: SplitMix64 streams plus Box-Muller normals. Streams are
// keyed by (seed, stream index) so draws do not depend on scheduling.

class SplitMix64 {
 public:
  explicit SplitMix64(std::uint64_t seed) : state_(seed) {}

  SplitMix64(std::uint64_t seed, std::uint64_t stream)
      : state_(seed ^ (0x9e3779b97f4a7c15ULL + stream * 0xbf58476d1ce4e5b9ULL)) {
    next();  // decorrelate nearby streams
  }

  std::uint64_t next() {
    std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  /// Uniform on (0, 1].
  double uniform() { return (static_cast<double>(next() >> 11) + 1.0) * 0x1.0p-53; }

  /// Standard normal via Box-Muller.
  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    const double u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 6.283185307179586476925286766559 * u2;
    spare_ = r * std::sin(a);
    have_spare_ = true;
    return r * std::cos(a);
  }

 private:
  std::uint64_t state_;
  double spare_ = 0.0;
  bool have_spare_ = false;
};

// ---------------------------------------------------------------------------
// Thread budget and a deterministic parallel loop. Each index writes only to
// its own output slot, so results are identical for any thread count.

inline int thread_budget() {
  if (const char* env = std::getenv("ATTNSTEER_THREADS")) {
    const int v = std::atoi(env);
    if (v >= 1) return v;
  }
  const unsigned hc = std::thread::hardware_concurrency();
  return hc == 0 ? 1 : static_cast<int>(hc);
}

template <class Body>
void parallel_for(int begin, int end, Body&& body) {
  const int count = end - begin;
  if (count <= 0) return;
  const int workers = std::min(thread_budget(), count);
  if (workers <= 1) {
    for (int i = begin; i < end; ++i) body(i);
    return;
  }
  std::atomic<int> next(begin);
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (int w = 0; w < workers; ++w) {
    pool.emplace_back([&]() {
      for (int i = next.fetch_add(1); i < end; i = next.fetch_add(1)) body(i);
    });
  }
  for (auto& t : pool) t.join();
}

/// Full-precision scientific formatting (17 significant digits) used by all
/// CSV/JSON writers so stored values round-trip exactly.
inline std::string format_full(double x) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.16e", x);
  return buf;
}

}  // namespace attnsteer
