#pragma once

// Problem-file parsing (JSON) and trajectory serialization (CSV). All numeric
// CSV output is full-precision scientific notation (17 significant digits) so
// downstream recomputation is exact to the last ulp of the stored values.

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "attnsteer/common.hpp"
#include "attnsteer/matfun.hpp"
#include "attnsteer/types.hpp"

namespace attnsteer::io {

using nlohmann::json;

struct SolverOptions {
  std::optional<int> grid_size;
  std::optional<double> newton_tol;
  std::optional<int> max_newton_iters;
  std::optional<std::vector<double>> continuation;
  std::optional<std::uint64_t> seed;
  std::optional<int> num_paths;
  std::optional<int> substeps;
};

struct ProblemFile {
  SteeringProblem problem;
  SolverOptions solver;
};

namespace detail {

inline Matrix parse_matrix(const json& doc, const std::string& key, int rows, int cols) {
  if (!doc.contains(key)) throw Error("problem file: missing key \"" + key + "\"");
  const auto& arr = doc.at(key);
  if (!arr.is_array() || static_cast<int>(arr.size()) != rows * cols)
    throw Error("problem file: key \"" + key + "\" must be a row-major array of " +
                std::to_string(rows * cols) + " numbers");
  Matrix M(rows, cols);
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j) {
      const auto& v = arr.at(i * cols + j);
      if (!v.is_number()) throw Error("problem file: key \"" + key + "\" has a non-numeric entry");
      M(i, j) = v.get<double>();
    }
  return M;
}

template <class T>
T require_scalar(const json& doc, const std::string& key) {
  if (!doc.contains(key)) throw Error("problem file: missing key \"" + key + "\"");
  try {
    return doc.at(key).get<T>();
  } catch (const json::exception&) {
    throw Error("problem file: key \"" + key + "\" has the wrong type");
  }
}

}  // namespace detail

inline ProblemFile load_problem(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open problem file: " + path);
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::exception& e) {
    throw Error(std::string("problem file is not valid JSON: ") + e.what());
  }

  const int n = detail::require_scalar<int>(doc, "n");
  const int m = detail::require_scalar<int>(doc, "m");
  if (n < 1 || m < 1) throw Error("problem file: keys \"n\" and \"m\" must be positive");
  const double T = detail::require_scalar<double>(doc, "T");
  const double alpha = detail::require_scalar<double>(doc, "alpha");

  auto spd_of = [&](const std::string& key) {
    try {
      return SpdMatrix(detail::parse_matrix(doc, key, n, n));
    } catch (const SymmetryViolation&) {
      throw Error("problem file: key \"" + key + "\" is not symmetric");
    } catch (const NotPositiveDefinite&) {
      throw Error("problem file: key \"" + key + "\" is not positive definite");
    }
  };
  SpdMatrix sigma_init = spd_of("sigma_init");
  SpdMatrix sigma_fin = spd_of("sigma_fin");
  const Matrix B = detail::parse_matrix(doc, "B", n, m);

  SolverOptions opts;
  if (doc.contains("solver")) {
    const auto& s = doc.at("solver");
    if (!s.is_object()) throw Error("problem file: key \"solver\" must be an object");
    if (s.contains("grid_size")) opts.grid_size = s.at("grid_size").get<int>();
    if (s.contains("newton_tol")) opts.newton_tol = s.at("newton_tol").get<double>();
    if (s.contains("max_newton_iters"))
      opts.max_newton_iters = s.at("max_newton_iters").get<int>();
    if (s.contains("continuation"))
      opts.continuation = s.at("continuation").get<std::vector<double>>();
    if (s.contains("seed")) opts.seed = s.at("seed").get<std::uint64_t>();
    if (s.contains("num_paths")) opts.num_paths = s.at("num_paths").get<int>();
    if (s.contains("substeps")) opts.substeps = s.at("substeps").get<int>();
  }

  try {
    return ProblemFile{SteeringProblem(std::move(sigma_init), std::move(sigma_fin), B, T, alpha),
                       std::move(opts)};
  } catch (const Error& e) {
    throw Error(std::string("problem file: ") + e.what());
  }
}

// ---------------------------------------------------------------------------
// CSV writers

namespace detail {

inline std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot open output file: " + path.string());
  return out;
}

}  // namespace detail

inline void write_sigma_csv(const std::filesystem::path& path, const CovariancePath& cov) {
  auto out = detail::open_out(path);
  const int n = cov.dim();
  out << "t";
  for (int i = 0; i < n; ++i)
    for (int j = 0; j <= i; ++j) out << ",sigma_" << i << "_" << j;
  out << "\n";
  for (int k = 0; k < cov.grid.size(); ++k) {
    out << format_full(cov.grid.t(k));
    for (int i = 0; i < n; ++i)
      for (int j = 0; j <= i; ++j) out << "," << format_full(cov.sigma[k](i, j));
    out << "\n";
  }
}

inline void write_gain_csv(const std::filesystem::path& path, const GainTrajectory& gains) {
  auto out = detail::open_out(path);
  const int n = gains.dim();
  out << "t";
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) out << ",A_" << i << "_" << j;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) out << ",Adot_" << i << "_" << j;
  out << "\n";
  for (int k = 0; k < gains.grid.size(); ++k) {
    out << format_full(gains.grid.t(k));
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) out << "," << format_full(gains.A[k](i, j));
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) out << "," << format_full(gains.A_dot[k](i, j));
    out << "\n";
  }
}

/// Equiprobability level-set points x = scale * Sigma^{1/2} u(phi) sampled at
/// `angles` angles per node (n = 2 only; other dimensions are skipped by the
/// caller).
inline void write_ellipse_csv(const std::filesystem::path& path, const CovariancePath& cov,
                              int angles, double scale) {
  if (cov.dim() != 2) throw Error("write_ellipse_csv: level-set output is 2-dimensional only");
  auto out = detail::open_out(path);
  out << "node,t,angle,x,y\n";
  for (int k = 0; k < cov.grid.size(); ++k) {
    const Matrix root = matfun::spd_sqrt(cov.sigma[k]);
    for (int a = 0; a < angles; ++a) {
      const double phi = 2.0 * M_PI * a / angles;
      Vector u(2);
      u << std::cos(phi), std::sin(phi);
      const Vector x = scale * (root * u);
      out << k << "," << format_full(cov.grid.t(k)) << "," << a << "," << format_full(x(0))
          << "," << format_full(x(1)) << "\n";
    }
  }
}

struct SweepRow {
  double alpha;
  double J_total, J_spatial, J_temporal;
  double residual;
  int newton_iters;
  std::string status;
};

inline void write_summary_csv(const std::filesystem::path& path,
                              const std::vector<SweepRow>& rows) {
  auto out = detail::open_out(path);
  out << "alpha,J_total,J_spatial,J_temporal,residual,newton_iters,status\n";
  for (const auto& r : rows) {
    out << format_full(r.alpha) << "," << format_full(r.J_total) << ","
        << format_full(r.J_spatial) << "," << format_full(r.J_temporal) << ","
        << format_full(r.residual) << "," << r.newton_iters << "," << r.status << "\n";
  }
}

// ---------------------------------------------------------------------------
// CSV readers (round-trip verification and gain reuse)

namespace detail {

inline std::vector<std::vector<double>> read_csv_numeric(const std::filesystem::path& path,
                                                         std::string& header) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open CSV file: " + path.string());
  std::getline(in, header);
  std::vector<std::vector<double>> rows;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<double> row;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) row.push_back(std::stod(cell));
    rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace detail

inline GainTrajectory read_gain_csv(const std::filesystem::path& path, int n) {
  std::string header;
  const auto rows = detail::read_csv_numeric(path, header);
  if (rows.empty()) throw Error("gain CSV is empty: " + path.string());
  const int N = static_cast<int>(rows.size());
  const std::size_t expected = 1 + 2 * static_cast<std::size_t>(n) * n;
  for (const auto& r : rows)
    if (r.size() != expected) throw Error("gain CSV has wrong column count: " + path.string());

  const TimeGrid grid(N, rows.back()[0]);
  std::vector<Matrix> A(N), A_dot(N);
  for (int k = 0; k < N; ++k) {
    A[k].resize(n, n);
    A_dot[k].resize(n, n);
    int col = 1;
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) A[k](i, j) = rows[k][col++];
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) A_dot[k](i, j) = rows[k][col++];
  }
  return GainTrajectory(grid, std::move(A), std::move(A_dot));
}

inline CovariancePath read_sigma_csv(const std::filesystem::path& path, int n) {
  std::string header;
  const auto rows = detail::read_csv_numeric(path, header);
  if (rows.empty()) throw Error("sigma CSV is empty: " + path.string());
  const int N = static_cast<int>(rows.size());
  const std::size_t expected = 1 + static_cast<std::size_t>(vech_size(n));
  for (const auto& r : rows)
    if (r.size() != expected) throw Error("sigma CSV has wrong column count: " + path.string());

  const TimeGrid grid(N, rows.back()[0]);
  std::vector<Matrix> sigma(N);
  for (int k = 0; k < N; ++k) {
    sigma[k].resize(n, n);
    int col = 1;
    for (int i = 0; i < n; ++i)
      for (int j = 0; j <= i; ++j) {
        sigma[k](i, j) = rows[k][col];
        sigma[k](j, i) = rows[k][col];
        ++col;
      }
  }
  return CovariancePath(grid, std::move(sigma));
}

inline void write_json(const std::filesystem::path& path, const json& doc) {
  auto out = detail::open_out(path);
  out << doc.dump(2) << "\n";
}

inline json matrix_to_json(const Matrix& M) {
  json arr = json::array();
  for (int i = 0; i < M.rows(); ++i)
    for (int j = 0; j < M.cols(); ++j) arr.push_back(M(i, j));
  return arr;
}

}  // namespace attnsteer::io
