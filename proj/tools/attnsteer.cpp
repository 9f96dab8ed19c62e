#include <CLI11.hpp>

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "attnsteer/commands.hpp"

int main(int argc, char** argv) {
  CLI::App app{"attnsteer: minimum-attention covariance steering"};
  app.require_subcommand(1);

  std::string problem_path, out_dir = "out", gains_csv;
  double contour_scale = 1.0;
  double beta = 0.5;
  std::vector<double> alphas;
  std::optional<double> alpha_override;
  std::optional<int> paths, substeps;
  std::optional<std::uint64_t> seed;

  auto* solve = app.add_subcommand("solve", "solve one steering problem");
  solve->add_option("problem", problem_path, "problem JSON file")->required();
  solve->add_option("--alpha", alpha_override, "override the attention weight");
  solve->add_option("--out", out_dir, "output directory");
  solve->add_option("--contour-scale", contour_scale, "level-set scale for ellipse.csv");

  auto* sweep = app.add_subcommand("sweep", "continuation sweep over attention weights");
  sweep->add_option("problem", problem_path, "problem JSON file")->required();
  sweep->add_option("--alphas", alphas, "weights to solve (continuation from 0.5 outward)")
      ->delimiter(',');
  sweep->add_option("--out", out_dir, "output directory");

  auto* fisher = app.add_subcommand("fisher", "Fisher-Rao geodesic and bound check");
  fisher->add_option("problem", problem_path, "problem JSON file")->required();
  fisher->add_option("--beta", beta, "Fisher cost weight in (0,1)");
  fisher->add_option("--out", out_dir, "output directory");

  auto* simulate = app.add_subcommand("simulate", "Monte-Carlo validation of solved gains");
  simulate->add_option("problem", problem_path, "problem JSON file")->required();
  simulate->add_option("--paths", paths, "number of sample paths");
  simulate->add_option("--seed", seed, "RNG seed (recorded in output)");
  simulate->add_option("--substeps", substeps, "Euler substeps per grid interval");
  simulate->add_option("--gains", gains_csv, "reuse a solved gain.csv instead of solving");
  simulate->add_option("--out", out_dir, "output directory");

  CLI11_PARSE(app, argc, argv);

  if (solve->parsed())
    return attnsteer::cli::cmd_solve(problem_path, alpha_override, out_dir, contour_scale);
  if (sweep->parsed()) return attnsteer::cli::cmd_sweep(problem_path, alphas, out_dir);
  if (fisher->parsed()) return attnsteer::cli::cmd_fisher(problem_path, beta, out_dir);
  if (simulate->parsed())
    return attnsteer::cli::cmd_simulate(problem_path, paths, seed, substeps, gains_csv, out_dir);
  return 2;
}
