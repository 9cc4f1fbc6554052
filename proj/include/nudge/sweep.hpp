#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "nudge/config.hpp"
#include "nudge/policy.hpp"

namespace nudge {

/// Value lists for the swept axes; empty axes inherit the base scenario's
/// value. The sweep is the Cartesian product.
struct SweepSpec {
  std::vector<double> alphas;
  std::vector<double> rhos;
  std::vector<double> betas;
  std::vector<std::uint64_t> seeds;
  std::vector<std::string> policies;  // "naive" and/or "rh"
};

SweepSpec parse_sweep(const std::string& path);
SweepSpec parse_sweep_text(const std::string& text, const std::string& name);

struct SweepCell {
  std::string policy;
  double alpha = 0.0;
  double rho = 0.0;  // scalar broadcast; NaN marks "base config value"
  double beta = 0.0;
  std::uint64_t seed_label = 0;
  std::uint64_t derived_seed = 0;
  std::string id;        // canonical parameter string
  std::string dir_name;  // filesystem-safe
};

/// The resolved Cartesian product in a deterministic order, with one
/// derived seed per cell (stable under adding sweep values elsewhere).
std::vector<SweepCell> enumerate_cells(const SweepSpec& spec,
                                       const ScenarioConfig& base);

struct CellResult {
  SweepCell cell;
  bool ok = false;
  std::string error;
  RunSummary summary;
  double wall_ms = 0.0;
};

/// Runs every cell (optionally in parallel), writing per-run artifacts
/// under out_dir/runs/<cell>/, a combined summary table, and a manifest
/// with config echo, seeds, and artifact content hashes. A failing cell is
/// recorded and does not abort the rest.
std::vector<CellResult> run_sweep(const SweepSpec& spec,
                                  const ScenarioConfig& base,
                                  const std::string& out_dir, int jobs);

/// Rebuilds the combined summary from per-run artifacts on disk; returns
/// the summary text.
std::string report_run_dir(const std::string& out_dir);

/// Summary rows sorted by (policy, beta, alpha, rho, seed).
std::string summary_table(const std::vector<CellResult>& results);

}  // namespace nudge
