#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "nudge/dynamics.hpp"
#include "nudge/network.hpp"
#include "nudge/policy.hpp"

namespace nudge {

/// Where the scenario's network comes from: a CSV file or the synthetic
/// generator with an explicit seed.
struct NetworkSource {
  bool use_generator = true;
  std::string file;
  GeneratorParams generator;
  std::uint64_t generator_seed = 1;
};

/// A fully resolved scenario. Parsing applies defaults for every optional
/// key; unknown keys and out-of-range values are errors.
struct ScenarioConfig {
  int schema_version = 1;
  NetworkSource network;

  KernelVariant kernel_variant = KernelVariant::kIir;
  double tau = 3.0;
  int fir_window = 10;

  double alpha = 0.5;
  std::optional<double> rho_scalar;               // broadcast override
  std::optional<std::vector<double>> rho_vector;  // per-agent override
  double beta = 0.0;  // mandatory
  int horizon_T = 0;  // mandatory
  std::optional<double> x0_scalar;  // initial inclination; default u_o

  MpcConfig mpc;

  ObservationEstimator::Kind estimator_kind =
      ObservationEstimator::Kind::kRunningMean;
  double estimator_decay = 0.9;

  std::string output_dir = "out";
  std::uint64_t master_seed = 1;
};

/// Strict parse: JSON with comments allowed, unknown keys rejected, ranges
/// checked, Table-style defaults applied to missing optional keys.
ScenarioConfig parse_config(const std::string& path);
ScenarioConfig parse_config_text(const std::string& text,
                                 const std::string& name);

/// Full echo of a resolved config; parse(serialize(c)) == c.
std::string serialize_config(const ScenarioConfig& cfg);

/// Memory kernel described by the config.
MemoryKernel make_kernel(const ScenarioConfig& cfg);

/// Loads or generates the network and applies the scenario's persistence
/// override.
SyntheticNetwork resolve_network(const ScenarioConfig& cfg);

}  // namespace nudge
