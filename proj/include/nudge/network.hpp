#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "nudge/common.hpp"

namespace nudge {

/// Directed edge (listener, source): the source influences the listener.
using Edge = std::pair<int, int>;

/// A social influence network. The influence matrix is row-stochastic:
/// row w holds the weights agent w places on each agent it listens to.
/// Immutable after construction by convention; safe to share across
/// concurrently running scenarios.
struct InfluenceNetwork {
  int n_agents = 0;
  std::vector<Edge> edges;
  Mat influence;        // P, n x n, row-stochastic
  Vec susceptibility;   // lambda in [0,1]^n, weight on peers' opinions
  Vec inherent_bias;    // u_o in [0,1]^n, baseline predisposition
  Vec persistence;      // rho in [0,1]^n, memory-vs-instant mixing weight
};

/// Per-agent trust profile the influence weights are derived from.
struct CredibilityProfile {
  Vec reliability;                 // zeta in [0,1], education-level proxy
  std::vector<int> penalty_count;  // prejudice-group memberships
  Vec credibility;                 // c in (0,1], zeta * delta^penalties
};

struct ValidationIssue {
  std::string invariant;
  std::string detail;
};

struct ValidationReport {
  std::vector<ValidationIssue> issues;
  bool passed() const { return issues.empty(); }
  std::string to_string() const;
};

/// Masks per-source credibility by the adjacency and row-normalizes.
/// Every agent must listen to at least one strictly credible source.
Mat build_influence_matrix(int n_agents, const std::vector<Edge>& edges,
                           const Vec& credibility);

/// Checks every structural invariant (row stochasticity, support inside the
/// adjacency, [0,1] parameter ranges, and reachability of some agent with
/// susceptibility < 1 from every node). Violations are reported, not thrown.
ValidationReport validate_network(const InfluenceNetwork& net);

/// Largest eigenvalue magnitude by power iteration. Each pass applies the
/// matrix twice so magnitude estimates converge even when the dominant
/// eigenvalues form a +/- pair (periodic nonnegative matrices).
double spectral_radius(const Mat& m, double tol = 1e-10, int max_iter = 10000,
                       std::uint64_t seed = 0x9d2c5680u);

/// One discrete education level: sampling weight and reliability value.
struct EducationLevel {
  double probability;
  double reliability;
};

struct GeneratorParams {
  int n_agents = 112;
  double density = 0.25;        // target probability that a pair is connected
  bool allow_self_loops = false;
  std::vector<EducationLevel> education = {
      {0.2, 0.25}, {0.3, 0.5}, {0.3, 0.75}, {0.2, 1.0}};
  int prejudice_groups = 3;
  double penalty_probability = 0.3;  // membership chance per group
  double penalty_factor = 0.5;       // credibility multiplier per membership
  double reluctance_min = 0.25;      // u_o = 1 - reluctance
  double reluctance_max = 0.8;
  double susceptibility_min = 0.3;
  double susceptibility_max = 0.9;
  double persistence_value = 0.7;    // broadcast rho
};

struct SyntheticNetwork {
  InfluenceNetwork net;
  CredibilityProfile profile;
};

/// Samples a network in the style of a geographic-proximity survey graph:
/// agents get positions in the unit square and are mutually connected below
/// a distance threshold derived from the requested density. Reliability
/// comes from the education table, credibility is reliability shrunk once
/// per prejudice-group membership. Pure function of (params, seed).
SyntheticNetwork generate_synthetic_network(const GeneratorParams& params,
                                            std::uint64_t seed);

/// Two-section CSV: a node table (agent_id,lambda,u_o,rho,credibility)
/// followed by an edge list (listener_id,source_id). Values are written
/// with 17 significant digits so a round trip is lossless.
void write_network_csv(const InfluenceNetwork& net,
                       const CredibilityProfile& profile,
                       const std::string& path);

SyntheticNetwork read_network_csv(const std::string& path);

}  // namespace nudge
