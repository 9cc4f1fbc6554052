#include "nudge/network.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <sstream>

#include "nudge/csvio.hpp"
#include "nudge/rng.hpp"

namespace nudge {

namespace {

constexpr double kRowSumTol = 1e-10;

void check_agent_index(int v, int n, const char* what) {
  if (v < 0 || v >= n) {
    throw NetworkError(std::string(what) + " index " + std::to_string(v) +
                       " outside [0, " + std::to_string(n) + ")");
  }
}

}  // namespace

std::string ValidationReport::to_string() const {
  if (issues.empty()) {
    return "ok";
  }
  std::ostringstream ss;
  for (const auto& issue : issues) {
    ss << issue.invariant << ": " << issue.detail << "\n";
  }
  return ss.str();
}

Mat build_influence_matrix(int n_agents, const std::vector<Edge>& edges,
                           const Vec& credibility) {
  if (credibility.size() != n_agents) {
    throw NetworkError("credibility vector has size " +
                       std::to_string(credibility.size()) + ", expected " +
                       std::to_string(n_agents));
  }
  for (int v = 0; v < n_agents; ++v) {
    if (!(credibility[v] > 0.0)) {
      throw NetworkError("agent " + std::to_string(v) +
                         " has nonpositive credibility " +
                         format_g(credibility[v], 6));
    }
  }
  Mat p = Mat::Zero(n_agents, n_agents);
  for (const auto& [listener, source] : edges) {
    check_agent_index(listener, n_agents, "listener");
    check_agent_index(source, n_agents, "source");
    p(listener, source) = credibility[source];
  }
  for (int w = 0; w < n_agents; ++w) {
    const double row_sum = p.row(w).sum();
    if (row_sum <= 0.0) {
      throw NetworkError("agent " + std::to_string(w) +
                         " listens to nobody (no out-edge in the influence "
                         "sense); influence row would be zero");
    }
    p.row(w) /= row_sum;
  }
  return p;
}

ValidationReport validate_network(const InfluenceNetwork& net) {
  ValidationReport report;
  const int n = net.n_agents;
  auto add = [&report](const std::string& inv, const std::string& detail) {
    report.issues.push_back({inv, detail});
  };

  if (n <= 0) {
    add("positive-size", "n_agents = " + std::to_string(n));
    return report;
  }
  if (net.influence.rows() != n || net.influence.cols() != n ||
      net.susceptibility.size() != n || net.inherent_bias.size() != n ||
      net.persistence.size() != n) {
    add("consistent-dimensions", "field sizes disagree with n_agents");
    return report;
  }

  // Row stochasticity and nonnegativity of the influence matrix.
  for (int w = 0; w < n; ++w) {
    const double row_sum = net.influence.row(w).sum();
    if (std::abs(row_sum - 1.0) > kRowSumTol) {
      add("row-stochasticity", "row " + std::to_string(w) + " sums to " +
                                   format_g(row_sum, 12));
    }
  }
  if (net.influence.minCoeff() < 0.0) {
    add("nonnegative-weights", "influence matrix has a negative entry");
  }

  // Positive weights only where the adjacency has an edge.
  {
    std::vector<char> has_edge(static_cast<size_t>(n) * n, 0);
    for (const auto& [w, v] : net.edges) {
      if (w >= 0 && w < n && v >= 0 && v < n) {
        has_edge[static_cast<size_t>(w) * n + v] = 1;
      } else {
        add("edge-range", "edge (" + std::to_string(w) + "," +
                              std::to_string(v) + ") out of range");
      }
    }
    for (int w = 0; w < n; ++w) {
      for (int v = 0; v < n; ++v) {
        if (net.influence(w, v) > 0.0 && !has_edge[static_cast<size_t>(w) * n + v]) {
          add("support-inside-adjacency",
              "P(" + std::to_string(w) + "," + std::to_string(v) +
                  ") > 0 without an edge");
        }
      }
    }
  }

  auto check_unit_range = [&](const Vec& v, const char* name) {
    for (int i = 0; i < n; ++i) {
      if (!(v[i] >= 0.0 && v[i] <= 1.0)) {
        add("unit-range", std::string(name) + "[" + std::to_string(i) +
                              "] = " + format_g(v[i], 12));
      }
    }
  };
  check_unit_range(net.susceptibility, "susceptibility");
  check_unit_range(net.inherent_bias, "inherent_bias");
  check_unit_range(net.persistence, "persistence");

  // Every agent must reach (through positive influence weights) some agent
  // with susceptibility < 1; otherwise opinions in that component never
  // anchor to any bias and I - Lambda P turns singular. Reverse traversal
  // from the anchored set.
  {
    std::vector<char> anchored(n, 0);
    std::deque<int> queue;
    for (int v = 0; v < n; ++v) {
      if (net.susceptibility[v] < 1.0) {
        anchored[v] = 1;
        queue.push_back(v);
      }
    }
    while (!queue.empty()) {
      const int v = queue.front();
      queue.pop_front();
      for (int w = 0; w < n; ++w) {
        if (!anchored[w] && net.influence(w, v) > 0.0) {
          anchored[w] = 1;
          queue.push_back(w);
        }
      }
    }
    for (int w = 0; w < n; ++w) {
      if (!anchored[w]) {
        add("anchored-reachability",
            "agent " + std::to_string(w) +
                " has no influence path to any agent with susceptibility < 1");
      }
    }
  }

  return report;
}

namespace {

// Largest eigenvalue magnitude of the projection of m onto the span of the
// last two power iterates, plus the relative out-of-span residual of that
// projection. A one-dimensional span falls back to the norm ratio;
// otherwise the 2x2 projected eigenproblem captures sign-alternating and
// complex-conjugate dominant pairs, whose plain norm ratios oscillate. The
// residual stays large whenever the dominant eigenvalues span more than two
// dimensions (period >= 3), in which case no 2-column estimate is valid.
struct PairEstimate {
  double magnitude;
  double subspace_residual;
};

PairEstimate krylov_pair_magnitude(const Mat& m, const Vec& prev,
                                   const Vec& cur) {
  Vec q0 = prev.normalized();
  Vec q1 = cur - q0.dot(cur) * q0;
  const double q1_norm = q1.norm();
  const Vec mq0 = m * q0;
  if (q1_norm < 1e-13 * cur.norm()) {
    const double rayleigh = q0.dot(mq0);
    const double res = (mq0 - rayleigh * q0).norm();
    return {mq0.norm(), res / std::max(1e-300, mq0.norm())};
  }
  q1 /= q1_norm;
  const Vec mq1 = m * q1;
  Eigen::Matrix2d h;
  h << q0.dot(mq0), q0.dot(mq1), q1.dot(mq0), q1.dot(mq1);
  const Vec out0 = mq0 - q0 * h(0, 0) - q1 * h(1, 0);
  const Vec out1 = mq1 - q0 * h(0, 1) - q1 * h(1, 1);
  const double scale =
      std::max(1e-300, std::sqrt(mq0.squaredNorm() + mq1.squaredNorm()));
  const double residual =
      std::sqrt(out0.squaredNorm() + out1.squaredNorm()) / scale;

  const double tr = h.trace();
  const double det = h.determinant();
  const double disc = tr * tr - 4.0 * det;
  double magnitude;
  if (disc >= 0.0) {
    const double root = std::sqrt(disc);
    magnitude = std::max(std::abs(tr + root), std::abs(tr - root)) / 2.0;
  } else {
    magnitude = std::sqrt(det);  // complex pair: |lambda|^2 = det
  }
  return {magnitude, residual};
}

}  // namespace

double spectral_radius(const Mat& m, double tol, int max_iter,
                       std::uint64_t seed) {
  if (m.rows() != m.cols()) {
    throw Error("spectral_radius needs a square matrix");
  }
  const int n = static_cast<int>(m.rows());
  if (n == 0) {
    return 0.0;
  }

  Rng rng(seed);
  Vec v(n);
  for (int i = 0; i < n; ++i) {
    v[i] = rng.uniform(-1.0, 1.0);
  }
  v.normalize();

  double estimate = 0.0;
  bool have_estimate = false;
  for (int iter = 0; iter < max_iter; ++iter) {
    const Vec mv = m * v;
    const double norm = mv.norm();
    if (norm == 0.0) {
      return 0.0;
    }
    const PairEstimate next = krylov_pair_magnitude(m, v, mv);
    if (have_estimate && std::abs(next.magnitude - estimate) <= tol &&
        next.subspace_residual <= 1e-6) {
      return next.magnitude;
    }
    estimate = next.magnitude;
    have_estimate = true;
    v = mv / norm;
  }
  throw ConvergenceError(
      "spectral radius estimate did not settle within " +
          std::to_string(max_iter) + " iterations (last estimate " +
          format_g(estimate, 12) + ")",
      estimate, max_iter);
}

SyntheticNetwork generate_synthetic_network(const GeneratorParams& params,
                                            std::uint64_t seed) {
  const int n = params.n_agents;
  if (n <= 0) {
    throw NetworkError("generator needs n_agents >= 1");
  }
  if (!(params.density > 0.0)) {
    throw NetworkError("generator needs a positive density");
  }
  if (params.education.empty()) {
    throw NetworkError("generator needs at least one education level");
  }
  double prob_sum = 0.0;
  for (const auto& lvl : params.education) {
    if (lvl.probability < 0.0 || !(lvl.reliability > 0.0) ||
        lvl.reliability > 1.0) {
      throw NetworkError("education levels need probability >= 0 and "
                         "reliability in (0,1]");
    }
    prob_sum += lvl.probability;
  }
  if (prob_sum <= 0.0) {
    throw NetworkError("education level probabilities sum to zero");
  }
  if (!(params.penalty_factor > 0.0) || params.penalty_factor > 1.0) {
    throw NetworkError("penalty_factor must lie in (0,1]");
  }

  const Rng master(seed);
  Rng pos_rng = master.fork(1);
  Rng edu_rng = master.fork(2);
  Rng penalty_rng = master.fork(3);
  Rng reluctance_rng = master.fork(4);
  Rng susceptibility_rng = master.fork(5);

  // Geographic proximity proxy: points in the unit square, connected below
  // a radius calibrated so a random pair is adjacent with ~density chance.
  std::vector<double> px(n), py(n);
  for (int v = 0; v < n; ++v) {
    px[v] = pos_rng.uniform();
    py[v] = pos_rng.uniform();
  }
  const double radius =
      params.density >= 1.0 ? 1.5 : std::sqrt(params.density / M_PI);
  std::vector<Edge> edges;
  for (int w = 0; w < n; ++w) {
    for (int v = w + 1; v < n; ++v) {
      const double dx = px[w] - px[v];
      const double dy = py[w] - py[v];
      if (std::sqrt(dx * dx + dy * dy) < radius) {
        edges.emplace_back(w, v);
        edges.emplace_back(v, w);
      }
    }
  }
  if (params.allow_self_loops) {
    for (int v = 0; v < n; ++v) {
      edges.emplace_back(v, v);
    }
  }
  {
    std::vector<char> listens(n, 0);
    for (const auto& [w, v] : edges) {
      (void)v;
      listens[w] = 1;
    }
    for (int v = 0; v < n; ++v) {
      if (!listens[v]) {
        throw NetworkError("agent " + std::to_string(v) +
                           " is isolated at density " +
                           format_g(params.density, 6) +
                           "; raise the density or allow self-loops");
      }
    }
  }

  CredibilityProfile profile;
  profile.reliability.resize(n);
  profile.penalty_count.resize(n);
  profile.credibility.resize(n);
  for (int v = 0; v < n; ++v) {
    double pick = edu_rng.uniform() * prob_sum;
    double zeta = params.education.back().reliability;
    for (const auto& lvl : params.education) {
      if (pick < lvl.probability) {
        zeta = lvl.reliability;
        break;
      }
      pick -= lvl.probability;
    }
    int penalties = 0;
    for (int g = 0; g < params.prejudice_groups; ++g) {
      if (penalty_rng.bernoulli(params.penalty_probability)) {
        ++penalties;
      }
    }
    profile.reliability[v] = zeta;
    profile.penalty_count[v] = penalties;
    profile.credibility[v] = zeta * std::pow(params.penalty_factor, penalties);
  }

  InfluenceNetwork net;
  net.n_agents = n;
  net.edges = std::move(edges);
  net.influence = build_influence_matrix(n, net.edges, profile.credibility);
  net.inherent_bias.resize(n);
  net.susceptibility.resize(n);
  net.persistence = Vec::Constant(n, params.persistence_value);
  for (int v = 0; v < n; ++v) {
    net.inherent_bias[v] =
        1.0 - reluctance_rng.uniform(params.reluctance_min, params.reluctance_max);
    net.susceptibility[v] = susceptibility_rng.uniform(
        params.susceptibility_min, params.susceptibility_max);
  }

  const ValidationReport report = validate_network(net);
  if (!report.passed()) {
    throw NetworkError("generated network fails validation:\n" +
                       report.to_string());
  }
  return {std::move(net), std::move(profile)};
}

void write_network_csv(const InfluenceNetwork& net,
                       const CredibilityProfile& profile,
                       const std::string& path) {
  std::ostringstream out;
  out << "agent_id,lambda,u_o,rho,credibility\n";
  for (int v = 0; v < net.n_agents; ++v) {
    out << v << ',' << format_exact(net.susceptibility[v]) << ','
        << format_exact(net.inherent_bias[v]) << ','
        << format_exact(net.persistence[v]) << ','
        << format_exact(profile.credibility[v]) << '\n';
  }
  out << "listener_id,source_id\n";
  for (const auto& [w, v] : net.edges) {
    out << w << ',' << v << '\n';
  }
  write_text_file(path, out.str());
}

SyntheticNetwork read_network_csv(const std::string& path) {
  const std::string text = read_text_file(path);
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) ||
      split_csv_line(line)[0] != "agent_id") {
    throw NetworkError("network file " + path +
                       " does not start with the node table header");
  }

  std::vector<double> lambda, u_o, rho, cred;
  std::vector<Edge> edges;
  bool in_edges = false;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r") {
      continue;
    }
    const auto fields = split_csv_line(line);
    const std::string where = path + ":" + std::to_string(line_no);
    if (!in_edges && fields[0] == "listener_id") {
      in_edges = true;
      continue;
    }
    if (in_edges) {
      if (fields.size() != 2) {
        throw NetworkError("edge row with " + std::to_string(fields.size()) +
                           " fields at " + where);
      }
      edges.emplace_back(static_cast<int>(parse_long(fields[0], where)),
                         static_cast<int>(parse_long(fields[1], where)));
    } else {
      if (fields.size() != 5) {
        throw NetworkError("node row with " + std::to_string(fields.size()) +
                           " fields at " + where);
      }
      const long id = parse_long(fields[0], where);
      if (id != static_cast<long>(lambda.size())) {
        throw NetworkError("node ids must be consecutive from 0; got " +
                           fields[0] + " at " + where);
      }
      lambda.push_back(parse_double(fields[1], where));
      u_o.push_back(parse_double(fields[2], where));
      rho.push_back(parse_double(fields[3], where));
      cred.push_back(parse_double(fields[4], where));
    }
  }
  const int n = static_cast<int>(lambda.size());
  if (n == 0) {
    throw NetworkError("network file " + path + " has no agents");
  }

  SyntheticNetwork out;
  out.profile.reliability = Vec::Zero(n);
  out.profile.penalty_count.assign(n, 0);
  out.profile.credibility = Eigen::Map<const Vec>(cred.data(), n);
  out.profile.reliability = out.profile.credibility;  // file stores the product
  out.net.n_agents = n;
  out.net.edges = std::move(edges);
  out.net.susceptibility = Eigen::Map<const Vec>(lambda.data(), n);
  out.net.inherent_bias = Eigen::Map<const Vec>(u_o.data(), n);
  out.net.persistence = Eigen::Map<const Vec>(rho.data(), n);
  out.net.influence =
      build_influence_matrix(n, out.net.edges, out.profile.credibility);
  return out;
}

}  // namespace nudge
