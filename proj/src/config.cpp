#include "nudge/config.hpp"

#include <nlohmann/json.hpp>

#include <set>

#include "nudge/csvio.hpp"

namespace nudge {

using nlohmann::json;

namespace {

void reject_unknown(const json& obj, const std::set<std::string>& allowed,
                    const std::string& where) {
  for (const auto& [key, value] : obj.items()) {
    (void)value;
    if (!allowed.count(key)) {
      throw ConfigError("unknown key '" + key + "' in " + where);
    }
  }
}

double get_number(const json& obj, const char* key, double fallback,
                  double lo, double hi, const std::string& where) {
  if (!obj.contains(key)) {
    return fallback;
  }
  if (!obj[key].is_number()) {
    throw ConfigError("key '" + std::string(key) + "' in " + where +
                      " must be a number");
  }
  const double v = obj[key].get<double>();
  if (v < lo || v > hi) {
    throw ConfigError("key '" + std::string(key) + "' in " + where +
                      " is out of range [" + format_g(lo, 6) + ", " +
                      format_g(hi, 6) + "]: " + format_g(v, 12));
  }
  return v;
}

long get_integer(const json& obj, const char* key, long fallback, long lo,
                 long hi, const std::string& where) {
  if (!obj.contains(key)) {
    return fallback;
  }
  if (!obj[key].is_number_integer()) {
    throw ConfigError("key '" + std::string(key) + "' in " + where +
                      " must be an integer");
  }
  const long v = obj[key].get<long>();
  if (v < lo || v > hi) {
    throw ConfigError("key '" + std::string(key) + "' in " + where +
                      " is out of range");
  }
  return v;
}

GeneratorParams parse_generator(const json& g) {
  reject_unknown(g, {"n_agents", "density", "allow_self_loops", "education",
                     "prejudice_groups", "penalty_probability",
                     "penalty_factor", "reluctance_min", "reluctance_max",
                     "susceptibility_min", "susceptibility_max", "persistence",
                     "seed"},
                 "network.generator");
  GeneratorParams p;
  p.n_agents = static_cast<int>(
      get_integer(g, "n_agents", p.n_agents, 1, 1000000, "generator"));
  p.density = get_number(g, "density", p.density, 1e-9, 1e9, "generator");
  if (g.contains("allow_self_loops")) {
    p.allow_self_loops = g["allow_self_loops"].get<bool>();
  }
  if (g.contains("education")) {
    p.education.clear();
    for (const auto& lvl : g["education"]) {
      reject_unknown(lvl, {"probability", "reliability"},
                     "network.generator.education[]");
      p.education.push_back(
          {get_number(lvl, "probability", 0.0, 0.0, 1.0, "education"),
           get_number(lvl, "reliability", 1.0, 1e-12, 1.0, "education")});
    }
  }
  p.prejudice_groups = static_cast<int>(get_integer(
      g, "prejudice_groups", p.prejudice_groups, 0, 64, "generator"));
  p.penalty_probability = get_number(g, "penalty_probability",
                                     p.penalty_probability, 0.0, 1.0,
                                     "generator");
  p.penalty_factor =
      get_number(g, "penalty_factor", p.penalty_factor, 1e-12, 1.0,
                 "generator");
  p.reluctance_min = get_number(g, "reluctance_min", p.reluctance_min, 0.0,
                                1.0, "generator");
  p.reluctance_max = get_number(g, "reluctance_max", p.reluctance_max, 0.0,
                                1.0, "generator");
  p.susceptibility_min = get_number(g, "susceptibility_min",
                                    p.susceptibility_min, 0.0, 1.0,
                                    "generator");
  p.susceptibility_max = get_number(g, "susceptibility_max",
                                    p.susceptibility_max, 0.0, 1.0,
                                    "generator");
  p.persistence_value =
      get_number(g, "persistence", p.persistence_value, 0.0, 1.0, "generator");
  if (p.reluctance_min > p.reluctance_max ||
      p.susceptibility_min > p.susceptibility_max) {
    throw ConfigError("generator ranges must satisfy min <= max");
  }
  return p;
}

}  // namespace

ScenarioConfig parse_config_text(const std::string& text,
                                 const std::string& name) {
  json root;
  try {
    root = json::parse(text, nullptr, true, /*ignore_comments=*/true);
  } catch (const json::exception& e) {
    throw ConfigError("cannot parse " + name + ": " + e.what());
  }
  if (!root.is_object()) {
    throw ConfigError(name + " must hold a JSON object");
  }
  reject_unknown(root,
                 {"schema_version", "network", "kernel", "model", "mpc",
                  "estimator", "output_dir", "seed"},
                 name);

  ScenarioConfig cfg;
  cfg.schema_version = static_cast<int>(
      get_integer(root, "schema_version", 1, 1, 1, name));

  if (!root.contains("network")) {
    throw ConfigError("missing mandatory key 'network' in " + name);
  }
  {
    const json& net = root["network"];
    reject_unknown(net, {"file", "generator"}, "network");
    if (net.contains("file") == net.contains("generator")) {
      throw ConfigError(
          "network needs exactly one of 'file' or 'generator'");
    }
    if (net.contains("file")) {
      cfg.network.use_generator = false;
      cfg.network.file = net["file"].get<std::string>();
    } else {
      cfg.network.use_generator = true;
      cfg.network.generator = parse_generator(net["generator"]);
      cfg.network.generator_seed = net["generator"].contains("seed")
                                       ? net["generator"]["seed"].get<std::uint64_t>()
                                       : 1;
    }
  }

  if (root.contains("kernel")) {
    const json& k = root["kernel"];
    reject_unknown(k, {"variant", "tau", "window"}, "kernel");
    if (k.contains("variant")) {
      const std::string v = k["variant"].get<std::string>();
      if (v == "iir") {
        cfg.kernel_variant = KernelVariant::kIir;
      } else if (v == "fir") {
        cfg.kernel_variant = KernelVariant::kFir;
      } else {
        throw ConfigError("kernel.variant must be 'iir' or 'fir', got '" + v +
                          "'");
      }
    }
    cfg.tau = get_number(k, "tau", cfg.tau, 1e-9, 1e9, "kernel");
    cfg.fir_window = static_cast<int>(
        get_integer(k, "window", cfg.fir_window, 0, 1000000, "kernel"));
  }

  if (!root.contains("model")) {
    throw ConfigError("missing mandatory key 'model' in " + name);
  }
  {
    const json& m = root["model"];
    reject_unknown(m, {"alpha", "rho", "beta", "T", "x0"}, "model");
    cfg.alpha = get_number(m, "alpha", cfg.alpha, 0.0, 1.0, "model");
    if (!m.contains("beta")) {
      throw ConfigError("missing mandatory key 'model.beta'");
    }
    cfg.beta = get_number(m, "beta", 0.0, 0.0, 1e15, "model");
    if (!m.contains("T")) {
      throw ConfigError("missing mandatory key 'model.T'");
    }
    cfg.horizon_T =
        static_cast<int>(get_integer(m, "T", 0, 1, 1000000, "model"));
    if (m.contains("rho")) {
      if (m["rho"].is_array()) {
        std::vector<double> rho;
        for (const auto& v : m["rho"]) {
          const double r = v.get<double>();
          if (r < 0.0 || r > 1.0) {
            throw ConfigError("model.rho entries must lie in [0,1]");
          }
          rho.push_back(r);
        }
        cfg.rho_vector = std::move(rho);
      } else {
        cfg.rho_scalar = get_number(m, "rho", 0.0, 0.0, 1.0, "model");
      }
    }
    if (m.contains("x0")) {
      cfg.x0_scalar = get_number(m, "x0", 0.0, 0.0, 1.0, "model");
    }
  }

  if (root.contains("mpc")) {
    const json& m = root["mpc"];
    reject_unknown(m,
                   {"horizon", "q", "r1", "r2", "q_terminal", "tol_primal",
                    "tol_dual", "max_iterations", "literal_budget_rows"},
                   "mpc");
    cfg.mpc.horizon = static_cast<int>(
        get_integer(m, "horizon", cfg.mpc.horizon, 1, 10000, "mpc"));
    cfg.mpc.q_weight = get_number(m, "q", cfg.mpc.q_weight, 0.0, 1e12, "mpc");
    cfg.mpc.r1_weight =
        get_number(m, "r1", cfg.mpc.r1_weight, 1e-12, 1e12, "mpc");
    cfg.mpc.r2_weight =
        get_number(m, "r2", cfg.mpc.r2_weight, 1e-12, 1e12, "mpc");
    cfg.mpc.q_terminal =
        get_number(m, "q_terminal", cfg.mpc.q_terminal, 0.0, 1e12, "mpc");
    cfg.mpc.tol_primal =
        get_number(m, "tol_primal", cfg.mpc.tol_primal, 1e-14, 1.0, "mpc");
    cfg.mpc.tol_dual =
        get_number(m, "tol_dual", cfg.mpc.tol_dual, 1e-14, 1.0, "mpc");
    cfg.mpc.max_iterations = static_cast<int>(get_integer(
        m, "max_iterations", cfg.mpc.max_iterations, 1, 100000000, "mpc"));
    if (m.contains("literal_budget_rows")) {
      cfg.mpc.literal_budget_rows = m["literal_budget_rows"].get<bool>();
    }
  }

  if (root.contains("estimator")) {
    const json& e = root["estimator"];
    reject_unknown(e, {"kind", "decay"}, "estimator");
    if (e.contains("kind")) {
      const std::string kind = e["kind"].get<std::string>();
      if (kind == "running_mean") {
        cfg.estimator_kind = ObservationEstimator::Kind::kRunningMean;
      } else if (kind == "leaky") {
        cfg.estimator_kind = ObservationEstimator::Kind::kLeaky;
      } else {
        throw ConfigError("estimator.kind must be 'running_mean' or 'leaky'");
      }
    }
    cfg.estimator_decay =
        get_number(e, "decay", cfg.estimator_decay, 0.0, 1.0, "estimator");
  }

  if (root.contains("output_dir")) {
    cfg.output_dir = root["output_dir"].get<std::string>();
  }
  if (root.contains("seed")) {
    cfg.master_seed = root["seed"].get<std::uint64_t>();
  }
  return cfg;
}

ScenarioConfig parse_config(const std::string& path) {
  return parse_config_text(read_text_file(path), path);
}

std::string serialize_config(const ScenarioConfig& cfg) {
  json root;
  root["schema_version"] = cfg.schema_version;
  if (cfg.network.use_generator) {
    const GeneratorParams& p = cfg.network.generator;
    json edu = json::array();
    for (const auto& lvl : p.education) {
      edu.push_back({{"probability", lvl.probability},
                     {"reliability", lvl.reliability}});
    }
    root["network"]["generator"] = {
        {"n_agents", p.n_agents},
        {"density", p.density},
        {"allow_self_loops", p.allow_self_loops},
        {"education", edu},
        {"prejudice_groups", p.prejudice_groups},
        {"penalty_probability", p.penalty_probability},
        {"penalty_factor", p.penalty_factor},
        {"reluctance_min", p.reluctance_min},
        {"reluctance_max", p.reluctance_max},
        {"susceptibility_min", p.susceptibility_min},
        {"susceptibility_max", p.susceptibility_max},
        {"persistence", p.persistence_value},
        {"seed", cfg.network.generator_seed}};
  } else {
    root["network"]["file"] = cfg.network.file;
  }
  root["kernel"] = {
      {"variant", cfg.kernel_variant == KernelVariant::kIir ? "iir" : "fir"},
      {"tau", cfg.tau},
      {"window", cfg.fir_window}};
  root["model"] = {{"alpha", cfg.alpha},
                   {"beta", cfg.beta},
                   {"T", cfg.horizon_T}};
  if (cfg.rho_vector) {
    root["model"]["rho"] = *cfg.rho_vector;
  } else if (cfg.rho_scalar) {
    root["model"]["rho"] = *cfg.rho_scalar;
  }
  if (cfg.x0_scalar) {
    root["model"]["x0"] = *cfg.x0_scalar;
  }
  root["mpc"] = {{"horizon", cfg.mpc.horizon},
                 {"q", cfg.mpc.q_weight},
                 {"r1", cfg.mpc.r1_weight},
                 {"r2", cfg.mpc.r2_weight},
                 {"q_terminal", cfg.mpc.q_terminal},
                 {"tol_primal", cfg.mpc.tol_primal},
                 {"tol_dual", cfg.mpc.tol_dual},
                 {"max_iterations", cfg.mpc.max_iterations},
                 {"literal_budget_rows", cfg.mpc.literal_budget_rows}};
  root["estimator"] = {
      {"kind", cfg.estimator_kind == ObservationEstimator::Kind::kRunningMean
                   ? "running_mean"
                   : "leaky"},
      {"decay", cfg.estimator_decay}};
  root["output_dir"] = cfg.output_dir;
  root["seed"] = cfg.master_seed;
  return root.dump(2) + "\n";
}

MemoryKernel make_kernel(const ScenarioConfig& cfg) {
  return cfg.kernel_variant == KernelVariant::kIir
             ? MemoryKernel::iir(cfg.tau)
             : MemoryKernel::fir(cfg.tau, cfg.fir_window);
}

SyntheticNetwork resolve_network(const ScenarioConfig& cfg) {
  SyntheticNetwork sn =
      cfg.network.use_generator
          ? generate_synthetic_network(cfg.network.generator,
                                       cfg.network.generator_seed)
          : read_network_csv(cfg.network.file);
  if (cfg.rho_vector) {
    if (static_cast<int>(cfg.rho_vector->size()) != sn.net.n_agents) {
      throw ConfigError("model.rho vector has " +
                        std::to_string(cfg.rho_vector->size()) +
                        " entries for " + std::to_string(sn.net.n_agents) +
                        " agents");
    }
    sn.net.persistence =
        Eigen::Map<const Vec>(cfg.rho_vector->data(), sn.net.n_agents);
  } else if (cfg.rho_scalar) {
    sn.net.persistence = Vec::Constant(sn.net.n_agents, *cfg.rho_scalar);
  }
  return sn;
}

}  // namespace nudge
