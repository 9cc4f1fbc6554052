#include "nudge/sweep.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <set>
#include <sstream>
#include <thread>

#include "nudge/csvio.hpp"
#include "nudge/rng.hpp"

namespace nudge {

namespace fs = std::filesystem;
using nlohmann::json;

SweepSpec parse_sweep_text(const std::string& text, const std::string& name) {
  json root;
  try {
    root = json::parse(text, nullptr, true, /*ignore_comments=*/true);
  } catch (const json::exception& e) {
    throw ConfigError("cannot parse " + name + ": " + e.what());
  }
  if (!root.is_object()) {
    throw ConfigError(name + " must hold a JSON object");
  }
  for (const auto& [key, value] : root.items()) {
    (void)value;
    static const std::set<std::string> allowed = {"alpha", "rho", "beta",
                                                  "seed", "policy"};
    if (!allowed.count(key)) {
      throw ConfigError("unknown sweep axis '" + key + "' in " + name);
    }
  }
  SweepSpec spec;
  auto numbers = [&](const char* key, double lo, double hi) {
    std::vector<double> out;
    if (root.contains(key)) {
      for (const auto& v : root[key]) {
        const double x = v.get<double>();
        if (x < lo || x > hi) {
          throw ConfigError("sweep axis '" + std::string(key) +
                            "' value out of range: " + format_g(x, 12));
        }
        out.push_back(x);
      }
    }
    return out;
  };
  spec.alphas = numbers("alpha", 0.0, 1.0);
  spec.rhos = numbers("rho", 0.0, 1.0);
  spec.betas = numbers("beta", 0.0, 1e15);
  if (root.contains("seed")) {
    for (const auto& v : root["seed"]) {
      spec.seeds.push_back(v.get<std::uint64_t>());
    }
  }
  if (root.contains("policy")) {
    for (const auto& v : root["policy"]) {
      const std::string p = v.get<std::string>();
      if (p != "naive" && p != "rh") {
        throw ConfigError("sweep policy must be 'naive' or 'rh', got '" + p +
                          "'");
      }
      spec.policies.push_back(p);
    }
  }
  return spec;
}

SweepSpec parse_sweep(const std::string& path) {
  return parse_sweep_text(read_text_file(path), path);
}

namespace {

std::string sanitize(const std::string& s) {
  std::string out;
  for (char c : s) {
    out.push_back(std::isalnum(static_cast<unsigned char>(c)) || c == '.' ||
                          c == '-' || c == '_'
                      ? c
                      : '_');
  }
  return out;
}

}  // namespace

std::vector<SweepCell> enumerate_cells(const SweepSpec& spec,
                                       const ScenarioConfig& base) {
  const std::vector<std::string> policies =
      spec.policies.empty() ? std::vector<std::string>{"rh"} : spec.policies;
  const std::vector<double> alphas =
      spec.alphas.empty() ? std::vector<double>{base.alpha} : spec.alphas;
  const double base_rho =
      base.rho_scalar ? *base.rho_scalar
                      : (base.network.use_generator
                             ? base.network.generator.persistence_value
                             : std::nan(""));
  const std::vector<double> rhos =
      spec.rhos.empty() ? std::vector<double>{base_rho} : spec.rhos;
  const std::vector<double> betas =
      spec.betas.empty() ? std::vector<double>{base.beta} : spec.betas;
  const std::vector<std::uint64_t> seeds =
      spec.seeds.empty() ? std::vector<std::uint64_t>{base.master_seed}
                         : spec.seeds;

  std::vector<SweepCell> cells;
  for (const auto& policy : policies) {
    for (double alpha : alphas) {
      for (double rho : rhos) {
        for (double beta : betas) {
          for (std::uint64_t seed : seeds) {
            SweepCell cell;
            cell.policy = policy;
            cell.alpha = alpha;
            cell.rho = rho;
            cell.beta = beta;
            cell.seed_label = seed;
            std::ostringstream id;  // keys in sorted order
            id << "alpha=" << format_g(alpha, 12) << ",beta="
               << format_g(beta, 12) << ",policy=" << policy
               << ",rho=" << (std::isnan(rho) ? "base" : format_g(rho, 12))
               << ",seed=" << seed;
            cell.id = id.str();
            cell.derived_seed =
                fnv1a64(cell.id, fnv1a64(std::to_string(base.master_seed)));
            cell.dir_name = sanitize(policy + "_a" + format_g(alpha, 6) +
                                     "_r" +
                                     (std::isnan(rho) ? std::string("base")
                                                      : format_g(rho, 6)) +
                                     "_b" + format_g(beta, 6) + "_s" +
                                     std::to_string(seed));
            cells.push_back(std::move(cell));
          }
        }
      }
    }
  }
  if (cells.empty()) {
    throw ConfigError("sweep resolves to an empty product");
  }
  return cells;
}

namespace {

ScenarioConfig cell_config(const ScenarioConfig& base, const SweepCell& cell) {
  ScenarioConfig cfg = base;
  cfg.alpha = cell.alpha;
  cfg.beta = cell.beta;
  if (!std::isnan(cell.rho)) {
    cfg.rho_scalar = cell.rho;
    cfg.rho_vector.reset();
  }
  cfg.master_seed = cell.derived_seed;
  return cfg;
}

CellResult run_cell(const ScenarioConfig& base, const SweepCell& cell,
                    const SyntheticNetwork& base_network,
                    const std::string& out_dir) {
  CellResult result;
  result.cell = cell;
  const auto started = std::chrono::steady_clock::now();
  try {
    const ScenarioConfig cfg = cell_config(base, cell);
    SyntheticNetwork sn = base_network;  // shared topology, cell-level rho
    if (!std::isnan(cell.rho)) {
      sn.net.persistence = Vec::Constant(sn.net.n_agents, cell.rho);
    }
    const MemoryKernel kernel = make_kernel(cfg);
    Vec x0 = cfg.x0_scalar ? Vec::Constant(sn.net.n_agents, *cfg.x0_scalar)
                           : sn.net.inherent_bias;

    RhRunResult run =
        cell.policy == "rh"
            ? run_receding_horizon(sn.net, kernel, cfg.mpc, cfg.beta,
                                   cfg.alpha, cfg.horizon_T, cell.derived_seed,
                                   cfg.estimator_kind, cfg.estimator_decay,
                                   &x0)
            : run_naive(sn.net, kernel, cfg.beta, cfg.alpha, cfg.horizon_T,
                        cell.derived_seed, &x0);

    const fs::path dir = fs::path(out_dir) / "runs" / cell.dir_name;
    fs::create_directories(dir);
    write_text_file((dir / "config.json").string(), serialize_config(cfg));
    write_trajectory_csv(run.trajectory, (dir / "trajectory.csv").string());
    write_timeseries_csv(run.trajectory, (dir / "timeseries.csv").string());
    const double rho_col = std::isnan(cell.rho)
                               ? sn.net.persistence.mean()
                               : cell.rho;
    write_text_file((dir / "summary.csv").string(),
                    summary_csv_header() + "\n" +
                        summary_csv_row(cell.policy, run.summary, cell.alpha,
                                        rho_col, cell.derived_seed) +
                        "\n");
    result.summary = run.summary;
    result.ok = true;
  } catch (const std::exception& e) {
    result.ok = false;
    result.error = e.what();
  }
  result.wall_ms = std::chrono::duration<double, std::milli>(
                       std::chrono::steady_clock::now() - started)
                       .count();
  return result;
}

}  // namespace

std::string summary_table(const std::vector<CellResult>& results) {
  std::vector<const CellResult*> ok;
  for (const auto& r : results) {
    if (r.ok) {
      ok.push_back(&r);
    }
  }
  std::sort(ok.begin(), ok.end(), [](const CellResult* a,
                                     const CellResult* b) {
    const auto key = [](const CellResult* r) {
      const double rho = std::isnan(r->cell.rho) ? -1.0 : r->cell.rho;
      return std::make_tuple(r->cell.policy, r->cell.beta, r->cell.alpha, rho,
                             r->cell.seed_label);
    };
    return key(a) < key(b);
  });
  std::ostringstream out;
  out << summary_csv_header() << "\n";
  for (const CellResult* r : ok) {
    out << summary_csv_row(r->cell.policy, r->summary, r->cell.alpha,
                           r->cell.rho, r->cell.derived_seed)
        << "\n";
  }
  return out.str();
}

std::vector<CellResult> run_sweep(const SweepSpec& spec,
                                  const ScenarioConfig& base,
                                  const std::string& out_dir, int jobs) {
  const std::vector<SweepCell> cells = enumerate_cells(spec, base);
  fs::create_directories(fs::path(out_dir) / "runs");

  // The topology is shared by every cell; persistence overrides are applied
  // per cell on a copy.
  const SyntheticNetwork base_network = resolve_network(base);

  std::vector<CellResult> results(cells.size());
  const int workers = std::max(
      1, std::min<int>(jobs > 0 ? jobs
                                : static_cast<int>(
                                      std::thread::hardware_concurrency()),
                       static_cast<int>(cells.size())));
  std::atomic<size_t> next{0};
  auto worker = [&]() {
    for (size_t i = next.fetch_add(1); i < cells.size();
         i = next.fetch_add(1)) {
      results[i] = run_cell(base, cells[i], base_network, out_dir);
    }
  };
  if (workers == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (int i = 0; i < workers; ++i) {
      pool.emplace_back(worker);
    }
    for (auto& t : pool) {
      t.join();
    }
  }

  const std::string summary = summary_table(results);
  write_text_file((fs::path(out_dir) / "summary.csv").string(), summary);

  json manifest;
  manifest["schema_version"] = 1;
  manifest["master_seed"] = base.master_seed;
  manifest["jobs"] = workers;
  manifest["base_config"] = json::parse(serialize_config(base));
  json cells_json = json::array();
  for (const auto& r : results) {
    json c;
    c["id"] = r.cell.id;
    c["dir"] = "runs/" + r.cell.dir_name;
    c["derived_seed"] = r.cell.derived_seed;
    c["status"] = r.ok ? "ok" : "failed";
    c["wall_ms"] = r.wall_ms;
    if (!r.ok) {
      c["error"] = r.error;
    } else {
      json artifacts = json::array();
      for (const char* name :
           {"config.json", "trajectory.csv", "timeseries.csv", "summary.csv"}) {
        const fs::path p = fs::path(out_dir) / "runs" / r.cell.dir_name / name;
        artifacts.push_back({{"path", "runs/" + r.cell.dir_name + "/" + name},
                             {"fnv1a64", hash_file_hex(p.string())}});
      }
      c["artifacts"] = artifacts;
    }
    cells_json.push_back(std::move(c));
  }
  manifest["cells"] = std::move(cells_json);
  manifest["summary"] = {
      {"path", "summary.csv"},
      {"fnv1a64",
       hash_file_hex((fs::path(out_dir) / "summary.csv").string())}};
  write_text_file((fs::path(out_dir) / "manifest.json").string(),
                  manifest.dump(2) + "\n");
  return results;
}

std::string report_run_dir(const std::string& out_dir) {
  const fs::path runs = fs::path(out_dir) / "runs";
  if (!fs::is_directory(runs)) {
    throw Error("no runs/ directory under " + out_dir);
  }
  std::vector<std::string> dirs;
  for (const auto& entry : fs::directory_iterator(runs)) {
    if (entry.is_directory()) {
      dirs.push_back(entry.path().filename().string());
    }
  }
  std::sort(dirs.begin(), dirs.end());

  struct Row {
    std::string policy;
    double beta, alpha, rho;
    std::uint64_t seed;
    std::string text;
  };
  std::vector<Row> rows;
  for (const auto& d : dirs) {
    const fs::path file = runs / d / "summary.csv";
    if (!fs::exists(file)) {
      continue;
    }
    std::istringstream in(read_text_file(file.string()));
    std::string header, line;
    if (!std::getline(in, header) || header != summary_csv_header()) {
      throw Error("unexpected summary header in " + file.string());
    }
    while (std::getline(in, line)) {
      if (line.empty()) {
        continue;
      }
      const auto f = split_csv_line(line);
      if (f.size() != 10) {
        throw Error("unexpected summary row in " + file.string());
      }
      rows.push_back({f[0], parse_double(f[5], "beta"),
                      parse_double(f[7], "alpha"), parse_double(f[8], "rho"),
                      parse_u64(f[9], "seed"), line});
    }
  }
  std::sort(rows.begin(), rows.end(), [](const Row& a, const Row& b) {
    const auto key = [](const Row& r) {
      const double rho = std::isnan(r.rho) ? -1.0 : r.rho;
      return std::make_tuple(r.policy, r.beta, r.alpha, rho, r.seed);
    };
    return key(a) < key(b);
  });
  std::ostringstream out;
  out << summary_csv_header() << "\n";
  for (const auto& r : rows) {
    out << r.text << "\n";
  }
  const std::string text = out.str();
  write_text_file((fs::path(out_dir) / "summary.csv").string(), text);
  return text;
}

}  // namespace nudge
