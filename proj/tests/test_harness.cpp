#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <filesystem>

#include "nudge/config.hpp"
#include "nudge/csvio.hpp"
#include "nudge/sweep.hpp"

using namespace nudge;
namespace fs = std::filesystem;

namespace {

const char* kMinimalConfig = R"({
  // smallest viable scenario
  "network": {"generator": {"n_agents": 6, "density": 0.8,
                            "allow_self_loops": true, "seed": 3}},
  "model": {"beta": 4.0, "T": 5}
})";

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name)
      : path(fs::temp_directory_path() / name) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

}  // namespace

TEST_CASE("minimal config picks up the documented defaults") {
  const auto cfg = parse_config_text(kMinimalConfig, "minimal");
  CHECK(cfg.tau == 3.0);
  CHECK(cfg.mpc.horizon == 10);
  CHECK(cfg.mpc.q_weight == 100.0);
  CHECK(cfg.mpc.r1_weight == 10.0);
  CHECK(cfg.mpc.r2_weight == 10.0);
  CHECK(cfg.mpc.q_terminal == 1.0);
  CHECK(cfg.alpha == 0.5);
  CHECK(cfg.beta == 4.0);
  CHECK(cfg.horizon_T == 5);
  CHECK(cfg.kernel_variant == KernelVariant::kIir);
  CHECK(cfg.estimator_kind == ObservationEstimator::Kind::kRunningMean);
}

TEST_CASE("range and key errors are specific") {
  CHECK_THROWS_WITH_AS(
      parse_config_text(R"({"network": {"generator": {"n_agents": 4}},
                            "model": {"beta": 1.0, "T": 2, "rho": 1.5}})",
                        "cfg"),
      doctest::Contains("rho"), ConfigError);
  CHECK_THROWS_WITH_AS(
      parse_config_text(R"({"network": {"generator": {"n_agents": 4}},
                            "model": {"beta": 1.0, "T": 2}, "typo": 1})",
                        "cfg"),
      doctest::Contains("typo"), ConfigError);
  CHECK_THROWS_WITH_AS(
      parse_config_text(R"({"network": {"generator": {"n_agents": 4}},
                            "model": {"T": 2}})",
                        "cfg"),
      doctest::Contains("beta"), ConfigError);
  CHECK_THROWS_AS(parse_config_text(R"({"model": {"beta": 1.0, "T": 2}})",
                                    "cfg"),
                  ConfigError);
}

TEST_CASE("serialization round-trips to a fixed point") {
  const auto cfg = parse_config_text(kMinimalConfig, "minimal");
  const std::string once = serialize_config(cfg);
  const auto again = parse_config_text(once, "reparsed");
  CHECK(serialize_config(again) == once);
}

TEST_CASE("sweep product cardinality and determinism") {
  TempDir dir_a("nudge_sweep_a");
  TempDir dir_b("nudge_sweep_b");
  auto cfg = parse_config_text(kMinimalConfig, "minimal");
  cfg.mpc.horizon = 3;  // keep the cells fast
  const SweepSpec spec = parse_sweep_text(
      R"({"alpha": [0.2, 0.8], "rho": [0.3, 0.7], "beta": [2.0, 4.0]})",
      "spec");
  const auto cells = enumerate_cells(spec, cfg);
  CHECK(cells.size() == 8);

  const auto results_a = run_sweep(spec, cfg, dir_a.path.string(), 2);
  const auto results_b = run_sweep(spec, cfg, dir_b.path.string(), 1);
  REQUIRE(results_a.size() == 8);
  for (const auto& r : results_a) {
    CHECK(r.ok);
  }
  const std::string summary_a =
      read_text_file((dir_a.path / "summary.csv").string());
  const std::string summary_b =
      read_text_file((dir_b.path / "summary.csv").string());
  CHECK(summary_a == summary_b);
  CHECK(fs::exists(dir_a.path / "manifest.json"));
}

TEST_CASE("file-backed networks resolve with persistence overrides") {
  TempDir dir("nudge_netfile");
  GeneratorParams params;
  params.n_agents = 7;
  params.density = 0.9;
  params.allow_self_loops = true;
  const auto sn = generate_synthetic_network(params, 9);
  const std::string net_path = (dir.path / "net.csv").string();
  write_network_csv(sn.net, sn.profile, net_path);

  const auto cfg = parse_config_text(
      R"({"network": {"file": ")" + net_path + R"("},
          "model": {"beta": 1.0, "T": 2, "rho": 0.4}})",
      "cfg");
  const auto resolved = resolve_network(cfg);
  CHECK(resolved.net.n_agents == 7);
  CHECK((resolved.net.influence - sn.net.influence).lpNorm<Eigen::Infinity>() <=
        1e-15);
  CHECK(resolved.net.persistence == Vec::Constant(7, 0.4));
}

TEST_CASE("cell seeds are stable under sweep growth") {
  const auto cfg = parse_config_text(kMinimalConfig, "minimal");
  const auto small = enumerate_cells(
      parse_sweep_text(R"({"beta": [2.0]})", "s"), cfg);
  const auto grown = enumerate_cells(
      parse_sweep_text(R"({"beta": [2.0, 4.0]})", "s"), cfg);
  CHECK(small[0].derived_seed == grown[0].derived_seed);
}

TEST_CASE("a failing cell does not abort its siblings") {
  TempDir dir("nudge_sweep_fail");
  auto cfg = parse_config_text(kMinimalConfig, "minimal");
  cfg.beta = 1e9;  // saturates the naive split at full effort
  const SweepSpec spec = parse_sweep_text(
      R"({"policy": ["naive"], "rho": [0.0, 0.97]})", "spec");
  const auto results = run_sweep(spec, cfg, dir.path.string(), 1);
  REQUIRE(results.size() == 2);
  int ok = 0, failed = 0;
  for (const auto& r : results) {
    (r.ok ? ok : failed)++;
  }
  CHECK(ok == 1);
  CHECK(failed == 1);
  const std::string manifest =
      read_text_file((dir.path / "manifest.json").string());
  CHECK(manifest.find("failed") != std::string::npos);
}

TEST_CASE("summary layout and timeseries means") {
  TempDir dir("nudge_single");
  auto cfg = parse_config_text(kMinimalConfig, "minimal");
  cfg.mpc.horizon = 3;
  const SweepSpec spec = parse_sweep_text(R"({"policy": ["naive"]})", "spec");
  const auto results = run_sweep(spec, cfg, dir.path.string(), 1);
  REQUIRE(results.size() == 1);
  REQUIRE(results[0].ok);

  const std::string summary =
      read_text_file((dir.path / "summary.csv").string());
  CHECK(summary.rfind("policy,x_bar_T,sigma_x_T,u_s_mean,u_l_mean,beta,"
                      "residual_budget",
                      0) == 0);
  CHECK(summary.find("\nnaive,") != std::string::npos);

  const fs::path run_dir = dir.path / "runs" / results[0].cell.dir_name;
  std::istringstream ts(read_text_file((run_dir / "timeseries.csv").string()));
  std::string header;
  REQUIRE(std::getline(ts, header));
  const auto cols = split_csv_line(header);
  const int n = 6;
  std::string line;
  while (std::getline(ts, line)) {
    if (line.empty()) {
      continue;
    }
    const auto fields = split_csv_line(line);
    REQUIRE(fields.size() == cols.size());
    for (int block = 0; block < 4; ++block) {
      const int start = 1 + block * (n + 1);
      double sum = 0.0;
      for (int v = 0; v < n; ++v) {
        sum += parse_double(fields[start + v], "timeseries");
      }
      const double mean = parse_double(fields[start + n], "timeseries");
      CHECK(std::abs(mean - sum / n) <= 1e-12);
    }
  }

  // report reconstruction matches the emitted summary
  const std::string reported = report_run_dir(dir.path.string());
  CHECK(reported == summary);
}

#ifdef NUDGE_CLI_PATH
TEST_CASE("command-line round trip") {
  TempDir dir("nudge_cli");
  const std::string config_path = (dir.path / "scenario.json").string();
  write_text_file(config_path, std::string(kMinimalConfig));
  const std::string cli = NUDGE_CLI_PATH;
  const std::string out = (dir.path / "out").string();

  CHECK(std::system((cli + " validate " + config_path + " > /dev/null").c_str()) == 0);
  CHECK(std::system((cli + " simulate " + config_path + " --out " + out +
                     " > /dev/null")
                        .c_str()) == 0);
  CHECK(fs::exists(fs::path(out) / "trajectory.csv"));
  CHECK(std::system((cli + " design " + config_path + " --policy naive --out " +
                     out + " > /dev/null")
                        .c_str()) == 0);
  CHECK(std::system((cli + " equilibrium " + config_path + " --out " + out +
                     " > /dev/null")
                        .c_str()) == 0);
  CHECK(fs::exists(fs::path(out) / "equilibrium.csv"));
  CHECK(std::system((cli + " validate /nonexistent.json 2> /dev/null").c_str()) !=
        0);
}
#endif
