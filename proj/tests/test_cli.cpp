// End-to-end checks of the command-line tool: exit codes, output files and
// the determinism contract (identical config + seed => bit-identical files).

#include <catch2/catch_amalgamated.hpp>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <json.hpp>

namespace fs = std::filesystem;

namespace {

int run_cli(const std::string& args) {
  const std::string cmd = std::string(TSRD_CLI_PATH) + " " + args + " > /dev/null 2>&1";
  const int rc = std::system(cmd.c_str());
  return WEXITSTATUS(rc);
}

std::string small_canonical(const std::string& outdir) {
  return std::string(R"({
    "grid": {
      "macro": {"dim": 2, "cells": [3, 3], "length": [1.0, 1.0],
                "tags": {"left": "dirichlet", "right": "neumann", "bottom": "neumann", "top": "neumann"}},
      "micro": {"dim": 2, "cells": [3, 3], "length": [1.0, 1.0],
                "tags": {"bottom": "gamma1", "top": "gamma2", "left": "gamma3", "right": "gamma3"}}
    },
    "params": {"d1": 2.0, "d2": 2.0, "d3": 2.0, "alpha": 2.0, "gamma": 2.0, "henry": 0.5,
               "w3d": {"winf": 1.0, "amplitude": 0.0, "rate": 1.0}},
    "kinetics": {"R": {"kind": "clipped_linear", "k": 1.0},
                 "Q": {"kind": "clipped_linear", "k": 2.0, "beta_max": 1.0},
                 "psi": {"kind": "power_monotone", "k": 2.0, "p": 1.0}},
    "initial": {"w1": 0.0, "w2": 0.0, "w3": 1.0, "w4": 0.0},
    "time": {"dt": 1e-3, "t_end": 0.5, "output_every": 0.1},
    "run": {"seed": 42, "threads": 2, "output_dir": ")") +
         outdir + R"(", "compare_stationary": true, "uniqueness_starts": 3}
  })";
}

std::string write_cfg(const std::string& text, const std::string& path) {
  std::ofstream out(path);
  out << text;
  return path;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST_CASE("shipped zero-data config runs to an all-zero final state") {
  const std::string dir = "/tmp/tsrd_cli_zero";
  fs::remove_all(dir);
  const std::string cfg = std::string(TSRD_SOURCE_DIR) + "/configs/zero_data.json";
  REQUIRE(run_cli("run " + cfg + " --output-dir " + dir) == 0);
  const std::string final_state = slurp(fs::path(dir) / "final_state.txt");
  // every non-coordinate value is exactly zero: no digit other than the
  // coordinates' 0/0.25/0.5/0.75/1 should appear; spot-check a few lines
  std::istringstream lines(final_state);
  std::string line;
  bool saw_data = false;
  while (std::getline(lines, line)) {
    if (line.empty() || line[0] == '#') continue;
    saw_data = true;
    const auto last_space = line.find_last_of(' ');
    CHECK(line.substr(last_space + 1) == "0");
  }
  CHECK(saw_data);
}

TEST_CASE("run subcommand produces outputs and exits 0") {
  const std::string dir = "/tmp/tsrd_cli_run";
  fs::remove_all(dir);
  const auto cfg = write_cfg(small_canonical(dir), "/tmp/tsrd_cli_run.json");
  CHECK(run_cli("run " + cfg) == 0);
  CHECK(fs::exists(fs::path(dir) / "final_state.txt"));
  CHECK(fs::exists(fs::path(dir) / "series.csv"));
  CHECK(fs::exists(fs::path(dir) / "snapshot_000000.txt"));
  CHECK(fs::exists(fs::path(dir) / "stationary_state.txt"));
}

TEST_CASE("determinism: identical config and seed give bit-identical files") {
  const std::string da = "/tmp/tsrd_cli_det_a", db = "/tmp/tsrd_cli_det_b";
  fs::remove_all(da);
  fs::remove_all(db);
  const auto cfg = write_cfg(small_canonical(da), "/tmp/tsrd_cli_det.json");
  REQUIRE(run_cli("run " + cfg) == 0);
  REQUIRE(run_cli("run " + cfg + " --output-dir " + db) == 0);
  CHECK(slurp(fs::path(da) / "series.csv") == slurp(fs::path(db) / "series.csv"));
  CHECK(slurp(fs::path(da) / "final_state.txt") == slurp(fs::path(db) / "final_state.txt"));
}

TEST_CASE("verify subcommand writes a report") {
  const std::string dir = "/tmp/tsrd_cli_verify";
  fs::remove_all(dir);
  const auto cfg = write_cfg(small_canonical(dir), "/tmp/tsrd_cli_verify.json");
  CHECK(run_cli("verify " + cfg) == 0);
  const auto report = nlohmann::json::parse(slurp(fs::path(dir) / "verify_report.json"));
  CHECK(report.at("all_pass").get<bool>());
  CHECK(report.at("checks").size() >= 10);
}

TEST_CASE("steady subcommand") {
  const std::string dir = "/tmp/tsrd_cli_steady";
  fs::remove_all(dir);
  std::string text = small_canonical(dir);
  // saturate the gypsum so the steady solve hits the Henry equilibrium
  text.replace(text.find("\"w4\": 0.0"), 9, "\"w4\": 1.0");
  const auto cfg = write_cfg(text, "/tmp/tsrd_cli_steady.json");
  CHECK(run_cli("steady " + cfg) == 0);
  CHECK(fs::exists(fs::path(dir) / "newton_trace.csv"));
  CHECK(fs::exists(fs::path(dir) / "stationary_state.txt"));
}

TEST_CASE("environment variable overrides") {
  const std::string dir = "/tmp/tsrd_cli_env";
  fs::remove_all(dir);
  const auto cfg = write_cfg(small_canonical("/tmp/tsrd_cli_env_ignored"), "/tmp/tsrd_cli_env.json");
  const std::string cmd = std::string("TSRD_OUTPUT_DIR=") + dir + " " + TSRD_CLI_PATH +
                          " run /tmp/tsrd_cli_env.json > /dev/null 2>&1";
  REQUIRE(WEXITSTATUS(std::system(cmd.c_str())) == 0);
  CHECK(fs::exists(fs::path(dir) / "final_state.txt"));
}

TEST_CASE("exit codes") {
  SECTION("malformed JSON exits 2") {
    write_cfg("{ not json", "/tmp/tsrd_cli_bad.json");
    CHECK(run_cli("run /tmp/tsrd_cli_bad.json") == 2);
  }
  SECTION("assumption violation exits 2") {
    std::string text = small_canonical("/tmp/tsrd_cli_a1");
    text.replace(text.find("\"d1\": 2.0"), 9, "\"d1\": 0.0");
    write_cfg(text, "/tmp/tsrd_cli_a1.json");
    CHECK(run_cli("run /tmp/tsrd_cli_a1.json") == 2);
  }
  SECTION("missing file exits 2") {
    CHECK(run_cli("run /tmp/does_not_exist_tsrd.json") == 2);
  }
}
