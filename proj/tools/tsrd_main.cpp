// Two-scale reaction-diffusion simulator for the concrete-sulfatation model.
//
//   tsrd run <config.json>      evolve the coupled system, write snapshots,
//                               the diagnostics time series and (optionally)
//                               the stationary comparison
//   tsrd steady <config.json>   solve the stationary problem for the
//                               configured gypsum field and probe uniqueness
//   tsrd verify <config.json>   run the invariant suite and write a
//                               machine-readable report
//
// Exit codes: 0 all enabled checks pass, 1 a check failed, 2 bad configuration.

#include <CLI11.hpp>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <optional>
#include <string>

#include "tsrd/config.hpp"
#include "tsrd/io.hpp"
#include "tsrd/oracle.hpp"
#include "tsrd/stationary.hpp"
#include "tsrd/timestepper.hpp"
#include "tsrd/verify.hpp"

namespace {

struct CliOverrides {
  std::optional<std::string> output_dir;
  std::optional<int> threads;
  std::optional<unsigned> seed;
  std::optional<double> steady_tol;
  std::optional<long> max_steps;
};

void apply(const CliOverrides& ov, tsrd::RunConfig& cfg) {
  if (ov.output_dir) cfg.options.output_dir = *ov.output_dir;
  if (ov.threads) {
    cfg.options.threads = *ov.threads;
    cfg.time.threads = tsrd::resolve_threads(*ov.threads);
  }
  if (ov.seed) cfg.options.seed = *ov.seed;
  if (ov.steady_tol) cfg.time.steady_tol = *ov.steady_tol;
  if (ov.max_steps) cfg.time.max_steps = *ov.max_steps;
}

void add_common(CLI::App* sub, std::string& config_path, CliOverrides& ov) {
  sub->add_option("config", config_path, "JSON configuration file")->required();
  sub->add_option("--output-dir", ov.output_dir, "output directory")->envname("TSRD_OUTPUT_DIR");
  sub->add_option("--threads", ov.threads, "worker threads (0 = all cores)")->envname("TSRD_THREADS");
  sub->add_option("--seed", ov.seed, "random seed")->envname("TSRD_SEED");
  sub->add_option("--steady-tol", ov.steady_tol, "early-stop tolerance on ||dt state||_H")
      ->envname("TSRD_STEADY_TOL");
  sub->add_option("--max-steps", ov.max_steps, "step budget")->envname("TSRD_MAX_STEPS");
}

int run_mode(const tsrd::RunConfig& cfg) {
  using namespace tsrd;
  namespace fs = std::filesystem;
  TwoScaleGrid grid = build_two_scale_grid(cfg.macro, cfg.micro);
  DiscreteOperators ops = assemble_operators(grid, cfg.params);
  State initial = build_initial_state(cfg, grid);
  fs::create_directories(cfg.options.output_dir);

  RunResult rr = run(initial, cfg.params, grid, ops, cfg.time);

  bool stationary_ok = true;
  double final_distance = std::numeric_limits<double>::quiet_NaN();
  if (cfg.options.compare_stationary && rr.ok()) {
    auto sol = solve_stationary(rr.snapshots.back().w4, cfg.params.w3D.limit(), cfg.params, grid, ops);
    stationary_ok = sol.converged;
    if (sol.converged) {
      fill_distances(rr, sol.as_state(), cfg.params, grid);
      final_distance = std::sqrt(rr.records.back().h_norm_sq);
      write_snapshot((fs::path(cfg.options.output_dir) / "stationary_state.txt").string(),
                     sol.as_state(), grid);
    }
  }

  for (std::size_t n = 0; n < rr.snapshots.size(); ++n)
    write_snapshot((fs::path(cfg.options.output_dir) / snapshot_name(n)).string(),
                   rr.snapshots[n], grid);
  write_snapshot((fs::path(cfg.options.output_dir) / "final_state.txt").string(),
                 rr.snapshots.back(), grid);
  write_series_csv((fs::path(cfg.options.output_dir) / "series.csv").string(), rr.records);

  double worst_bound_rel = 0;
  for (int i = 0; i < 4; ++i) {
    const double m = rr.bounds[i];
    const double d = rr.max_bound_defect[static_cast<std::size_t>(i)];
    worst_bound_rel = std::max(worst_bound_rel, m > 0 ? d / m : (d > 0 ? 1e300 : 0.0));
  }
  const bool bounds_ok = worst_bound_rel <= 1e-8;
  const bool mass_ok = rr.max_mass_defect_rel <= 1e-8;
  const bool w4_ok = rr.min_w4_increment >= 0;

  std::printf("run: %s after %ld steps, t = %.6g (%.2f s)\n",
              rr.ok() ? "completed" : rr.message.c_str(), rr.steps, rr.snapshots.back().t,
              rr.runtime_seconds);
  std::printf("  bound defect (rel) %.3e  mass defect (rel) %.3e  gypsum min increment %.3e\n",
              worst_bound_rel, rr.max_mass_defect_rel, rr.min_w4_increment);
  std::printf("  dt_max estimate %.3g, energy(final) %.10g\n", rr.dt_max_estimate,
              rr.records.back().energy);
  if (std::isfinite(final_distance))
    std::printf("  |w(t_end) - w_inf|_H = %.6e\n", final_distance);
  std::printf("  outputs in %s\n", cfg.options.output_dir.c_str());

  return (rr.ok() && bounds_ok && mass_ok && w4_ok && stationary_ok) ? 0 : 1;
}

int steady_mode(const tsrd::RunConfig& cfg) {
  using namespace tsrd;
  namespace fs = std::filesystem;
  TwoScaleGrid grid = build_two_scale_grid(cfg.macro, cfg.micro);
  DiscreteOperators ops = assemble_operators(grid, cfg.params);
  State initial = build_initial_state(cfg, grid);
  fs::create_directories(cfg.options.output_dir);

  // the configured initial w4 plays the role of the frozen gypsum field
  auto sol = solve_stationary(initial.w4, cfg.params.w3D.limit(), cfg.params, grid, ops);
  write_snapshot((fs::path(cfg.options.output_dir) / "stationary_state.txt").string(),
                 sol.as_state(), grid);
  write_newton_trace((fs::path(cfg.options.output_dir) / "newton_trace.csv").string(), sol.trace);

  auto rc = residual_check(sol, cfg.params, grid, ops);
  std::printf("steady: %s in %d iterations, residuals (%.3e, %.3e, %.3e)\n",
              sol.converged ? "converged" : "NOT converged", sol.iterations, rc[0], rc[1], rc[2]);

  bool probe_ok = true;
  auto probe = uniqueness_probe(cfg.params, grid, ops, initial.w4, cfg.params.w3D.limit(),
                                cfg.options.uniqueness_starts, cfg.options.seed);
  if (probe.hypothesis_holds) {
    probe_ok = probe.n_converged == probe.n_starts && probe.max_pairwise_distance <= 1e-8;
    std::printf("  uniqueness probe: %d/%d converged, max pairwise H-distance %.3e\n",
                probe.n_converged, probe.n_starts, probe.max_pairwise_distance);
  } else {
    std::printf("  uniqueness probe (psi not strongly monotone, informational): "
                "%d/%d converged, max pairwise H-distance %.3e\n",
                probe.n_converged, probe.n_starts, probe.max_pairwise_distance);
  }
  std::printf("  outputs in %s\n", cfg.options.output_dir.c_str());
  return (sol.converged && probe_ok) ? 0 : 1;
}

int verify_mode(const tsrd::RunConfig& cfg) {
  using namespace tsrd;
  namespace fs = std::filesystem;
  fs::create_directories(cfg.options.output_dir);
  VerifyReport rep = verify_config(cfg);
  for (const auto& c : rep.checks) {
    const char* tag = c.skipped ? "SKIP" : (c.pass ? "PASS" : "FAIL");
    std::printf("[%s] %s: value %.6g vs threshold %.6g%s%s\n", tag, c.name.c_str(), c.value,
                c.threshold, c.detail.empty() ? "" : " -- ", c.detail.c_str());
  }
  write_json((fs::path(cfg.options.output_dir) / "verify_report.json").string(), rep.to_json());
  std::printf("verify: %s\n", rep.all_pass() ? "all checks pass" : "FAILURES present");
  return rep.all_pass() ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"two-scale reaction-diffusion simulator (concrete sulfatation)"};
  app.require_subcommand(1);

  std::string config_path;
  CliOverrides ov;
  CLI::App* cmd_run = app.add_subcommand("run", "evolve the system and write diagnostics");
  CLI::App* cmd_steady = app.add_subcommand("steady", "solve the stationary problem");
  CLI::App* cmd_verify = app.add_subcommand("verify", "run the invariant suite");
  add_common(cmd_run, config_path, ov);
  add_common(cmd_steady, config_path, ov);
  add_common(cmd_verify, config_path, ov);

  CLI11_PARSE(app, argc, argv);

  try {
    tsrd::RunConfig cfg = tsrd::load_config(config_path);
    apply(ov, cfg);
    if (cmd_run->parsed()) return run_mode(cfg);
    if (cmd_steady->parsed()) return steady_mode(cfg);
    return verify_mode(cfg);
  } catch (const tsrd::ConfigError& e) {
    std::fprintf(stderr, "configuration error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
}
