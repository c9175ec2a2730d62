#pragma once

#include <algorithm>
#include <cmath>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "tsrd/config.hpp"
#include "tsrd/oracle.hpp"
#include "tsrd/stationary.hpp"
#include "tsrd/timestepper.hpp"

namespace tsrd {

struct CheckOutcome {
  std::string name;
  bool pass = false;
  bool skipped = false;
  double value = 0;
  double threshold = 0;
  std::string detail;
};

struct VerifyReport {
  std::vector<CheckOutcome> checks;
  bool all_pass() const {
    for (const auto& c : checks)
      if (!c.skipped && !c.pass) return false;
    return true;
  }
  nlohmann::json to_json() const {
    nlohmann::json out;
    out["all_pass"] = all_pass();
    out["checks"] = nlohmann::json::array();
    for (const auto& c : checks)
      out["checks"].push_back({{"name", c.name},
                               {"status", c.skipped ? "skipped" : (c.pass ? "pass" : "fail")},
                               {"value", c.value},
                               {"threshold", c.threshold},
                               {"detail", c.detail}});
    return out;
  }
};

namespace detail {

inline void add_check(VerifyReport& rep, const std::string& name, bool pass, double value,
                      double threshold, const std::string& detail = "") {
  rep.checks.push_back({name, pass, false, value, threshold, detail});
}

inline void skip_check(VerifyReport& rep, const std::string& name, const std::string& why) {
  rep.checks.push_back({name, true, true, 0, 0, why});
}

/// First index after which the series is nonincreasing (with roundoff slack),
/// as a fraction of the series length.
inline double transient_fraction(const std::vector<double>& series) {
  if (series.size() < 2) return 0.0;
  const double slack = 1e-12 * std::max(1.0, series.front());
  std::size_t start = 0;
  for (std::size_t n = series.size() - 1; n-- > 0;)
    if (series[n + 1] > series[n] + slack) {
      start = n + 1;
      break;
    }
  return static_cast<double>(start) / static_cast<double>(series.size());
}

}  // namespace detail

/// Full invariant suite on a configuration: assumptions, trace/lift duality,
/// the evolution monitors (bounds, mass, gypsum monotonicity), energy decay
/// with a dt-refinement order estimate, the explicit-Euler oracle comparison
/// on a shrunk grid, the Henry-equilibrium fixed point, double-entry energy
/// and the stationary solve cross-checks.
inline VerifyReport verify_config(const RunConfig& cfg) {
  VerifyReport rep;
  TwoScaleGrid grid = build_two_scale_grid(cfg.macro, cfg.micro);
  State initial = build_initial_state(cfg, grid);

  {
    ValidationReport vr = validate_config(cfg, grid, initial);
    std::string fails;
    for (const auto& f : vr.failures()) fails += f + "; ";
    detail::add_check(rep, "assumptions (A1)-(A6)", vr.all_pass(), vr.all_pass() ? 0 : 1, 0, fails);
  }
  {
    const double defect = duality_check(grid, cfg.options.seed, 100);
    detail::add_check(rep, "trace/lift duality", defect <= 1e-12, defect, 1e-12);
  }

  DiscreteOperators ops = assemble_operators(grid, cfg.params);
  // the energy needs primitives of R and psi only
  const bool closed_form = cfg.params.R.kind != KineticKind::custom_table &&
                           cfg.params.psi.kind != KineticKind::custom_table;

  // main evolution with the configured controls
  RunControls rc = cfg.time;
  RunResult rr = run(initial, cfg.params, grid, ops, rc);
  {
    detail::add_check(rep, "run completes", rr.ok(), rr.ok() ? 0 : 1, 0, rr.message);
    double worst_rel = 0;
    for (int i = 0; i < 4; ++i) {
      const double m = rr.bounds[i];
      const double d = rr.max_bound_defect[static_cast<std::size_t>(i)];
      if (m > 0) worst_rel = std::max(worst_rel, d / m);
      else worst_rel = std::max(worst_rel, d > 0 ? 1e300 : 0.0);
    }
    detail::add_check(rep, "maximum-principle bounds", worst_rel <= 1e-8, worst_rel, 1e-8,
                      "max defect relative to M_i over all nodes and steps");
    detail::add_check(rep, "mass balance", rr.max_mass_defect_rel <= 1e-8,
                      rr.max_mass_defect_rel, 1e-8, "per-step defect / total mass");
    detail::add_check(rep, "gypsum monotone", rr.min_w4_increment >= 0, rr.min_w4_increment, 0,
                      "most negative nodewise increment");
    if (rr.records.size() >= 11) {
      const double total = rr.records.back().w4_total - rr.records.front().w4_total;
      const double t0 = rr.records.front().t, t1 = rr.records.back().t;
      const double tail_start = t1 - 0.1 * (t1 - t0);
      double tail = 0;
      for (std::size_t n = 0; n + 1 < rr.records.size(); ++n)
        if (rr.records[n].t >= tail_start - 1e-12)
          tail += rr.records[n + 1].w4_total - rr.records[n].w4_total;
      const double frac = total > 0 ? tail / total : 0.0;
      detail::add_check(rep, "gypsum saturation tail", frac < 0.01, frac, 0.01,
                        "L1 gain over the last 10% of the horizon / total gain");
    } else {
      detail::skip_check(rep, "gypsum saturation tail", "needs at least 11 records");
    }
  }

  // energy decay order under dt refinement (shrunk horizon)
  if (closed_form) {
    const double t_ver = std::min(cfg.time.t_end, 2.0);
    auto max_pos = [&](double dt) {
      RunControls c = cfg.time;
      c.dt = dt;
      c.t_end = t_ver;
      c.output_every = t_ver / 10;
      c.steady_tol = 0;
      RunResult r = run(initial, cfg.params, grid, ops, c);
      double m = 0;
      for (double d : energy_balance(r.records)) m = std::max(m, d);
      return m;
    };
    const double d1 = max_pos(4 * cfg.time.dt);
    const double d2 = max_pos(2 * cfg.time.dt);
    const double d3 = max_pos(cfg.time.dt);
    const double floor = 1e-13;
    if (d1 <= floor && d3 <= floor) {
      detail::add_check(rep, "energy decay order", true, 1.0, 0.9,
                        "defects below measurement floor at every dt");
    } else {
      const double order = std::log2(std::max(d1, floor) / std::max(d3, floor)) / 2.0;
      const bool monotone = d1 >= d2 - floor && d2 >= d3 - floor;
      detail::add_check(rep, "energy decay order", order >= 0.9 && monotone, order, 0.9,
                        "defects " + std::to_string(d1) + " / " + std::to_string(d2) + " / " +
                            std::to_string(d3));
    }
  } else {
    detail::skip_check(rep, "energy decay order", "custom-table kinetics have no closed-form primitives");
  }

  // oracle comparison on a shrunk grid
  {
    RunConfig small = cfg;
    for (int d = 0; d < small.macro.dim; ++d)
      small.macro.axes[static_cast<std::size_t>(d)].cells =
          std::min(small.macro.axes[static_cast<std::size_t>(d)].cells, 3);
    for (int d = 0; d < small.micro.dim; ++d)
      small.micro.axes[static_cast<std::size_t>(d)].cells =
          std::min(small.micro.axes[static_cast<std::size_t>(d)].cells, 3);
    TwoScaleGrid sg = build_two_scale_grid(small.macro, small.micro);
    DiscreteOperators sops = assemble_operators(sg, small.params);
    State sinit = build_initial_state(small, sg);
    const double t_cmp = 0.1;
    State ref = oracle::explicit_run(sinit, t_cmp, 1e-6, small.params, sg, sops);
    Bounds b = compute_bounds(small.params, sinit);
    auto scheme_err = [&](double dt) {
      State s = sinit;
      Stepper st(sg, small.params, sops, b, dt);
      const long n = std::lround(t_cmp / dt);
      for (long k = 0; k < n; ++k)
        if (!st.step(s).ok) return std::numeric_limits<double>::quiet_NaN();
      return std::sqrt(h_distance_sq(s, ref, small.params, sg));
    };
    const double e1 = scheme_err(1e-3), e2 = scheme_err(5e-4), e3 = scheme_err(2.5e-4);
    if (std::max({e1, e2, e3}) <= 1e-14) {
      detail::add_check(rep, "oracle first-order convergence", true, 0.0, 2.0,
                        "scheme and oracle agree to roundoff (degenerate dynamics)");
    } else {
      const double r1 = e1 / e2, r2 = e2 / e3;
      const bool ok = std::isfinite(r1) && std::isfinite(r2) && r1 >= 1.7 && r1 <= 2.3 &&
                      r2 >= 1.7 && r2 <= 2.3;
      detail::add_check(rep, "oracle first-order convergence", ok, r1, 2.0,
                        "halving ratios " + std::to_string(r1) + ", " + std::to_string(r2));
    }
  }

  // Henry equilibrium fixed point (constant data only)
  if (cfg.params.w3D.amplitude == 0.0) {
    State eq = State::henry_equilibrium(grid, cfg.params, cfg.params.w3D.winf);
    Bounds b = compute_bounds(cfg.params, eq);
    Stepper st(grid, cfg.params, ops, b, cfg.time.dt);
    State s = eq;
    bool ok = true;
    for (int n = 0; n < 1000 && ok; ++n) ok = st.step(s).ok;
    double drift = 0;
    drift = std::max(drift, (s.w1 - eq.w1).lpNorm<Eigen::Infinity>());
    drift = std::max(drift, (s.w2 - eq.w2).lpNorm<Eigen::Infinity>());
    drift = std::max(drift, (s.w3 - eq.w3).lpNorm<Eigen::Infinity>());
    drift = std::max(drift, (s.w4 - eq.w4).lpNorm<Eigen::Infinity>());
    const double tol = 1e-10 * std::max(1.0, b.max());
    detail::add_check(rep, "Henry equilibrium fixed point", ok && drift <= tol, drift, tol,
                      "max drift over 1000 steps");
  } else {
    detail::skip_check(rep, "Henry equilibrium fixed point", "boundary data is time-dependent");
  }

  // double-entry energy
  if (closed_form) {
    std::mt19937_64 rng(cfg.options.seed);
    std::uniform_real_distribution<double> uni(0.0, 1.0);
    const Bounds b = compute_bounds(cfg.params, initial);
    double worst = 0;
    for (int trial = 0; trial < 100; ++trial) {
      State s = State::zero(grid);
      for (int i = 0; i < grid.n_macro(); ++i) {
        for (int j = 0; j < grid.n_micro(); ++j) {
          s.w1(j, i) = std::max(b.M1, 1.0) * uni(rng);
          s.w2(j, i) = std::max(b.M2, 1.0) * uni(rng);
        }
        s.w3[i] = std::max(b.M3, 1.0) * uni(rng);
        for (int j = 0; j < grid.gamma1.count(); ++j)
          s.w4(j, i) = std::max(b.M4, 1.0) * uni(rng);
      }
      s.t = uni(rng);
      const double a = energy(s, cfg.params, grid, ops);
      const double c = oracle::energy_independent(s, cfg.params, grid);
      worst = std::max(worst, std::abs(a - c) / std::max({std::abs(a), std::abs(c), 1e-30}));
    }
    detail::add_check(rep, "double-entry energy", worst <= 1e-12, worst, 1e-12,
                      "relative disagreement over 100 random states");
  } else {
    detail::skip_check(rep, "double-entry energy", "custom-table kinetics have no closed-form primitives");
  }

  // stationary cross-checks
  if (cfg.options.compare_stationary && rr.ok()) {
    auto sol = solve_stationary(rr.snapshots.back().w4, cfg.params.w3D.limit(), cfg.params, grid, ops);
    detail::add_check(rep, "stationary solve converged", sol.converged,
                      sol.converged ? 0 : 1, 0,
                      "iterations: " + std::to_string(sol.iterations));
    if (sol.converged) {
      std::vector<double> dist;
      dist.reserve(rr.snapshots.size());
      for (const auto& snap : rr.snapshots)
        dist.push_back(std::sqrt(h_distance_sq(snap, sol.as_state(), cfg.params, grid)));
      const double frac = detail::transient_fraction(dist);
      detail::add_check(rep, "distance monotone after transient", frac <= 0.05, frac, 0.05,
                        "fraction of samples before the monotone tail");
      if (cfg.time.t_end >= 50.0 && cfg.params.psi_strongly_monotone() && dist.front() > 0) {
        const double ratio = dist.back() / dist.front();
        detail::add_check(rep, "large-time convergence", ratio <= 1e-6, ratio, 1e-6,
                          "|w(t_end) - w_inf|_H / |w(0) - w_inf|_H");
      } else {
        detail::skip_check(rep, "large-time convergence",
                           "needs t_end >= 50, strongly monotone psi and a nontrivial start");
      }
    }
    if (cfg.params.psi_strongly_monotone()) {
      auto probe = uniqueness_probe(cfg.params, grid, ops, rr.snapshots.back().w4,
                                    cfg.params.w3D.limit(), cfg.options.uniqueness_starts,
                                    cfg.options.seed);
      detail::add_check(rep, "stationary uniqueness", probe.max_pairwise_distance <= 1e-8,
                        probe.max_pairwise_distance, 1e-8,
                        std::to_string(probe.n_converged) + "/" +
                            std::to_string(probe.n_starts) + " starts converged");
    } else {
      detail::skip_check(rep, "stationary uniqueness",
                         "psi is not strongly monotone; distances are informational only");
    }
  }

  return rep;
}

}  // namespace tsrd
