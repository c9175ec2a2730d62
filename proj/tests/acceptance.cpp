// Acceptance suite: exercises the qualitative theory at desk scale and prints
// one pass/fail line per criterion. Exit code 0 iff every criterion passes.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <random>
#include <string>
#include <vector>

#include "tsrd/oracle.hpp"
#include "tsrd/stationary.hpp"
#include "tsrd/timestepper.hpp"

using namespace tsrd;

namespace {

int failures = 0;

void report(const char* id, const char* name, bool pass, const std::string& detail) {
  std::printf("[%s] %s %s: %s\n", pass ? "PASS" : "FAIL", id, name, detail.c_str());
  if (!pass) ++failures;
}

std::string fmt(const char* f, double a, double b = 0, double c = 0) {
  char buf[256];
  std::snprintf(buf, sizeof(buf), f, a, b, c);
  return buf;
}

/// Canonical configuration: 2D x 2D, strongly monotone linear psi, constant
/// Dirichlet data, equilibrium approached from below.
Params canonical_params() {
  Params p;
  p.d1.c0 = p.d2.c0 = p.d3.c0 = 2.0;
  p.alpha = 2.0;
  p.gamma = 2.0;
  p.henry = 0.5;
  p.R = make_clipped_r(1.0);
  p.Q = make_clipped_q(2.0, 1.0);
  p.psi = make_linear_psi(2.0);
  p.w3D.winf = 1.0;
  p.w3D.amplitude = 0.0;
  return p;
}

State canonical_initial(const TwoScaleGrid& g) {
  State s = State::zero(g);
  s.w3.setConstant(1.0);
  return s;
}

}  // namespace

int main() {
  const auto g = canonical_2d_grid(8, 8);
  const Params p = canonical_params();
  const auto ops = assemble_operators(g, p);
  const State init = canonical_initial(g);

  // ---- the canonical long run drives criteria 1, 2, 4 and 7 ----
  RunControls rc;
  rc.dt = 1e-3;
  rc.t_end = 50.0;
  rc.output_every = 0.5;
  rc.threads = 1;
  const RunResult rr = run(init, p, g, ops, rc);

  // 1. maximum-principle bounds
  {
    bool pass = rr.ok() && rr.runtime_seconds < 60.0;
    double worst_rel = 0;
    for (int i = 0; i < 4; ++i) {
      const double m = rr.bounds[i];
      const double d = rr.max_bound_defect[static_cast<std::size_t>(i)];
      const double rel = m > 0 ? d / m : (d > 0 ? 1e300 : 0.0);
      worst_rel = std::max(worst_rel, rel);
      pass = pass && d <= 1e-8 * m;
    }
    report("C1", "maximum-principle bounds", pass,
           fmt("max defect/M_i = %.3e (tol 1e-8), runtime %.1f s (< 60)", worst_rel,
               rr.runtime_seconds));
  }

  // 2. gypsum monotone convergence with saturating L1 rate
  {
    const bool mono = rr.min_w4_increment >= 0.0;
    const double total = rr.records.back().w4_total - rr.records.front().w4_total;
    const double t0 = rr.records.front().t, t1 = rr.records.back().t;
    double tail = 0;
    for (std::size_t n = 0; n + 1 < rr.records.size(); ++n)
      if (rr.records[n].t >= t1 - 0.1 * (t1 - t0) - 1e-12)
        tail += rr.records[n + 1].w4_total - rr.records[n].w4_total;
    const double frac = total > 0 ? tail / total : 0.0;
    report("C2", "gypsum monotone convergence", mono && frac < 0.01,
           fmt("min nodewise increment = %.1e (>= 0), tail L1 fraction = %.2e (< 0.01)",
               rr.min_w4_increment, frac));
  }

  // 3. energy decay: defect <= C dt with Richardson order >= 0.9
  double richardson_mass_rel = 0;
  {
    auto max_pos_defect = [&](double dt) {
      RunControls c;
      c.dt = dt;
      c.t_end = 2.0;
      c.output_every = 0.2;
      c.threads = 1;
      const RunResult r = run(init, p, g, ops, c);
      richardson_mass_rel = std::max(richardson_mass_rel, r.max_mass_defect_rel);
      double m = 0;
      for (double d : energy_balance(r.records)) m = std::max(m, d);
      return m;
    };
    const double d1 = max_pos_defect(4e-3);
    const double d2 = max_pos_defect(2e-3);
    const double d3 = max_pos_defect(1e-3);
    const double floor = 1e-13;
    bool pass;
    double order;
    if (d1 <= floor && d3 <= floor) {
      pass = true;
      order = 1.0;
    } else {
      order = std::log2(std::max(d1, floor) / std::max(d3, floor)) / 2.0;
      pass = order >= 0.9 && d1 >= d2 - floor && d2 >= d3 - floor;
    }
    report("C3", "energy decay order", pass,
           fmt("max positive defects %.3e / %.3e / %.3e", d1, d2, d3) +
               fmt(", measured order %.2f (>= 0.9)", order));
  }

  // 4. large-time convergence in H to the stationary solution
  {
    const auto sol = solve_stationary(rr.snapshots.back().w4, p.w3D.limit(), p, g, ops);
    std::vector<double> dist;
    dist.reserve(rr.snapshots.size());
    for (const auto& snap : rr.snapshots)
      dist.push_back(std::sqrt(h_distance_sq(snap, sol.as_state(), p, g)));
    const double ratio = dist.back() / dist.front();
    // first index after which the series is nonincreasing
    std::size_t start = 0;
    const double slack = 1e-12 * std::max(1.0, dist.front());
    for (std::size_t n = dist.size() - 1; n-- > 0;)
      if (dist[n + 1] > dist[n] + slack) {
        start = n + 1;
        break;
      }
    const double transient = static_cast<double>(start) / static_cast<double>(dist.size());
    report("C4", "large-time convergence", sol.converged && ratio <= 1e-6 && transient <= 0.05,
           fmt("|w(50)-w_inf|/|w(0)-w_inf| = %.3e (<= 1e-6), transient fraction %.3f (<= 0.05)",
               ratio, transient));
  }

  // 5. stationary uniqueness with an active gypsum coupling
  {
    const Eigen::MatrixXd w4half =
        Eigen::MatrixXd::Constant(g.gamma1.count(), g.n_macro(), 0.5 * p.beta_max());
    const auto probe = uniqueness_probe(p, g, ops, w4half, p.w3D.limit(), 5, 20240817);
    report("C5", "stationary uniqueness", probe.n_converged == 5 &&
               probe.max_pairwise_distance <= 1e-8,
           fmt("max pairwise H-distance over 5 starts = %.3e (<= 1e-8)",
               probe.max_pairwise_distance));
  }

  // 6. oracle equivalence on the 4x4-node 1D x 1D instance
  double oracle_mass_rel = 0;
  {
    const auto t_start = std::chrono::steady_clock::now();
    const auto g1 = default_1d_grid(3, 3);
    Params p1 = canonical_params();
    const auto ops1 = assemble_operators(g1, p1);
    State init1 = State::zero(g1);
    init1.w3.setConstant(1.0);
    const double t_cmp = 0.1;
    const State ref = oracle::explicit_run(init1, t_cmp, 1e-6, p1, g1, ops1);
    auto scheme_err = [&](double dt) {
      RunControls c;
      c.dt = dt;
      c.t_end = t_cmp;
      c.output_every = 0;
      c.threads = 1;
      const RunResult r = run(init1, p1, g1, ops1, c);
      oracle_mass_rel = std::max(oracle_mass_rel, r.max_mass_defect_rel);
      return std::sqrt(h_distance_sq(r.snapshots.back(), ref, p1, g1));
    };
    const double e1 = scheme_err(1e-3), e2 = scheme_err(5e-4), e3 = scheme_err(2.5e-4);
    const double r1 = e1 / e2, r2 = e2 / e3;
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
    report("C6", "oracle equivalence", r1 >= 1.7 && r1 <= 2.3 && r2 >= 1.7 && r2 <= 2.3 &&
               secs < 30.0,
           fmt("errors %.3e / %.3e / %.3e", e1, e2, e3) +
               fmt(", halving ratios %.2f, %.2f (in [1.7, 2.3]), %.1f s (< 30)", r1, r2, secs));
  }

  // 7. mass balance on every acceptance run
  {
    const double worst =
        std::max({rr.max_mass_defect_rel, oracle_mass_rel, richardson_mass_rel});
    report("C7", "mass balance", worst <= 1e-8,
           fmt("max per-step defect / total mass = %.3e (<= 1e-8)", worst));
  }

  // 8. double-entry energy on random states
  {
    std::mt19937_64 rng(20240817);
    std::uniform_real_distribution<double> uni(0.0, 1.0);
    double worst = 0;
    for (int trial = 0; trial < 100; ++trial) {
      State s = State::zero(g);
      for (int i = 0; i < g.n_macro(); ++i) {
        for (int j = 0; j < g.n_micro(); ++j) {
          s.w1(j, i) = rr.bounds.M1 * uni(rng);
          s.w2(j, i) = rr.bounds.M2 * uni(rng);
        }
        s.w3[i] = rr.bounds.M3 * uni(rng);
        for (int j = 0; j < g.gamma1.count(); ++j) s.w4(j, i) = rr.bounds.M4 * uni(rng);
      }
      s.t = 2.0 * uni(rng);
      const double a = energy(s, p, g, ops);
      const double b = oracle::energy_independent(s, p, g);
      worst = std::max(worst, std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-30}));
    }
    report("C8", "double-entry energy", worst <= 1e-12,
           fmt("max relative disagreement over 100 states = %.3e (<= 1e-12)", worst));
  }

  // 9. Henry equilibrium: invariant under 1000 steps and returned by the
  // stationary solver with residual <= 1e-12
  {
    const State eq = State::henry_equilibrium(g, p, p.w3D.winf);
    const Bounds b = compute_bounds(p, eq);
    Stepper st(g, p, ops, b, 1e-3);
    State s = eq;
    bool ok = true;
    for (int n = 0; n < 1000 && ok; ++n) ok = st.step(s).ok;
    double drift = 0;
    drift = std::max(drift, (s.w1 - eq.w1).lpNorm<Eigen::Infinity>());
    drift = std::max(drift, (s.w2 - eq.w2).lpNorm<Eigen::Infinity>());
    drift = std::max(drift, (s.w3 - eq.w3).lpNorm<Eigen::Infinity>());
    drift = std::max(drift, (s.w4 - eq.w4).lpNorm<Eigen::Infinity>());
    const double drift_tol = 1e-10 * std::max(1.0, b.max());

    State start = State::zero(g);
    for (int k : g.dirichlet_nodes) start.w3[k] = p.w3D.winf;
    StationaryOptions so;
    so.initial_guess = &start;
    const auto sol = solve_stationary(eq.w4, p.w3D.winf, p, g, ops, so);
    const auto res = residual_check(sol, p, g, ops);
    const double res_max = std::max({res[0], res[1], res[2]});
    double sol_err = 0;
    sol_err = std::max(sol_err, (sol.w1inf - eq.w1).lpNorm<Eigen::Infinity>());
    sol_err = std::max(sol_err, (sol.w2inf - eq.w2).lpNorm<Eigen::Infinity>());
    sol_err = std::max(sol_err, (sol.w3inf - eq.w3).lpNorm<Eigen::Infinity>());

    report("C9", "Henry equilibrium fixed point",
           ok && drift <= drift_tol && sol.converged && res_max <= 1e-12 && sol_err <= 1e-10,
           fmt("step drift %.2e (<= %.1e), ", drift, drift_tol) +
               fmt("stationary residual %.2e (<= 1e-12), solution error %.2e", res_max, sol_err));
  }

  std::printf("%s\n", failures == 0 ? "acceptance: all criteria pass"
                                    : "acceptance: FAILURES present");
  return failures == 0 ? 0 : 1;
}
