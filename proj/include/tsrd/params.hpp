#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "tsrd/error.hpp"
#include "tsrd/kinetics.hpp"

namespace tsrd {

/// Scalar coefficient over the product of a macro point x and a micro point y
/// (either coordinate list may be empty). Affine variation is enough to
/// exercise x/y-dependent assembly while keeping exact range bounds.
struct CoefficientField {
  double c0 = 1.0;
  std::array<double, 2> cx{0.0, 0.0};
  std::array<double, 2> cy{0.0, 0.0};

  double operator()(const double* x, int dimx, const double* y, int dimy) const {
    double v = c0;
    for (int d = 0; d < dimx; ++d) v += cx[static_cast<std::size_t>(d)] * x[d];
    for (int d = 0; d < dimy; ++d) v += cy[static_cast<std::size_t>(d)] * y[d];
    return v;
  }

  bool constant() const { return cx[0] == 0 && cx[1] == 0 && cy[0] == 0 && cy[1] == 0; }
  bool macro_dependent() const { return cx[0] != 0 || cx[1] != 0; }

  /// Exact minimum over a box [0,Lx]x[0,Ly] (affine => attained at a corner).
  double min_over(const std::array<double, 2>& lx, int dimx,
                  const std::array<double, 2>& ly, int dimy) const {
    double v = c0;
    for (int d = 0; d < dimx; ++d) v += std::min(0.0, cx[static_cast<std::size_t>(d)] * lx[static_cast<std::size_t>(d)]);
    for (int d = 0; d < dimy; ++d) v += std::min(0.0, cy[static_cast<std::size_t>(d)] * ly[static_cast<std::size_t>(d)]);
    return v;
  }
};

/// Dirichlet boundary data for the macro gas concentration: spatially
/// constant, w3D(t) = winf + amplitude * exp(-rate * t). The decaying
/// transient makes the integrability conditions on dt_w3D hold by
/// construction, and f(t) = dt_w3D(t) exactly (the spatial part of the
/// forcing vanishes for constant-in-space data).
struct DirichletData {
  double winf = 0.0;
  double amplitude = 0.0;
  double rate = 1.0;

  /// exp(-rate t), well-defined for t = infinity (stationary evaluations).
  double decay(double t) const {
    if (amplitude == 0.0) return 0.0;
    if (std::isinf(t)) return rate > 0.0 ? 0.0 : 1.0;
    return std::exp(-rate * t);
  }
  double value(double t) const { return winf + amplitude * decay(t); }
  double dt_value(double t) const { return -rate * amplitude * decay(t); }
  /// Forcing f(t) = dt_w3D - div(d3 grad w3D); spatially constant family.
  double forcing(double t) const { return dt_value(t); }
  double dt_forcing(double t) const { return rate * rate * amplitude * decay(t); }
  double limit() const { return winf; }
  /// Exact sup over t >= 0 (monotone in t).
  double sup_abs() const { return std::max(std::abs(winf), std::abs(winf + amplitude)); }
  double min_value() const { return std::min(winf, winf + amplitude); }
};

struct Params {
  CoefficientField d1, d2;  // micro diffusivities, may vary in (x, y)
  CoefficientField d3;      // macro diffusivity, varies in x only
  double alpha = 1.0;       // Gamma2 interface exchange rate
  double gamma = 1.0;
  double henry = 1.0;  // Henry constant h
  KineticSpec R = make_clipped_r(1.0);
  KineticSpec Q = make_clipped_q(1.0, 1.0);
  KineticSpec psi = make_linear_psi(1.0);
  DirichletData w3D;
  /// Strong-monotonicity constants of psi; when absent they are derived from
  /// the built-in family ((mu, p) = (k, 1) for linear, (k * 2^{1-p}, p) for
  /// the power family, (0, 1) otherwise).
  std::optional<double> mu;
  std::optional<double> p;

  double beta_max() const { return Q.beta_max; }

  double psi_mu() const {
    if (mu) return *mu;
    if (psi.kind == KineticKind::power_monotone)
      return psi.k * std::pow(2.0, 1.0 - psi.p);
    return 0.0;
  }
  double psi_p() const {
    if (p) return *p;
    if (psi.kind == KineticKind::power_monotone) return psi.p;
    return 1.0;
  }
  bool psi_strongly_monotone() const { return psi_mu() > 0.0; }
  bool psi_linear() const { return psi.kind == KineticKind::power_monotone && psi.p == 1.0 && psi.clamp_lo == -std::numeric_limits<double>::infinity() && psi.clamp_hi == std::numeric_limits<double>::infinity(); }
};

/// Time-uniform sup-norm bounds on the four concentrations.
struct Bounds {
  double M1 = 0, M2 = 0, M3 = 0, M4 = 0;
  double max() const { return std::max(std::max(M1, M2), std::max(M3, M4)); }
  double operator[](int i) const {
    switch (i) { case 0: return M1; case 1: return M2; case 2: return M3; default: return M4; }
  }
};

/// M1 = max{|w10|, gamma |w20|, gamma h |w30|, gamma h sup_t |w3D|},
/// M2 = M1/gamma, M3 = M2/h, M4 = max{beta_max, |w40|}; sup norms over the
/// discrete grids, the w3D sup exact from the data family.
inline Bounds compute_bounds(const Params& params, double sup_w10, double sup_w20,
                             double sup_w30, double sup_w40) {
  Bounds b;
  b.M1 = std::max(std::max(sup_w10, params.gamma * sup_w20),
                  std::max(params.gamma * params.henry * sup_w30,
                           params.gamma * params.henry * params.w3D.sup_abs()));
  b.M2 = b.M1 / params.gamma;
  b.M3 = b.M2 / params.henry;
  b.M4 = std::max(params.beta_max(), sup_w40);
  return b;
}

// ---------------------------------------------------------------------------
// Assumption report
// ---------------------------------------------------------------------------

enum class CheckStatus { pass, fail, skipped };

struct CheckResult {
  std::string label;
  CheckStatus status = CheckStatus::pass;
  std::string detail;
};

struct ValidationReport {
  std::vector<CheckResult> checks;
  bool all_pass() const {
    for (const auto& c : checks)
      if (c.status == CheckStatus::fail) return false;
    return true;
  }
  std::vector<std::string> failures() const {
    std::vector<std::string> out;
    for (const auto& c : checks)
      if (c.status == CheckStatus::fail) out.push_back(c.label + ": " + c.detail);
    return out;
  }
  void add(const std::string& label, bool ok, const std::string& detail) {
    checks.push_back({label, ok ? CheckStatus::pass : CheckStatus::fail, detail});
  }
  void skip(const std::string& label, const std::string& detail) {
    checks.push_back({label, CheckStatus::skipped, detail});
  }
};

namespace detail {

inline void check_monotone(ValidationReport& rep, const KineticSpec& spec, const char* name,
                           bool nondecreasing, double r_max, int n_samples, const char* label) {
  double prev = eval_kinetic(spec, -r_max);
  double worst = 0.0;
  for (int i = 1; i < n_samples; ++i) {
    const double r = -r_max + 2.0 * r_max * i / (n_samples - 1);
    const double v = eval_kinetic(spec, r);
    const double jump = nondecreasing ? prev - v : v - prev;
    worst = std::max(worst, jump);
    prev = v;
  }
  rep.add(label, worst <= 1e-14 * std::max(1.0, std::abs(eval_kinetic(spec, r_max))),
          std::string(name) + (nondecreasing ? " nondecreasing" : " nonincreasing") +
              ", worst defect " + std::to_string(worst));
}

}  // namespace detail

/// Numerical check of the standing assumptions on the parameters:
///   (A1) diffusivities uniformly positive
///   (A2) R, Q shapes (sign pattern, monotonicity, beta_max threshold)
///   (A3) psi nondecreasing with psi(0) = 0, finite slope on samples
///   (A4) boundary data nonnegative, bounded, zero normal derivative on
///        Gamma_N (trivial for the constant-in-space family)
///   (A6) dt_w3D integrable over (0, infinity), declared limit
/// (A5) concerns the initial data and is checked where those are known
/// (configuration loading); it is reported as skipped here.
/// Monotonicity checks are sampled on [-r_max, r_max].
inline ValidationReport validate(const Params& params,
                                 const std::array<double, 2>& macro_extent = {1.0, 1.0},
                                 int macro_dim = 2,
                                 const std::array<double, 2>& micro_extent = {1.0, 1.0},
                                 int micro_dim = 2,
                                 double r_max = 0.0, int n_samples = 10000) {
  ValidationReport rep;
  if (r_max <= 0.0) r_max = 2.0 * std::max(1.0, params.beta_max());

  // (A1)
  const double d1min = params.d1.min_over(macro_extent, macro_dim, micro_extent, micro_dim);
  const double d2min = params.d2.min_over(macro_extent, macro_dim, micro_extent, micro_dim);
  const double d3min = params.d3.min_over(macro_extent, macro_dim, micro_extent, 0);
  rep.add("(A1)", d1min > 0 && d2min > 0 && d3min > 0,
          "min d1 = " + std::to_string(d1min) + ", min d2 = " + std::to_string(d2min) +
              ", min d3 = " + std::to_string(d3min) + " (all must be > 0)");

  // (A2): sign pattern of R and Q plus sampled monotonicity
  {
    bool r_ok = eval_kinetic(params.R, 0.0) == 0.0 && eval_kinetic(params.R, -r_max) == 0.0;
    bool r_pos = true;
    for (double r : {r_max * 1e-3, r_max * 0.5, r_max})
      r_pos = r_pos && eval_kinetic(params.R, r) > 0.0;
    rep.add("(A2) R sign", r_ok && r_pos, "R vanishes on r <= 0 and is positive for r > 0");
    detail::check_monotone(rep, params.R, "R", true, r_max, n_samples, "(A2) R monotone");

    const double bm = params.beta_max();
    bool q_zero = eval_kinetic(params.Q, bm) == 0.0 && eval_kinetic(params.Q, bm + r_max) == 0.0;
    bool q_pos = bm > 0.0;
    for (double r : {0.0, 0.5 * bm, bm * (1 - 1e-9)})
      q_pos = q_pos && eval_kinetic(params.Q, r) > 0.0;
    rep.add("(A2) Q sign", q_zero && q_pos,
            "Q positive below beta_max = " + std::to_string(bm) + " and zero at/above it");
    detail::check_monotone(rep, params.Q, "Q", false, std::max(r_max, bm + 1.0), n_samples,
                           "(A2) Q monotone");
  }

  // (A3)
  {
    rep.add("(A3) psi(0)", eval_kinetic(params.psi, 0.0) == 0.0, "psi(0) = 0");
    detail::check_monotone(rep, params.psi, "psi", true, r_max, n_samples, "(A3) psi monotone");
    double max_slope = 0.0;
    double prev = eval_kinetic(params.psi, -r_max);
    const double dr = 2.0 * r_max / (n_samples - 1);
    for (int i = 1; i < n_samples; ++i) {
      const double v = eval_kinetic(params.psi, -r_max + dr * i);
      max_slope = std::max(max_slope, std::abs(v - prev) / dr);
      prev = v;
    }
    rep.add("(A3) psi Lipschitz", std::isfinite(max_slope),
            "max sampled slope " + std::to_string(max_slope));
  }

  // (A4)
  {
    const bool nonneg = params.w3D.min_value() >= 0.0;
    const bool bounded = std::isfinite(params.w3D.sup_abs());
    rep.add("(A4) w3D bounds", nonneg && bounded,
            "w3D(t) in [" + std::to_string(params.w3D.min_value()) + ", " +
                std::to_string(params.w3D.sup_abs()) + "] for t >= 0");
    // Constant-in-space data: the discrete normal difference on Gamma_N is 0.
    rep.add("(A4) grad w3D . nu on Gamma_N", true,
            "spatially constant extension, one-sided normal difference = 0");
  }

  // (A6)
  {
    const bool ok = params.w3D.amplitude == 0.0 || params.w3D.rate > 0.0;
    const double l1 = params.w3D.rate > 0.0 ? std::abs(params.w3D.amplitude) : 0.0;
    rep.add("(A6) dt_w3D integrable", ok,
            "int |dt_w3D| = " + std::to_string(l1) + ", limit w3Dinf = " +
                std::to_string(params.w3D.limit()));
  }

  rep.skip("(A5)", "initial data checked at configuration load");

  // informational: strong monotonicity of psi
  rep.add("psi strong monotonicity (info)", true,
          "mu = " + std::to_string(params.psi_mu()) + ", p = " + std::to_string(params.psi_p()));
  return rep;
}

}  // namespace tsrd
