#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "tsrd/error.hpp"

namespace tsrd {

enum class KineticKind { clipped_linear, power_monotone, custom_table };

/// Which of the three rate functions a spec describes. The roles carry
/// different shape requirements:
///   R   : nondecreasing, R(r) = 0 for r <= 0, R(r) > 0 for r > 0
///   Q   : nonincreasing, Q(r) > 0 for r < beta_max, Q(r) = 0 for r >= beta_max
///   psi : nondecreasing, psi(0) = 0
enum class KineticRole { reaction_r, reaction_q, exchange_psi };

/// One rate function. Built-in families:
///   R   clipped_linear : k * max(r, 0)
///   R   power_monotone : k * max(r, 0)^p
///   Q   clipped_linear : k * max(beta_max - r, 0)
///   Q   power_monotone : k * max(beta_max - r, 0)^p
///   psi power_monotone : k * sign(r) * |r|^p      (p = 1 gives linear psi)
///   custom_table       : piecewise-linear interpolation of sorted samples,
///                        constant extension outside the sample range
///
/// `clamp_lo`/`clamp_hi` clip the argument before evaluation; they are set by
/// truncate() and default to the whole line.
struct KineticSpec {
  KineticRole role = KineticRole::exchange_psi;
  KineticKind kind = KineticKind::power_monotone;
  double k = 1.0;
  double p = 1.0;
  double beta_max = 1.0;  // Q only
  std::vector<std::array<double, 2>> table;
  double clamp_lo = -std::numeric_limits<double>::infinity();
  double clamp_hi = std::numeric_limits<double>::infinity();
  bool validated = false;

  /// Structural problems (ill-formed spec), empty when well-formed.
  /// Shape assumptions (monotonicity, sign) are checked separately by the
  /// parameter report, which samples the function instead of aborting.
  std::vector<std::string> structural_problems() const {
    std::vector<std::string> out;
    auto bad = [&](const std::string& m) { out.push_back(m); };
    if (!std::isfinite(k)) bad("coefficient k is not finite");
    if (kind == KineticKind::power_monotone) {
      if (!std::isfinite(p) || p < 1.0) bad("exponent p must satisfy p >= 1");
    }
    if (role == KineticRole::reaction_q) {
      if (!std::isfinite(beta_max) || beta_max < 0.0) bad("beta_max must be finite and >= 0");
    }
    if (role == KineticRole::exchange_psi && kind == KineticKind::clipped_linear)
      bad("clipped_linear is not defined for the psi role (use power_monotone, p = 1 for linear)");
    if (kind == KineticKind::custom_table) {
      if (table.size() < 2) bad("custom_table needs at least two samples");
      for (std::size_t i = 0; i + 1 < table.size(); ++i)
        if (!(table[i][0] < table[i + 1][0])) bad("custom_table arguments must be strictly increasing");
      for (const auto& s : table)
        if (!std::isfinite(s[0]) || !std::isfinite(s[1])) bad("custom_table has non-finite samples");
    }
    if (!(clamp_lo <= clamp_hi)) bad("clamp_lo must be <= clamp_hi");
    return out;
  }

  /// Marks the spec usable by eval/primitive. Throws ConfigError listing the
  /// structural problems otherwise.
  KineticSpec& validate() {
    auto problems = structural_problems();
    if (!problems.empty()) {
      std::string msg = "invalid kinetic spec:";
      for (const auto& m : problems) msg += "\n  - " + m;
      throw ConfigError(msg);
    }
    validated = true;
    return *this;
  }
};

inline KineticSpec make_clipped_r(double k) {
  KineticSpec s;
  s.role = KineticRole::reaction_r;
  s.kind = KineticKind::clipped_linear;
  s.k = k;
  return s.validate();
}

inline KineticSpec make_clipped_q(double k, double beta_max) {
  KineticSpec s;
  s.role = KineticRole::reaction_q;
  s.kind = KineticKind::clipped_linear;
  s.k = k;
  s.beta_max = beta_max;
  return s.validate();
}

inline KineticSpec make_linear_psi(double k) {
  KineticSpec s;
  s.role = KineticRole::exchange_psi;
  s.kind = KineticKind::power_monotone;
  s.k = k;
  s.p = 1.0;
  return s.validate();
}

inline KineticSpec make_power_psi(double mu, double p) {
  KineticSpec s;
  s.role = KineticRole::exchange_psi;
  s.kind = KineticKind::power_monotone;
  s.k = mu;
  s.p = p;
  return s.validate();
}

namespace detail {

inline double table_interp(const std::vector<std::array<double, 2>>& t, double r) {
  if (r <= t.front()[0]) return t.front()[1];
  if (r >= t.back()[0]) return t.back()[1];
  // binary search for the segment containing r
  std::size_t lo = 0, hi = t.size() - 1;
  while (hi - lo > 1) {
    std::size_t mid = (lo + hi) / 2;
    (t[mid][0] <= r ? lo : hi) = mid;
  }
  const double s = (r - t[lo][0]) / (t[hi][0] - t[lo][0]);
  return t[lo][1] + s * (t[hi][1] - t[lo][1]);
}

inline double eval_unclamped(const KineticSpec& spec, double r) {
  switch (spec.kind) {
    case KineticKind::clipped_linear:
      if (spec.role == KineticRole::reaction_q) return spec.k * std::max(spec.beta_max - r, 0.0);
      return spec.k * std::max(r, 0.0);
    case KineticKind::power_monotone:
      switch (spec.role) {
        case KineticRole::reaction_r: return spec.k * std::pow(std::max(r, 0.0), spec.p);
        case KineticRole::reaction_q: return spec.k * std::pow(std::max(spec.beta_max - r, 0.0), spec.p);
        case KineticRole::exchange_psi: {
          const double a = std::pow(std::abs(r), spec.p);
          return spec.k * (r < 0 ? -a : a);
        }
      }
      return 0.0;
    case KineticKind::custom_table: return table_interp(spec.table, r);
  }
  return 0.0;
}

/// Integral from 0 to r of the unclamped built-in function; custom tables
/// have no closed form here and are rejected by the caller.
inline double primitive_unclamped(const KineticSpec& spec, double r) {
  switch (spec.role) {
    case KineticRole::reaction_r: {
      const double rp = std::max(r, 0.0);
      const double q = (spec.kind == KineticKind::clipped_linear) ? 2.0 : spec.p + 1.0;
      return spec.k * std::pow(rp, q) / q;
    }
    case KineticRole::exchange_psi: {
      const double q = spec.p + 1.0;
      return spec.k * std::pow(std::abs(r), q) / q;
    }
    case KineticRole::reaction_q:
      throw ConfigError("primitive of a Q-role kinetic is not used and not provided");
  }
  return 0.0;
}

}  // namespace detail

/// R(r), Q(r) or psi(r) per the spec's role/kind, with the truncation clamp
/// applied to the argument.
inline double eval_kinetic(const KineticSpec& spec, double r) {
  if (!spec.validated) throw ConfigError("kinetic spec used before validation");
  return detail::eval_unclamped(spec, std::clamp(r, spec.clamp_lo, spec.clamp_hi));
}

/// Pointwise derivative where it exists (one-sided value at kinks). Used by
/// the stationary Jacobian for the built-in families.
inline double eval_kinetic_derivative(const KineticSpec& spec, double r) {
  if (!spec.validated) throw ConfigError("kinetic spec used before validation");
  if (r < spec.clamp_lo || r > spec.clamp_hi) return 0.0;
  switch (spec.kind) {
    case KineticKind::clipped_linear:
      if (spec.role == KineticRole::reaction_q) return r < spec.beta_max ? -spec.k : 0.0;
      return r > 0 ? spec.k : 0.0;
    case KineticKind::power_monotone:
      switch (spec.role) {
        case KineticRole::reaction_r:
          return r > 0 ? spec.k * spec.p * std::pow(r, spec.p - 1.0) : 0.0;
        case KineticRole::reaction_q:
          return r < spec.beta_max ? -spec.k * spec.p * std::pow(spec.beta_max - r, spec.p - 1.0) : 0.0;
        case KineticRole::exchange_psi:
          if (r == 0.0) return spec.p == 1.0 ? spec.k : 0.0;
          return spec.k * spec.p * std::pow(std::abs(r), spec.p - 1.0);
      }
      return 0.0;
    case KineticKind::custom_table: {
      const auto& t = spec.table;
      if (r <= t.front()[0] || r >= t.back()[0]) return 0.0;
      std::size_t lo = 0, hi = t.size() - 1;
      while (hi - lo > 1) {
        std::size_t mid = (lo + hi) / 2;
        (t[mid][0] <= r ? lo : hi) = mid;
      }
      return (t[hi][1] - t[lo][1]) / (t[hi][0] - t[lo][0]);
    }
  }
  return 0.0;
}

/// Primitive with the primitive's base point at 0: R_hat(r) = int_0^r R,
/// psi_hat(r) = int_0^r psi. Exact closed form, including the clamped
/// (truncated) variants. custom_table kinetics have no closed form and raise
/// a configuration error.
inline double eval_primitive(const KineticSpec& spec, double r) {
  if (!spec.validated) throw ConfigError("kinetic spec used before validation");
  if (spec.kind == KineticKind::custom_table)
    throw ConfigError("primitive of a custom_table kinetic requires quadrature and is not supported");
  const double lo = spec.clamp_lo, hi = spec.clamp_hi;
  const double rc = std::clamp(r, lo, hi);
  double val = detail::primitive_unclamped(spec, rc);
  if (r > hi) val += detail::eval_unclamped(spec, hi) * (r - hi);
  if (r < lo) val += detail::eval_unclamped(spec, lo) * (r - lo);
  return val;
}

/// The clipped kinetic used to make the rates globally Lipschitz and bounded:
/// R is frozen above m, Q outside [0, m], psi outside [-m, m]. Agrees with
/// the original on [0, m] (R, Q) and [-m, m] (psi).
inline KineticSpec truncate(const KineticSpec& spec, double m) {
  if (!spec.validated) throw ConfigError("kinetic spec used before validation");
  if (!(m > 0.0)) throw DomainError("truncation level m must be positive");
  KineticSpec out = spec;
  switch (spec.role) {
    case KineticRole::reaction_r: out.clamp_hi = std::min(out.clamp_hi, m); break;
    case KineticRole::reaction_q:
      out.clamp_lo = std::max(out.clamp_lo, 0.0);
      out.clamp_hi = std::min(out.clamp_hi, m);
      break;
    case KineticRole::exchange_psi:
      out.clamp_lo = std::max(out.clamp_lo, -m);
      out.clamp_hi = std::min(out.clamp_hi, m);
      break;
  }
  return out;
}

}  // namespace tsrd
