#pragma once

#include <Eigen/Dense>
#include <array>
#include <cmath>
#include <limits>
#include <vector>

#include "tsrd/operators.hpp"
#include "tsrd/state.hpp"

namespace tsrd {

// ---------------------------------------------------------------------------
// H inner product: (u,v)_H = (u1,v1) + gamma (u2,v2) + gamma h (u3,v3)
// ---------------------------------------------------------------------------

inline double h_inner(const Eigen::MatrixXd& u1, const Eigen::MatrixXd& u2,
                      const Eigen::VectorXd& u3, const Eigen::MatrixXd& v1,
                      const Eigen::MatrixXd& v2, const Eigen::VectorXd& v3,
                      const Params& params, const TwoScaleGrid& grid) {
  if (u1.rows() != v1.rows() || u1.cols() != v1.cols() || u2.rows() != v2.rows() ||
      u2.cols() != v2.cols() || u3.size() != v3.size())
    throw DomainError("h_inner: shape mismatch");
  if (u1.rows() != grid.n_micro() || u1.cols() != grid.n_macro() || u3.size() != grid.n_macro())
    throw DomainError("h_inner: shapes do not match the grid");
  const Eigen::VectorXd& wy = grid.micro.mass;
  const Eigen::VectorXd& wx = grid.macro.mass;
  const double bulk1 = wy.dot(((u1.array() * v1.array()).matrix() * wx));
  const double bulk2 = wy.dot(((u2.array() * v2.array()).matrix() * wx));
  const double bulk3 = (u3.array() * v3.array() * wx.array()).sum();
  return bulk1 + params.gamma * bulk2 + params.gamma * params.henry * bulk3;
}

/// Lifted macro field w3 - w3D(t) (zero on Gamma_D up to the data's accuracy).
inline Eigen::VectorXd lifted_w3(const State& s, const Params& params) {
  return s.w3.array() - params.w3D.value(s.t);
}

/// |u - v|_H^2 for two states, each lifted with the boundary data at its own
/// time (for stationary references use the t -> infinity state).
inline double h_distance_sq(const State& a, const State& b, const Params& params,
                            const TwoScaleGrid& grid) {
  const Eigen::MatrixXd d1 = a.w1 - b.w1;
  const Eigen::MatrixXd d2 = a.w2 - b.w2;
  const Eigen::VectorXd d3 = lifted_w3(a, params) - lifted_w3(b, params);
  return h_inner(d1, d2, d3, d1, d2, d3, params, grid);
}

// ---------------------------------------------------------------------------
// Energy functional
// ---------------------------------------------------------------------------

/// The convex functional driving the implicit step, evaluated with the
/// quadrature of the discrete operators:
///   phi(u) = 1/2 int d1 |grad_y u1|^2 + int_G1 Q(w4) Rhat(u1)
///          + gamma/2 int d2 |grad_y u2|^2 + int psihat(u1 - gamma u2)
///          + gamma alpha / 2 int_G2 |h (u3 + w3d) - u2|^2
///          + gamma h / 2 int d3 |grad u3|^2 + gamma h int f u3
/// with u3 the lifted macro field. The last term carries the time-dependent
/// forcing so that the functional decays along trajectories up to the
/// accounted I-terms.
inline double energy(const Eigen::MatrixXd& w1, const Eigen::MatrixXd& w2,
                     const Eigen::VectorXd& w3_tilde, const Eigen::MatrixXd& w4,
                     double w3d_value, double f_value, const Params& params,
                     const TwoScaleGrid& grid, const DiscreteOperators& ops) {
  const int nm = grid.n_macro();
  const Eigen::VectorXd& wx = grid.macro.mass;
  const Eigen::VectorXd& wy = grid.micro.mass;
  double grad1 = 0, grad2 = 0, reac = 0, exch = 0, psih = 0;
  for (int i = 0; i < nm; ++i) {
    grad1 += 0.5 * wx[i] * w1.col(i).dot(ops.m1(i).stiffness * w1.col(i));
    grad2 += 0.5 * params.gamma * wx[i] * w2.col(i).dot(ops.m2(i).stiffness * w2.col(i));
    for (int j = 0; j < grid.gamma1.count(); ++j) {
      const int node = grid.gamma1.nodes[static_cast<std::size_t>(j)];
      reac += wx[i] * grid.gamma1.weights[j] * eval_kinetic(params.Q, w4(j, i)) *
              eval_primitive(params.R, w1(node, i));
    }
    for (int j = 0; j < grid.micro.nodes(); ++j)
      psih += wx[i] * wy[j] * eval_primitive(params.psi, w1(j, i) - params.gamma * w2(j, i));
    for (int j = 0; j < grid.gamma2.count(); ++j) {
      const int node = grid.gamma2.nodes[static_cast<std::size_t>(j)];
      const double mis = params.henry * (w3_tilde[i] + w3d_value) - w2(node, i);
      exch += 0.5 * params.gamma * params.alpha * wx[i] * grid.gamma2.weights[j] * mis * mis;
    }
  }
  const double grad3 =
      0.5 * params.gamma * params.henry * w3_tilde.dot(ops.macro3.stiffness * w3_tilde);
  const double forcing =
      params.gamma * params.henry * f_value * (wx.array() * w3_tilde.array()).sum();
  return grad1 + reac + grad2 + psih + exch + grad3 + forcing;
}

/// Energy of a time-dependent state (data evaluated at state.t).
inline double energy(const State& s, const Params& params, const TwoScaleGrid& grid,
                     const DiscreteOperators& ops) {
  return energy(s.w1, s.w2, lifted_w3(s, params), s.w4, params.w3D.value(s.t),
                params.w3D.forcing(s.t), params, grid, ops);
}

/// H-gradient of the energy at a state (diffusion plus couplings), used by
/// the discrete-gradient consistency check. Returns the triple so that the
/// directional derivative of energy equals <grad, dir>_H.
struct EnergyGradient {
  Eigen::MatrixXd g1, g2;
  Eigen::VectorXd g3;  // zero on Gamma_D (gradient in the constrained space)
};

inline EnergyGradient energy_gradient(const State& s, const Params& params,
                                      const TwoScaleGrid& grid, const DiscreteOperators& ops) {
  EnergyGradient g;
  const auto res = coupling_residuals(s, params, grid);
  const int nm = grid.n_macro();
  g.g1.resize(grid.n_micro(), nm);
  g.g2.resize(grid.n_micro(), nm);
  g.g3 = Eigen::VectorXd::Zero(nm);
  for (int i = 0; i < nm; ++i) {
    g.g1.col(i) =
        (ops.m1(i).stiffness * s.w1.col(i)).cwiseQuotient(grid.micro.mass) - res.r1.col(i);
    g.g2.col(i) =
        (ops.m2(i).stiffness * s.w2.col(i)).cwiseQuotient(grid.micro.mass) - res.r2.col(i);
  }
  const Eigen::VectorXd w3t = lifted_w3(s, params);
  const Eigen::VectorXd k3w = ops.macro3.stiffness * w3t;
  const double f = params.w3D.forcing(s.t);
  for (int k : grid.free_nodes)
    g.g3[k] = k3w[k] / grid.macro.mass[k] - res.r3[k] + f;
  return g;
}

// ---------------------------------------------------------------------------
// Records and balance checks
// ---------------------------------------------------------------------------

struct DiagnosticsRecord {
  long step = 0;  // cumulative accepted steps at this output time
  double t = 0;
  double energy = 0;  // phi_1 at this output time
  double h_norm_sq = std::numeric_limits<double>::quiet_NaN();  // vs stationary ref
  double dissipation = 0;           // ||Delta w / Delta t||_H^2 between outputs
  double dissipation_integral = 0;  // per-step accumulated int ||dt w||_H^2 over the interval
  double i1 = 0, i2 = 0, i3 = 0, i4 = 0;  // I-terms accumulated over the interval
  double mass_total = 0;
  double mass_defect = 0;     // max |per-step mass defect| in the interval
  double flux_integral = 0;   // accumulated Dirichlet flux over the interval
  double bound_defect = 0;    // max per-step bound defect (absolute) in the interval
  double w4_total = 0;        // int_{Omega x Gamma_1} w4
  double w4_l1_increment = 0; // int over interval of ||dt w4||_L1
  double steady_rate = std::numeric_limits<double>::quiet_NaN();
};

/// Total mass int int (w1 + w2) + int w3 + int int_{Gamma_1} w4.
inline double mass_total(const State& s, const TwoScaleGrid& grid) {
  const Eigen::VectorXd& wx = grid.macro.mass;
  const Eigen::VectorXd& wy = grid.micro.mass;
  double m = wy.dot((s.w1 + s.w2) * wx) + wx.dot(s.w3);
  m += grid.gamma1.weights.dot(s.w4 * wx);
  return m;
}

inline double w4_mass(const State& s, const TwoScaleGrid& grid) {
  return grid.gamma1.weights.dot(s.w4 * grid.macro.mass);
}

/// Max over nodes of max(-w_i, w_i - M_i), per component (negative values
/// mean the field sits strictly inside the bounds).
inline std::array<double, 4> check_bounds(const State& s, const Bounds& b) {
  auto defect = [](const Eigen::MatrixXd& w, double M) {
    if (!w.size()) return 0.0;
    return std::max(-w.minCoeff(), w.maxCoeff() - M);
  };
  return {defect(s.w1, b.M1), defect(s.w2, b.M2),
          std::max(-s.w3.minCoeff(), s.w3.maxCoeff() - b.M3), defect(s.w4, b.M4)};
}

/// Energy-balance defects per recording interval:
///   defect_n = phi_1(t_{n+1}) - phi_1(t_n) + int dissipation - (I1 + I2 + I4)
/// The I3 contribution is a total derivative and already lives inside phi_1,
/// so the sum over all four paper terms against the unshifted functional is
/// algebraically the same quantity. Positive defects violate the decay
/// inequality (up to the O(dt) discretization slack).
inline std::vector<double> energy_balance(const std::vector<DiagnosticsRecord>& records) {
  std::vector<double> defects;
  for (std::size_t n = 0; n + 1 < records.size(); ++n) {
    const auto& a = records[n];
    const auto& b = records[n + 1];
    defects.push_back(b.energy - a.energy + b.dissipation_integral - (b.i1 + b.i2 + b.i4));
  }
  return defects;
}

/// Mass-balance defects per recording interval: change in total mass minus
/// the accumulated discrete Dirichlet flux. Per-step defects are tracked by
/// the time stepper in DiagnosticsRecord::mass_defect.
inline std::vector<double> mass_balance(const std::vector<DiagnosticsRecord>& records) {
  std::vector<double> defects;
  for (std::size_t n = 0; n + 1 < records.size(); ++n)
    defects.push_back(records[n + 1].mass_total - records[n].mass_total -
                      records[n + 1].flux_integral);
  return defects;
}

struct W4Convergence {
  bool monotone = true;
  double min_increment = 0;     // most negative nodewise increment seen
  double total_variation = 0;   // int_0^T ||dt w4||_L1 dt
  double l2_time_integral = 0;  // int_0^T ||dt w4||_L2^2 dt
  double tail_fraction = 0;     // L1 mass gained over the last 10% of the horizon / total
};

/// Snapshot-level w4 convergence summary (Lemma-4.1-style checks): nodewise
/// monotonicity, saturation of the L1/L2 time integrals of dt w4.
inline W4Convergence w4_convergence(const std::vector<State>& trajectory,
                                    const TwoScaleGrid& grid) {
  W4Convergence out;
  if (trajectory.size() < 2) return out;
  const double t0 = trajectory.front().t, t1 = trajectory.back().t;
  const double tail_start = t1 - 0.1 * (t1 - t0);
  double tail_l1 = 0;
  for (std::size_t n = 0; n + 1 < trajectory.size(); ++n) {
    const auto& a = trajectory[n];
    const auto& b = trajectory[n + 1];
    const double dt = b.t - a.t;
    if (dt <= 0) continue;
    const Eigen::MatrixXd diff = b.w4 - a.w4;
    out.min_increment = std::min(out.min_increment, diff.size() ? diff.minCoeff() : 0.0);
    const double l1 = grid.gamma1.weights.dot(diff.cwiseAbs() * grid.macro.mass);
    out.total_variation += l1;
    out.l2_time_integral +=
        grid.gamma1.weights.dot((diff.array().square().matrix() * grid.macro.mass)) / dt;
    if (a.t >= tail_start) tail_l1 += l1;
  }
  out.monotone = out.min_increment >= 0.0;
  out.tail_fraction = out.total_variation > 0 ? tail_l1 / out.total_variation : 0.0;
  return out;
}

}  // namespace tsrd
