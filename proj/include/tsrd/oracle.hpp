#pragma once

#include <Eigen/Dense>
#include <cmath>

#include "tsrd/diagnostics.hpp"
#include "tsrd/operators.hpp"
#include "tsrd/state.hpp"

namespace tsrd {
namespace oracle {

/// Safety factor of the explicit stability bound dt <= c min(dy^2, dx^2) / max(d):
/// 1/4 covers the 2D five-point Laplacian, the extra margin absorbs the
/// reaction and boundary-exchange rates at desk scale.
inline constexpr double kStabilitySafety = 0.2;

inline double explicit_dt_bound(const TwoScaleGrid& grid, const Params& params) {
  const std::array<double, 2> lx{grid.macro.len[0], grid.macro.len[1]};
  const std::array<double, 2> ly{grid.micro.len[0], grid.micro.len[1]};
  auto max_affine = [](const CoefficientField& c, const std::array<double, 2>& ex, int dx,
                       const std::array<double, 2>& ey, int dy) {
    double v = c.c0;
    for (int d = 0; d < dx; ++d) v += std::max(0.0, c.cx[static_cast<std::size_t>(d)] * ex[static_cast<std::size_t>(d)]);
    for (int d = 0; d < dy; ++d) v += std::max(0.0, c.cy[static_cast<std::size_t>(d)] * ey[static_cast<std::size_t>(d)]);
    return v;
  };
  const double dmax = std::max(
      {max_affine(params.d1, lx, grid.macro.dim, ly, grid.micro.dim),
       max_affine(params.d2, lx, grid.macro.dim, ly, grid.micro.dim),
       max_affine(params.d3, lx, grid.macro.dim, ly, 0)});
  double hmin2 = grid.micro.h[0] * grid.micro.h[0];
  if (grid.micro.dim == 2) hmin2 = std::min(hmin2, grid.micro.h[1] * grid.micro.h[1]);
  hmin2 = std::min(hmin2, grid.macro.h[0] * grid.macro.h[0]);
  if (grid.macro.dim == 2) hmin2 = std::min(hmin2, grid.macro.h[1] * grid.macro.h[1]);
  return kStabilitySafety * hmin2 / dmax;
}

/// Forward-Euler method-of-lines reference for the full coupled system: all
/// four fields advance simultaneously from the same time level, no splitting.
/// Single-threaded on purpose (deterministic pinned values). Refuses time
/// steps above the stability bound.
inline State explicit_run(const State& initial, double t_end, double dt, const Params& params,
                          const TwoScaleGrid& grid, const DiscreteOperators& ops) {
  if (!(dt > 0)) throw DomainError("explicit_run: dt must be positive");
  const double bound = explicit_dt_bound(grid, params);
  if (dt > bound)
    throw DomainError("explicit_run: dt exceeds the explicit stability bound " +
                      std::to_string(bound));
  State s = initial;
  const long steps = std::lround((t_end - s.t) / dt);
  for (long n = 0; n < steps; ++n) {
    const double tn = s.t;
    const auto res = coupling_residuals(s, params, grid);
    State next = s;
    for (int i = 0; i < grid.n_macro(); ++i) {
      next.w1.col(i) =
          s.w1.col(i) +
          dt * (res.r1.col(i) -
                (ops.m1(i).stiffness * s.w1.col(i)).cwiseQuotient(grid.micro.mass));
      next.w2.col(i) =
          s.w2.col(i) +
          dt * (res.r2.col(i) -
                (ops.m2(i).stiffness * s.w2.col(i)).cwiseQuotient(grid.micro.mass));
    }
    const Eigen::VectorXd k3w = ops.macro3.stiffness * s.w3;
    for (int k : grid.free_nodes)
      next.w3[k] = s.w3[k] + dt * (res.r3[k] - k3w[k] / grid.macro.mass[k]);
    for (int k : grid.dirichlet_nodes) next.w3[k] = params.w3D.value(tn + dt);
    next.w4 = s.w4 + dt * res.r4;
    next.t = tn + dt;
    s = std::move(next);
  }
  return s;
}

/// Re-implementation of the energy functional with an independent loop
/// structure: gradient terms are accumulated edge by edge straight from the
/// grid spacings (no assembled stiffness), boundary and bulk sums run in
/// micro-major order. Double-entry check against diagnostics::energy.
inline double energy_independent(const Eigen::MatrixXd& w1, const Eigen::MatrixXd& w2,
                                 const Eigen::VectorXd& w3_tilde, const Eigen::MatrixXd& w4,
                                 double w3d_value, double f_value, const Params& params,
                                 const TwoScaleGrid& grid) {
  const StructuredGrid& mi = grid.micro;
  const StructuredGrid& ma = grid.macro;
  const int nm = ma.nodes();
  double acc = 0.0;

  // micro gradient terms, edge-major with the macro loop innermost
  auto micro_edges = [&](const Eigen::MatrixXd& w, const CoefficientField& d, double weight) {
    double sum = 0.0;
    for (int iy = 0; iy < mi.n[1]; ++iy)
      for (int ix = 0; ix + 1 < mi.n[0]; ++ix) {
        const int a = mi.index(ix, iy), b = mi.index(ix + 1, iy);
        const std::array<double, 2> ymid{(ix + 0.5) * mi.h[0], mi.dim == 2 ? iy * mi.h[1] : 0.0};
        const double wt = mi.axis_weight(1, iy) / mi.h[0];
        for (int i = 0; i < nm; ++i) {
          const auto x = ma.coord(i);
          const double diff = w(a, i) - w(b, i);
          sum += ma.mass[i] * d(x.data(), ma.dim, ymid.data(), mi.dim) * wt * diff * diff;
        }
      }
    if (mi.dim == 2)
      for (int iy = 0; iy + 1 < mi.n[1]; ++iy)
        for (int ix = 0; ix < mi.n[0]; ++ix) {
          const int a = mi.index(ix, iy), b = mi.index(ix, iy + 1);
          const std::array<double, 2> ymid{ix * mi.h[0], (iy + 0.5) * mi.h[1]};
          const double wt = mi.axis_weight(0, ix) / mi.h[1];
          for (int i = 0; i < nm; ++i) {
            const auto x = ma.coord(i);
            const double diff = w(a, i) - w(b, i);
            sum += ma.mass[i] * d(x.data(), ma.dim, ymid.data(), mi.dim) * wt * diff * diff;
          }
        }
    return 0.5 * weight * sum;
  };
  acc += micro_edges(w1, params.d1, 1.0);
  acc += micro_edges(w2, params.d2, params.gamma);

  // Gamma_1 reaction term, boundary-node major
  for (int j = 0; j < grid.gamma1.count(); ++j) {
    const int node = grid.gamma1.nodes[static_cast<std::size_t>(j)];
    for (int i = 0; i < nm; ++i)
      acc += ma.mass[i] * grid.gamma1.weights[j] * eval_kinetic(params.Q, w4(j, i)) *
             eval_primitive(params.R, w1(node, i));
  }

  // psi primitive, micro-major
  for (int j = 0; j < mi.nodes(); ++j)
    for (int i = 0; i < nm; ++i)
      acc += ma.mass[i] * mi.mass[j] * eval_primitive(params.psi, w1(j, i) - params.gamma * w2(j, i));

  // Gamma_2 mismatch
  for (int j = 0; j < grid.gamma2.count(); ++j) {
    const int node = grid.gamma2.nodes[static_cast<std::size_t>(j)];
    for (int i = 0; i < nm; ++i) {
      const double mis = params.henry * (w3_tilde[i] + w3d_value) - w2(node, i);
      acc += 0.5 * params.gamma * params.alpha * ma.mass[i] * grid.gamma2.weights[j] * mis * mis;
    }
  }

  // macro gradient, edge by edge
  double g3 = 0.0;
  for (int iy = 0; iy < ma.n[1]; ++iy)
    for (int ix = 0; ix + 1 < ma.n[0]; ++ix) {
      const int a = ma.index(ix, iy), b = ma.index(ix + 1, iy);
      const std::array<double, 2> xmid{(ix + 0.5) * ma.h[0], ma.dim == 2 ? iy * ma.h[1] : 0.0};
      const double diff = w3_tilde[a] - w3_tilde[b];
      g3 += params.d3(xmid.data(), ma.dim, nullptr, 0) * ma.axis_weight(1, iy) / ma.h[0] * diff * diff;
    }
  if (ma.dim == 2)
    for (int iy = 0; iy + 1 < ma.n[1]; ++iy)
      for (int ix = 0; ix < ma.n[0]; ++ix) {
        const int a = ma.index(ix, iy), b = ma.index(ix, iy + 1);
        const std::array<double, 2> xmid{ix * ma.h[0], (iy + 0.5) * ma.h[1]};
        const double diff = w3_tilde[a] - w3_tilde[b];
        g3 += params.d3(xmid.data(), ma.dim, nullptr, 0) * ma.axis_weight(0, ix) / ma.h[1] * diff * diff;
      }
  acc += 0.5 * params.gamma * params.henry * g3;

  // forcing
  double fw = 0.0;
  for (int k = 0; k < nm; ++k) fw += ma.mass[k] * w3_tilde[k];
  acc += params.gamma * params.henry * f_value * fw;
  return acc;
}

inline double energy_independent(const State& s, const Params& params, const TwoScaleGrid& grid) {
  return energy_independent(s.w1, s.w2, lifted_w3(s, params), s.w4, params.w3D.value(s.t),
                            params.w3D.forcing(s.t), params, grid);
}

}  // namespace oracle
}  // namespace tsrd
