#pragma once

#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <random>
#include <vector>

#include "tsrd/error.hpp"
#include "tsrd/grid.hpp"
#include "tsrd/kinetics.hpp"
#include "tsrd/params.hpp"
#include "tsrd/state.hpp"

namespace tsrd {

/// Stiffness of the bilinear form int d grad(u).grad(v) on one structured
/// grid (vertex-centered, edge-midpoint coefficient, trapezoid transverse
/// weights) plus the lumped mass vector for int u v. Symmetric, positive
/// semidefinite, zero row sums.
struct DiffusionOperator {
  Eigen::SparseMatrix<double> stiffness;
  Eigen::VectorXd mass;
};

namespace detail {

/// d is evaluated at edge midpoints; any nonpositive value is a domain error.
template <typename CoeffFn>
Eigen::SparseMatrix<double> assemble_stiffness(const StructuredGrid& g, CoeffFn&& d) {
  std::vector<Eigen::Triplet<double>> trip;
  trip.reserve(static_cast<std::size_t>(g.nodes()) * 8);
  auto add_edge = [&](int a, int b, double c) {
    trip.emplace_back(a, a, c);
    trip.emplace_back(b, b, c);
    trip.emplace_back(a, b, -c);
    trip.emplace_back(b, a, -c);
  };
  // x-direction edges
  for (int iy = 0; iy < g.n[1]; ++iy) {
    const double wt = g.axis_weight(1, iy);
    for (int ix = 0; ix + 1 < g.n[0]; ++ix) {
      const std::array<double, 2> mid{(ix + 0.5) * g.h[0], g.dim == 2 ? iy * g.h[1] : 0.0};
      const double dv = d(mid);
      if (!(dv > 0)) throw DomainError("diffusion coefficient is not positive on the grid");
      add_edge(g.index(ix, iy), g.index(ix + 1, iy), dv * wt / g.h[0]);
    }
  }
  // y-direction edges (2D only)
  if (g.dim == 2) {
    for (int ix = 0; ix < g.n[0]; ++ix) {
      const double wt = g.axis_weight(0, ix);
      for (int iy = 0; iy + 1 < g.n[1]; ++iy) {
        const std::array<double, 2> mid{ix * g.h[0], (iy + 0.5) * g.h[1]};
        const double dv = d(mid);
        if (!(dv > 0)) throw DomainError("diffusion coefficient is not positive on the grid");
        add_edge(g.index(ix, iy), g.index(ix, iy + 1), dv * wt / g.h[1]);
      }
    }
  }
  Eigen::SparseMatrix<double> K(g.nodes(), g.nodes());
  K.setFromTriplets(trip.begin(), trip.end());
  K.makeCompressed();
  return K;
}

}  // namespace detail

/// Micro diffusion operator for the micro cell attached to macro point x.
/// The sparsity pattern is identical for every macro node; only the
/// coefficient samples may differ.
inline DiffusionOperator assemble_micro(const CoefficientField& d, const TwoScaleGrid& grid,
                                        const std::array<double, 2>& x = {0.0, 0.0},
                                        int macro_dim = 0) {
  DiffusionOperator op;
  op.mass = grid.micro.mass;
  op.stiffness = detail::assemble_stiffness(grid.micro, [&](const std::array<double, 2>& y) {
    return d(x.data(), macro_dim, y.data(), grid.micro.dim);
  });
  return op;
}

/// Macro diffusion operator; the test space is the macro fields vanishing on
/// Gamma_D, the Dirichlet data enters via lifting.
inline DiffusionOperator assemble_macro(const CoefficientField& d3, const TwoScaleGrid& grid) {
  if (grid.gamma_d.empty()) throw ConfigError("macro operator needs a nonempty Gamma_D");
  DiffusionOperator op;
  op.mass = grid.macro.mass;
  op.stiffness = detail::assemble_stiffness(grid.macro, [&](const std::array<double, 2>& x) {
    return d3(x.data(), grid.macro.dim, nullptr, 0);
  });
  return op;
}

/// Boundary trace and quadrature-weighted lift operators coupling the scales.
/// lift is the exact adjoint of trace with respect to the boundary quadrature
/// and the micro mass weights: <trace u, g>_Gamma = <u, lift g>_Y.
struct CouplingOperators {
  BoundaryRegion g1, g2;
  Eigen::VectorXd micro_mass;

  CouplingOperators() = default;
  explicit CouplingOperators(const TwoScaleGrid& grid)
      : g1(grid.gamma1), g2(grid.gamma2), micro_mass(grid.micro.mass) {}

  const BoundaryRegion& region(Region r) const {
    if (r == Region::gamma1) return g1;
    if (r == Region::gamma2) return g2;
    throw DomainError("coupling operators exist for Gamma_1 and Gamma_2 only");
  }

  Eigen::VectorXd trace(Region r, const Eigen::Ref<const Eigen::VectorXd>& micro_field) const {
    const auto& reg = region(r);
    Eigen::VectorXd out(reg.count());
    for (int j = 0; j < reg.count(); ++j) out[j] = micro_field[reg.nodes[static_cast<std::size_t>(j)]];
    return out;
  }

  /// Boundary-node loads -> micro field (mass-scaled adjoint of trace).
  Eigen::VectorXd lift(Region r, const Eigen::Ref<const Eigen::VectorXd>& boundary_vals) const {
    const auto& reg = region(r);
    Eigen::VectorXd out = Eigen::VectorXd::Zero(micro_mass.size());
    for (int j = 0; j < reg.count(); ++j) {
      const int node = reg.nodes[static_cast<std::size_t>(j)];
      out[node] += reg.weights[j] * boundary_vals[j] / micro_mass[node];
    }
    return out;
  }

  /// Weak-form load vector (no mass scaling): T^T diag(w_Gamma) g.
  void add_load(Region r, const Eigen::Ref<const Eigen::VectorXd>& boundary_vals,
                Eigen::Ref<Eigen::VectorXd> out, double scale = 1.0) const {
    const auto& reg = region(r);
    for (int j = 0; j < reg.count(); ++j)
      out[reg.nodes[static_cast<std::size_t>(j)]] += scale * reg.weights[j] * boundary_vals[j];
  }

  /// int_{Gamma_2} field dgamma_y for one micro column.
  double gamma2_integral(const Eigen::Ref<const Eigen::VectorXd>& micro_field) const {
    double s = 0.0;
    for (int j = 0; j < g2.count(); ++j) s += g2.weights[j] * micro_field[g2.nodes[static_cast<std::size_t>(j)]];
    return s;
  }

  double gamma2_measure() const { return g2.measure(); }
};

/// Max defect of the trace/lift adjointness over random field pairs.
inline double duality_check(const TwoScaleGrid& grid, unsigned seed = 1234, int trials = 100) {
  CouplingOperators cpl(grid);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> uni(-1.0, 1.0);
  double worst = 0.0;
  for (int trial = 0; trial < trials; ++trial) {
    Eigen::VectorXd u(grid.n_micro());
    for (int j = 0; j < u.size(); ++j) u[j] = uni(rng);
    for (Region r : {Region::gamma1, Region::gamma2}) {
      const auto& reg = cpl.region(r);
      Eigen::VectorXd g(reg.count());
      for (int j = 0; j < g.size(); ++j) g[j] = uni(rng);
      const double lhs = (cpl.trace(r, u).array() * g.array() * reg.weights.array()).sum();
      const double rhs = (u.array() * cpl.lift(r, g).array() * cpl.micro_mass.array()).sum();
      worst = std::max(worst, std::abs(lhs - rhs));
    }
  }
  return worst;
}

/// Assembled operators for one (grid, params) pair. Micro operators are
/// shared across macro nodes when the coefficients do not depend on x.
struct DiscreteOperators {
  std::vector<DiffusionOperator> micro1, micro2;
  bool micro_uniform = true;
  DiffusionOperator macro3;
  Eigen::SparseMatrix<double> k3_ff;  // free rows x free cols
  Eigen::SparseMatrix<double> k3_df;  // Dirichlet rows x free cols
  CouplingOperators coupling;

  const DiffusionOperator& m1(int macro_node) const { return micro_uniform ? micro1[0] : micro1[static_cast<std::size_t>(macro_node)]; }
  const DiffusionOperator& m2(int macro_node) const { return micro_uniform ? micro2[0] : micro2[static_cast<std::size_t>(macro_node)]; }
};

inline DiscreteOperators assemble_operators(const TwoScaleGrid& grid, const Params& params) {
  DiscreteOperators ops;
  ops.coupling = CouplingOperators(grid);
  ops.micro_uniform = !params.d1.macro_dependent() && !params.d2.macro_dependent();
  const int copies = ops.micro_uniform ? 1 : grid.n_macro();
  ops.micro1.reserve(static_cast<std::size_t>(copies));
  ops.micro2.reserve(static_cast<std::size_t>(copies));
  for (int i = 0; i < copies; ++i) {
    const auto x = grid.macro.coord(i);
    ops.micro1.push_back(assemble_micro(params.d1, grid, x, grid.macro.dim));
    ops.micro2.push_back(assemble_micro(params.d2, grid, x, grid.macro.dim));
  }
  ops.macro3 = assemble_macro(params.d3, grid);

  // restrictions of K3 to the free space and the Dirichlet rows
  const int nf = grid.n_free();
  const int nd = static_cast<int>(grid.dirichlet_nodes.size());
  std::vector<int> dir_index(static_cast<std::size_t>(grid.n_macro()), -1);
  for (int r = 0; r < nd; ++r) dir_index[static_cast<std::size_t>(grid.dirichlet_nodes[static_cast<std::size_t>(r)])] = r;
  std::vector<Eigen::Triplet<double>> tff, tdf;
  const auto& K = ops.macro3.stiffness;
  for (int col = 0; col < K.outerSize(); ++col) {
    const int jc = grid.free_index[static_cast<std::size_t>(col)];
    if (jc < 0) continue;
    for (Eigen::SparseMatrix<double>::InnerIterator it(K, col); it; ++it) {
      const int ir = grid.free_index[static_cast<std::size_t>(it.row())];
      if (ir >= 0) tff.emplace_back(ir, jc, it.value());
      else tdf.emplace_back(dir_index[static_cast<std::size_t>(it.row())], jc, it.value());
    }
  }
  ops.k3_ff.resize(nf, nf);
  ops.k3_ff.setFromTriplets(tff.begin(), tff.end());
  ops.k3_ff.makeCompressed();
  ops.k3_df.resize(nd, nf);
  ops.k3_df.setFromTriplets(tdf.begin(), tdf.end());
  ops.k3_df.makeCompressed();
  return ops;
}

/// Reaction/coupling right-hand sides of the four equations at the given
/// state (everything except diffusion):
///   r1 = -psi(w1 - gamma w2) - lift_G1(R(w1) Q(w4))
///   r2 = +psi(w1 - gamma w2) + alpha lift_G2(h w3 - w2)
///   r3 = -alpha int_G2 (h w3 - w2) per macro node
///   r4 = R(w1|G1) Q(w4)
struct Residuals {
  Eigen::MatrixXd r1, r2;
  Eigen::VectorXd r3;
  Eigen::MatrixXd r4;
};

inline Residuals coupling_residuals(const State& state, const Params& params,
                                    const TwoScaleGrid& grid) {
  if (!state.matches(grid)) throw DomainError("state shape does not match the grid");
  CouplingOperators cpl(grid);
  const int nm = grid.n_macro(), ny = grid.n_micro(), ng1 = grid.gamma1.count();
  Residuals res;
  res.r1.resize(ny, nm);
  res.r2.resize(ny, nm);
  res.r3.resize(nm);
  res.r4.resize(ng1, nm);
  for (int i = 0; i < nm; ++i) {
    Eigen::VectorXd psi_v(ny);
    for (int j = 0; j < ny; ++j)
      psi_v[j] = eval_kinetic(params.psi, state.w1(j, i) - params.gamma * state.w2(j, i));
    Eigen::VectorXd g(ng1);
    for (int j = 0; j < ng1; ++j) {
      const double r = eval_kinetic(params.R, state.w1(grid.gamma1.nodes[static_cast<std::size_t>(j)], i));
      g[j] = r * eval_kinetic(params.Q, state.w4(j, i));
    }
    res.r4.col(i) = g;
    res.r1.col(i) = -psi_v - cpl.lift(Region::gamma1, g);

    Eigen::VectorXd exch(grid.gamma2.count());
    for (int j = 0; j < grid.gamma2.count(); ++j)
      exch[j] = params.henry * state.w3[i] - state.w2(grid.gamma2.nodes[static_cast<std::size_t>(j)], i);
    res.r2.col(i) = psi_v + params.alpha * cpl.lift(Region::gamma2, exch);
    res.r3[i] = -params.alpha * (grid.gamma2.weights.array() * exch.array()).sum();
  }
  return res;
}

}  // namespace tsrd
