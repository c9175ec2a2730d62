#pragma once

#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <Eigen/SparseCholesky>
#include <cmath>
#include <limits>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "tsrd/diagnostics.hpp"
#include "tsrd/operators.hpp"
#include "tsrd/state.hpp"

namespace tsrd {

/// Solution of the stationary problem for a frozen gypsum field w4inf and
/// boundary limit w3Dinf.
struct StationarySolution {
  Eigen::MatrixXd w1inf, w2inf;
  Eigen::VectorXd w3inf;  // physical field (boundary value included)
  Eigen::MatrixXd w4inf;
  double w3d_inf = 0;
  bool converged = false;
  int iterations = 0;
  std::array<double, 3> residual_norms{};                // dual norms per equation
  std::vector<std::pair<int, double>> trace;             // (iteration, dual residual)

  /// Packages the solution as a state at t = infinity (the boundary data
  /// family is constant there), usable for distances and step fixed-point
  /// checks.
  State as_state() const {
    State s;
    s.w1 = w1inf;
    s.w2 = w2inf;
    s.w3 = w3inf;
    s.w4 = w4inf;
    s.t = std::numeric_limits<double>::infinity();
    return s;
  }
};

struct StationaryOptions {
  double tol_rel = 1e-10;  // dual-norm residual relative to the first iterate
  int max_iterations = 60;
  const State* initial_guess = nullptr;  // default: Henry equilibrium of w3Dinf
};

namespace detail {

struct StationarySystem {
  const Params& params;
  const TwoScaleGrid& grid;
  const DiscreteOperators& ops;
  Eigen::MatrixXd w4inf;
  double w3d_inf;
  int ny, nm, nf, n;

  StationarySystem(const Params& p, const TwoScaleGrid& g, const DiscreteOperators& o,
                   Eigen::MatrixXd w4, double w3d)
      : params(p), grid(g), ops(o), w4inf(std::move(w4)), w3d_inf(w3d),
        ny(g.n_micro()), nm(g.n_macro()), nf(g.n_free()), n(2 * ny * nm + nf) {}

  int off1(int i) const { return 2 * ny * i; }
  int off2(int i) const { return 2 * ny * i + ny; }
  int off3() const { return 2 * ny * nm; }

  void unpack(const Eigen::VectorXd& x, Eigen::MatrixXd& w1, Eigen::MatrixXd& w2,
              Eigen::VectorXd& w3) const {
    w1.resize(ny, nm);
    w2.resize(ny, nm);
    w3.setConstant(nm, w3d_inf);
    for (int i = 0; i < nm; ++i) {
      w1.col(i) = x.segment(off1(i), ny);
      w2.col(i) = x.segment(off2(i), ny);
    }
    for (int r = 0; r < nf; ++r) w3[grid.free_nodes[static_cast<std::size_t>(r)]] += x[off3() + r];
  }

  Eigen::VectorXd pack(const Eigen::MatrixXd& w1, const Eigen::MatrixXd& w2,
                       const Eigen::VectorXd& w3) const {
    Eigen::VectorXd x(n);
    for (int i = 0; i < nm; ++i) {
      x.segment(off1(i), ny) = w1.col(i);
      x.segment(off2(i), ny) = w2.col(i);
    }
    for (int r = 0; r < nf; ++r) x[off3() + r] = w3[grid.free_nodes[static_cast<std::size_t>(r)]] - w3d_inf;
    return x;
  }

  /// Weak residual, rows weighted (wx, gamma wx, gamma h) so the Jacobian is
  /// symmetric.
  Eigen::VectorXd residual(const Eigen::VectorXd& x) const {
    const auto& wx = grid.macro.mass;
    const auto& wy = grid.micro.mass;
    const double gamma = params.gamma, alpha = params.alpha, h = params.henry;
    Eigen::MatrixXd w1, w2;
    Eigen::VectorXd w3;
    unpack(x, w1, w2, w3);
    Eigen::VectorXd f(n);
    Eigen::VectorXd s2(nm);
    for (int i = 0; i < nm; ++i) {
      Eigen::VectorXd f1 = ops.m1(i).stiffness * w1.col(i);
      Eigen::VectorXd f2 = ops.m2(i).stiffness * w2.col(i);
      for (int j = 0; j < ny; ++j) {
        const double ps = eval_kinetic(params.psi, w1(j, i) - gamma * w2(j, i));
        f1[j] += wy[j] * ps;
        f2[j] -= wy[j] * ps;
      }
      for (int j = 0; j < grid.gamma1.count(); ++j) {
        const int node = grid.gamma1.nodes[static_cast<std::size_t>(j)];
        f1[node] += grid.gamma1.weights[j] * eval_kinetic(params.Q, w4inf(j, i)) *
                    eval_kinetic(params.R, w1(node, i));
      }
      double s2i = 0;
      for (int j = 0; j < grid.gamma2.count(); ++j) {
        const int node = grid.gamma2.nodes[static_cast<std::size_t>(j)];
        const double mis = h * w3[i] - w2(node, i);
        f2[node] -= alpha * grid.gamma2.weights[j] * mis;
        s2i += grid.gamma2.weights[j] * w2(node, i);
      }
      s2[i] = s2i;
      f.segment(off1(i), ny) = wx[i] * f1;
      f.segment(off2(i), ny) = gamma * wx[i] * f2;
    }
    Eigen::VectorXd w3t = w3.array() - w3d_inf;
    const Eigen::VectorXd k3w = ops.macro3.stiffness * w3t;
    const double area2 = grid.gamma2.measure();
    for (int r = 0; r < nf; ++r) {
      const int k = grid.free_nodes[static_cast<std::size_t>(r)];
      f[off3() + r] = gamma * h * (k3w[k] + alpha * wx[k] * (h * area2 * w3[k] - s2[k]));
    }
    return f;
  }

  /// Dual (mass-inverse weighted) norm of the residual vector, split per
  /// equation when requested.
  double dual_norm(const Eigen::VectorXd& f, std::array<double, 3>* split = nullptr) const {
    const auto& wx = grid.macro.mass;
    const auto& wy = grid.micro.mass;
    const double gamma = params.gamma, h = params.henry;
    double a = 0, b = 0, c = 0;
    for (int i = 0; i < nm; ++i)
      for (int j = 0; j < ny; ++j) {
        const double d = wx[i] * wy[j];
        a += f[off1(i) + j] * f[off1(i) + j] / d;
        b += f[off2(i) + j] * f[off2(i) + j] / (gamma * d);
      }
    for (int r = 0; r < nf; ++r) {
      const int k = grid.free_nodes[static_cast<std::size_t>(r)];
      c += f[off3() + r] * f[off3() + r] / (gamma * h * wx[k]);
    }
    if (split) *split = {std::sqrt(a), std::sqrt(b), std::sqrt(c)};
    return std::sqrt(a + b + c);
  }

  bool needs_fd_jacobian() const {
    return params.R.kind == KineticKind::custom_table ||
           params.Q.kind == KineticKind::custom_table ||
           params.psi.kind == KineticKind::custom_table;
  }

  Eigen::SparseMatrix<double> jacobian(const Eigen::VectorXd& x) const {
    if (needs_fd_jacobian()) return fd_jacobian(x);
    const auto& wx = grid.macro.mass;
    const auto& wy = grid.micro.mass;
    const double gamma = params.gamma, alpha = params.alpha, h = params.henry;
    Eigen::MatrixXd w1, w2;
    Eigen::VectorXd w3;
    unpack(x, w1, w2, w3);
    std::vector<Eigen::Triplet<double>> trip;
    trip.reserve(static_cast<std::size_t>(nm) *
                     (static_cast<std::size_t>(ops.m1(0).stiffness.nonZeros()) * 2 + 6 * static_cast<std::size_t>(ny)) +
                 static_cast<std::size_t>(ops.k3_ff.nonZeros()) + 4 * static_cast<std::size_t>(nf));
    for (int i = 0; i < nm; ++i) {
      const auto& k1 = ops.m1(i).stiffness;
      const auto& k2 = ops.m2(i).stiffness;
      for (int col = 0; col < k1.outerSize(); ++col)
        for (Eigen::SparseMatrix<double>::InnerIterator it(k1, col); it; ++it)
          trip.emplace_back(off1(i) + static_cast<int>(it.row()), off1(i) + col, wx[i] * it.value());
      for (int col = 0; col < k2.outerSize(); ++col)
        for (Eigen::SparseMatrix<double>::InnerIterator it(k2, col); it; ++it)
          trip.emplace_back(off2(i) + static_cast<int>(it.row()), off2(i) + col, gamma * wx[i] * it.value());
      for (int j = 0; j < ny; ++j) {
        const double dpsi = eval_kinetic_derivative(params.psi, w1(j, i) - gamma * w2(j, i));
        const double v = wx[i] * wy[j] * dpsi;
        trip.emplace_back(off1(i) + j, off1(i) + j, v);
        trip.emplace_back(off1(i) + j, off2(i) + j, -gamma * v);
        trip.emplace_back(off2(i) + j, off1(i) + j, -gamma * v);
        trip.emplace_back(off2(i) + j, off2(i) + j, gamma * gamma * v);
      }
      for (int j = 0; j < grid.gamma1.count(); ++j) {
        const int node = grid.gamma1.nodes[static_cast<std::size_t>(j)];
        const double dr = eval_kinetic(params.Q, w4inf(j, i)) *
                          eval_kinetic_derivative(params.R, w1(node, i));
        if (dr != 0.0)
          trip.emplace_back(off1(i) + node, off1(i) + node, wx[i] * grid.gamma1.weights[j] * dr);
      }
      const int fi = grid.free_index[static_cast<std::size_t>(i)];
      for (int j = 0; j < grid.gamma2.count(); ++j) {
        const int node = grid.gamma2.nodes[static_cast<std::size_t>(j)];
        const double w = grid.gamma2.weights[j];
        trip.emplace_back(off2(i) + node, off2(i) + node, gamma * wx[i] * alpha * w);
        if (fi >= 0) {
          trip.emplace_back(off2(i) + node, off3() + fi, -gamma * wx[i] * alpha * h * w);
          trip.emplace_back(off3() + fi, off2(i) + node, -gamma * h * alpha * wx[i] * w);
        }
      }
    }
    for (int col = 0; col < ops.k3_ff.outerSize(); ++col)
      for (Eigen::SparseMatrix<double>::InnerIterator it(ops.k3_ff, col); it; ++it)
        trip.emplace_back(off3() + static_cast<int>(it.row()), off3() + col, gamma * h * it.value());
    const double area2 = grid.gamma2.measure();
    for (int r = 0; r < nf; ++r) {
      const int k = grid.free_nodes[static_cast<std::size_t>(r)];
      trip.emplace_back(off3() + r, off3() + r, gamma * h * alpha * wx[k] * h * area2);
    }
    Eigen::SparseMatrix<double> jac(n, n);
    jac.setFromTriplets(trip.begin(), trip.end());
    jac.makeCompressed();
    return jac;
  }

  /// Forward-difference Jacobian for custom-table kinetics (desk-scale
  /// instances only; the dense column sweep does not scale).
  Eigen::SparseMatrix<double> fd_jacobian(const Eigen::VectorXd& x) const {
    if (n > 4000)
      throw ConfigError("finite-difference Jacobian for custom_table kinetics is limited to "
                        "small instances (n <= 4000)");
    const Eigen::VectorXd f0 = residual(x);
    const double scale = 1.0 + x.lpNorm<Eigen::Infinity>();
    std::vector<Eigen::Triplet<double>> trip;
    Eigen::VectorXd xp = x;
    for (int c = 0; c < n; ++c) {
      const double hstep = 1e-7 * scale;
      xp[c] = x[c] + hstep;
      const Eigen::VectorXd fc = (residual(xp) - f0) / hstep;
      xp[c] = x[c];
      for (int r = 0; r < n; ++r)
        if (fc[r] != 0.0) trip.emplace_back(r, c, fc[r]);
    }
    Eigen::SparseMatrix<double> jac(n, n);
    jac.setFromTriplets(trip.begin(), trip.end());
    jac.makeCompressed();
    return jac;
  }
};

}  // namespace detail

/// Damped (Armijo) Newton solve of the stationary system in the lifted macro
/// variable. Linear psi with inactive gypsum coupling reduces to a single
/// linear solve; the line search only engages for genuinely nonlinear
/// kinetics. Newton stagnation returns the best iterate flagged
/// non-converged.
inline StationarySolution solve_stationary(const Eigen::MatrixXd& w4inf, double w3d_inf,
                                           const Params& params, const TwoScaleGrid& grid,
                                           const DiscreteOperators& ops,
                                           const StationaryOptions& opts = {}) {
  if (w4inf.rows() != grid.gamma1.count() || w4inf.cols() != grid.n_macro())
    throw DomainError("solve_stationary: w4inf shape mismatch");
  detail::StationarySystem sys(params, grid, ops, w4inf, w3d_inf);

  State guess = opts.initial_guess ? *opts.initial_guess
                                   : State::henry_equilibrium(grid, params, w3d_inf);
  Eigen::VectorXd x = sys.pack(guess.w1, guess.w2, guess.w3);

  StationarySolution sol;
  sol.w4inf = w4inf;
  sol.w3d_inf = w3d_inf;

  Eigen::VectorXd f = sys.residual(x);
  double res = sys.dual_norm(f);
  const double res0 = res;
  const double floor = 1e-13 * (1.0 + std::abs(w3d_inf) +
                                (w4inf.size() ? w4inf.cwiseAbs().maxCoeff() : 0.0));
  sol.trace.emplace_back(0, res);

  int it = 0;
  for (; it < opts.max_iterations; ++it) {
    if (res <= std::max(opts.tol_rel * res0, floor)) {
      sol.converged = true;
      break;
    }
    Eigen::SparseMatrix<double> jac = sys.jacobian(x);
    Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> solver;
    Eigen::VectorXd delta;
    bool factored = false;
    for (double shift : {0.0, 1e-12, 1e-9, 1e-6}) {
      Eigen::SparseMatrix<double> jshift = jac;
      if (shift > 0) {
        Eigen::SparseMatrix<double> eye(sys.n, sys.n);
        eye.setIdentity();
        jshift += shift * eye;
      }
      solver.compute(jshift);
      if (solver.info() != Eigen::Success) continue;
      delta = solver.solve(-f);
      if (delta.allFinite()) {
        factored = true;
        break;
      }
    }
    if (!factored) break;  // stagnation: return best iterate

    // Armijo backtracking on the squared euclidean residual
    const double base = f.squaredNorm();
    double t = 1.0;
    bool accepted = false;
    for (int ls = 0; ls < 30; ++ls) {
      Eigen::VectorXd xt = x + t * delta;
      Eigen::VectorXd ft = sys.residual(xt);
      if (ft.squaredNorm() <= (1.0 - 1e-4 * t) * base) {
        x = std::move(xt);
        f = std::move(ft);
        accepted = true;
        break;
      }
      t *= 0.5;
    }
    if (!accepted) break;  // stagnation
    res = sys.dual_norm(f);
    sol.trace.emplace_back(it + 1, res);
  }
  if (res <= std::max(opts.tol_rel * res0, floor)) sol.converged = true;

  sol.iterations = it;
  sys.unpack(x, sol.w1inf, sol.w2inf, sol.w3inf);
  sys.dual_norm(f, &sol.residual_norms);
  return sol;
}

/// Per-equation weak residual norms of a candidate solution, evaluated
/// through the coupling_residuals/operator path (independent of the Newton
/// assembly).
inline std::array<double, 3> residual_check(const StationarySolution& cand, const Params& params,
                                            const TwoScaleGrid& grid,
                                            const DiscreteOperators& ops) {
  State s = cand.as_state();
  if (!s.matches(grid)) throw DomainError("residual_check: shape mismatch");
  const auto res = coupling_residuals(s, params, grid);
  const auto& wx = grid.macro.mass;
  const auto& wy = grid.micro.mass;
  double a = 0, b = 0, c = 0;
  for (int i = 0; i < grid.n_macro(); ++i) {
    const Eigen::VectorXd f1 =
        ops.m1(i).stiffness * s.w1.col(i) - wy.cwiseProduct(res.r1.col(i));
    const Eigen::VectorXd f2 =
        ops.m2(i).stiffness * s.w2.col(i) - wy.cwiseProduct(res.r2.col(i));
    a += wx[i] * f1.cwiseQuotient(wy).dot(f1);
    b += params.gamma * wx[i] * f2.cwiseQuotient(wy).dot(f2);
  }
  Eigen::VectorXd w3t = s.w3.array() - cand.w3d_inf;
  const Eigen::VectorXd k3w = ops.macro3.stiffness * w3t;
  for (int k : grid.free_nodes) {
    const double f3 = k3w[k] - wx[k] * res.r3[k];
    c += params.gamma * params.henry * f3 * f3 / wx[k];
  }
  return {std::sqrt(a), std::sqrt(b), std::sqrt(c)};
}

struct UniquenessProbe {
  int n_starts = 0;
  int n_converged = 0;
  double max_pairwise_distance = 0;  // H-norm over converged pairs
  bool hypothesis_holds = false;     // psi declared strongly monotone
  std::vector<StationarySolution> solutions;
};

/// Runs solve_stationary from random nonnegative starts in [0, M_i] and
/// reports the max pairwise H-distance of the converged solutions. Outside
/// the strong-monotonicity hypothesis the distances are informational.
inline UniquenessProbe uniqueness_probe(const Params& params, const TwoScaleGrid& grid,
                                        const DiscreteOperators& ops,
                                        const Eigen::MatrixXd& w4inf, double w3d_inf,
                                        int n_starts, unsigned seed = 1234,
                                        const StationaryOptions& opts = {}) {
  UniquenessProbe probe;
  probe.n_starts = n_starts;
  probe.hypothesis_holds = params.psi_strongly_monotone();
  const Bounds b = compute_bounds(params, params.gamma * params.henry * w3d_inf,
                                  params.henry * w3d_inf, w3d_inf,
                                  w4inf.size() ? w4inf.maxCoeff() : 0.0);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  for (int sidx = 0; sidx < n_starts; ++sidx) {
    State start = State::zero(grid);
    for (int i = 0; i < grid.n_macro(); ++i) {
      for (int j = 0; j < grid.n_micro(); ++j) {
        start.w1(j, i) = b.M1 * uni(rng);
        start.w2(j, i) = b.M2 * uni(rng);
      }
      start.w3[i] = b.M3 * uni(rng);
    }
    for (int k : grid.dirichlet_nodes) start.w3[k] = w3d_inf;
    start.t = std::numeric_limits<double>::infinity();
    StationaryOptions o = opts;
    o.initial_guess = &start;
    probe.solutions.push_back(solve_stationary(w4inf, w3d_inf, params, grid, ops, o));
    if (probe.solutions.back().converged) ++probe.n_converged;
  }
  for (std::size_t a = 0; a < probe.solutions.size(); ++a)
    for (std::size_t c = a + 1; c < probe.solutions.size(); ++c) {
      if (!probe.solutions[a].converged || !probe.solutions[c].converged) continue;
      const double d = std::sqrt(
          h_distance_sq(probe.solutions[a].as_state(), probe.solutions[c].as_state(), params, grid));
      probe.max_pairwise_distance = std::max(probe.max_pairwise_distance, d);
    }
  return probe;
}

}  // namespace tsrd
