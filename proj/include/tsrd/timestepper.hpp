#pragma once

#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <Eigen/SparseCholesky>
#include <chrono>
#include <cmath>
#include <limits>
#include <memory>
#include <string>
#include <vector>

#include "tsrd/diagnostics.hpp"
#include "tsrd/operators.hpp"
#include "tsrd/parallel.hpp"
#include "tsrd/state.hpp"

namespace tsrd {

// ---------------------------------------------------------------------------
// Pointwise gypsum update
// ---------------------------------------------------------------------------

/// Semi-implicit scalar solve w = w4 + dt R(w1_trace) Q(w), written in the
/// increment s = w - w4 so that s >= 0 holds exactly (the gypsum layer never
/// shrinks). Closed form for the clipped-linear Q, safeguarded Newton over a
/// monotone bracket otherwise.
inline double ode_w4_update(double w1_trace, double w4, double dt, const Params& params,
                            int* iters_out = nullptr) {
  if (!(dt > 0)) throw DomainError("ode_w4_update: dt must be positive");
  if (iters_out) *iters_out = 0;
  const double r = eval_kinetic(params.R, w1_trace);
  if (r == 0.0) return w4;
  const double c = dt * r;
  const double beta = params.beta_max();
  const auto& Q = params.Q;
  if (Q.kind == KineticKind::clipped_linear && Q.clamp_lo <= 0.0 && Q.clamp_hi >= beta && w4 >= 0.0) {
    if (w4 >= beta) return w4;  // Q = 0 stops growth
    return w4 + c * Q.k * (beta - w4) / (1.0 + c * Q.k);
  }
  // monotone g(s) = s - c Q(w4 + s); g(0) <= 0, find the bracketing hi
  auto g = [&](double s) { return s - c * eval_kinetic(Q, w4 + s); };
  double hi = std::max(beta - w4, 0.0);
  int iters = 0;
  if (hi == 0.0 || g(hi) < 0.0) {
    hi = std::max(hi, 1.0);
    while (g(hi) < 0.0) {
      hi *= 2.0;
      if (++iters > 60) throw SolverError("ode_w4_update: failed to bracket the increment");
    }
  }
  double lo = 0.0, s = std::min(hi, c * eval_kinetic(Q, w4));
  const double tol = 1e-15 * std::max(1.0, std::abs(w4) + hi);
  for (; iters < 100; ++iters) {
    const double gv = g(s);
    if (std::abs(gv) <= tol) break;
    (gv > 0 ? hi : lo) = s;
    const double dg = 1.0 - c * eval_kinetic_derivative(Q, w4 + s);
    double step = dg > 0 ? s - gv / dg : std::numeric_limits<double>::quiet_NaN();
    if (!(step > lo && step < hi)) step = 0.5 * (lo + hi);  // bisection fallback
    s = step;
  }
  if (iters >= 100) throw SolverError("ode_w4_update: scalar solve did not converge");
  if (iters_out) *iters_out = iters;
  return w4 + std::max(s, 0.0);
}

// ---------------------------------------------------------------------------
// One implicit-splitting step
// ---------------------------------------------------------------------------

struct StepControls {
  int sweeps = 1;     // extra Gauss-Seidel sweeps of stages 2-3 within a step
  int threads = 1;
  double bound_tol_rel = 1e-8;  // step fails when defect_i > tol * M_i
  bool check_bounds = true;
};

struct StepReport {
  double dt = 0;
  std::array<double, 4> bound_defect{};  // max(-min w_i, max w_i - M_i), per field
  double mass_total = 0;
  double mass_defect = 0;  // |Delta mass - flux| for this step
  double flux = 0;         // discrete Dirichlet flux, dt-integrated
  double dissipation_increment = 0;
  double i1 = 0, i2 = 0, i3 = 0, i4 = 0;
  double w4_min_increment = 0;
  double w4_l1_increment = 0;  // int ||dt w4||_L1 over the step
  double w4_l2_increment = 0;
  int w4_max_iters = 0;
  double residual_micro = std::numeric_limits<double>::quiet_NaN();
  double residual_macro = std::numeric_limits<double>::quiet_NaN();
  bool ok = true;
  std::string failure;
};

/// Implicit-diffusion / semi-implicit-reaction splitting, one sweep per step:
///   (1) pointwise gypsum update w4^{n+1} = w4^n + dt R(w1^n|G1) Q(w4^{n+1})
///   (2) macro solve, implicit diffusion and implicit h w3 coupling, lagged
///       int_G2 w2^n, forcing -f(t^{n+1})
///   (3) per macro node, coupled (w1,w2) solve with implicit diffusion,
///       implicit psi when psi is linear (lagged otherwise), exchange
///       alpha (h w3^{n+1} - w2^n) on Gamma_2 and the lagged gypsum flux
///       R(w1^n) Q(w4^{n+1}) on Gamma_1.
/// The Gamma_1 flux reuses (w4^{n+1}-w4^n)/dt and the Gamma_2 exchange uses
/// the same lagged w2 value in stages 2 and 3, so the reaction and exchange
/// terms cancel exactly in the discrete mass balance; the remaining mass
/// change equals the discrete Dirichlet flux up to solver roundoff.
/// Factorizations are built once per (coefficients, dt) and reused across
/// macro nodes and steps.
class Stepper {
 public:
  Stepper(const TwoScaleGrid& grid, const Params& params, const DiscreteOperators& ops,
          const Bounds& bounds, double dt, StepControls controls = {})
      : grid_(grid), params_(params), ops_(ops), bounds_(bounds), ctl_(controls),
        psi_implicit_(params.psi_linear()) {
    gamma2_area_ = grid_.gamma2.measure();
    set_dt(dt);
  }

  double dt() const { return dt_; }
  int factorizations() const { return factorizations_; }
  const Bounds& bounds() const { return bounds_; }
  bool psi_implicit() const { return psi_implicit_; }

  void set_dt(double dt) {
    if (!(dt > 0)) throw DomainError("step: dt must be positive");
    dt_ = dt;
    factorize();
  }

  /// Upper bound on usable dt from the lagged-term rates (reported, not
  /// enforced): Gamma_1 sink, explicit part of the Gamma_2 exchange, the
  /// macro exchange rate and, for nonlinear psi, the lagged psi rate.
  double dt_max_estimate() const {
    const double m1 = bounds_.M1;
    const double a = m1 + params_.gamma * bounds_.M2;
    double ratio1 = 0, ratio2 = 0;
    for (int j = 0; j < grid_.gamma1.count(); ++j)
      ratio1 = std::max(ratio1, grid_.gamma1.weights[j] /
                                    grid_.micro.mass[grid_.gamma1.nodes[static_cast<std::size_t>(j)]]);
    for (int j = 0; j < grid_.gamma2.count(); ++j)
      ratio2 = std::max(ratio2, grid_.gamma2.weights[j] /
                                    grid_.micro.mass[grid_.gamma2.nodes[static_cast<std::size_t>(j)]]);
    auto slope = [](const KineticSpec& s, double at) {
      if (s.kind == KineticKind::custom_table) {
        double m = 0;
        for (std::size_t i = 0; i + 1 < s.table.size(); ++i)
          m = std::max(m, std::abs((s.table[i + 1][1] - s.table[i][1]) /
                                   (s.table[i + 1][0] - s.table[i][0])));
        return m;
      }
      return std::abs(eval_kinetic_derivative(s, at));
    };
    const double rate_g1 = slope(params_.R, m1) * eval_kinetic(params_.Q, 0.0) * ratio1;
    const double rate_g2 = params_.alpha * ratio2;
    const double rate_macro = params_.alpha * params_.henry * gamma2_area_;
    const double rate_psi = psi_implicit_ ? 0.0 : slope(params_.psi, a) * (1.0 + params_.gamma);
    const double rate = std::max({rate_g1, rate_g2, rate_macro, rate_psi});
    return rate > 0 ? 1.0 / rate : 1e300;
  }

  StepReport step(State& s, bool with_residuals = false) {
    StepReport rep;
    rep.dt = dt_;
    const double t_old = s.t, t_new = s.t + dt_;
    const double w3d_old = params_.w3D.value(t_old), w3d_new = params_.w3D.value(t_new);
    const double f_old = params_.w3D.forcing(t_old), f_new = params_.w3D.forcing(t_new);
    const int nm = grid_.n_macro(), ny = grid_.n_micro(), ng1 = grid_.gamma1.count();
    const Eigen::VectorXd& wx = grid_.macro.mass;
    const Eigen::VectorXd& wy = grid_.micro.mass;

    // ---- stage 1: gypsum ----
    Eigen::MatrixXd w4_new(ng1, nm);
    for (int i = 0; i < nm; ++i)
      for (int j = 0; j < ng1; ++j) {
        int it = 0;
        w4_new(j, i) = ode_w4_update(s.w1(grid_.gamma1.nodes[static_cast<std::size_t>(j)], i),
                                     s.w4(j, i), dt_, params_, &it);
        rep.w4_max_iters = std::max(rep.w4_max_iters, it);
      }
    const Eigen::MatrixXd g_flux = (w4_new - s.w4) / dt_;  // = R(w1^n) Q(w4^{n+1}) up to solver tol

    // lifted macro field at the old time
    Eigen::VectorXd w3t_old_f(grid_.n_free());
    for (int r = 0; r < grid_.n_free(); ++r)
      w3t_old_f[r] = s.w3[grid_.free_nodes[static_cast<std::size_t>(r)]] - w3d_old;

    // sweep state: exchange and psi lag sources start at the old time level
    const Eigen::MatrixXd* w1_lag = &s.w1;
    const Eigen::MatrixXd* w2_lag = &s.w2;
    Eigen::MatrixXd w1_new, w2_new;
    Eigen::VectorXd w3_new(nm), w3t_new_f;
    Eigen::VectorXd s2_lag(nm);
    Eigen::MatrixXd big_b;  // stage-3 right-hand sides, one column per macro node

    const int sweeps = std::max(1, ctl_.sweeps);
    for (int sweep = 0; sweep < sweeps; ++sweep) {
      // ---- stage 2: macro field ----
      for (int i = 0; i < nm; ++i) s2_lag[i] = ops_.coupling.gamma2_integral(w2_lag->col(i));
      Eigen::VectorXd b3(grid_.n_free());
      for (int r = 0; r < grid_.n_free(); ++r) {
        const int k = grid_.free_nodes[static_cast<std::size_t>(r)];
        b3[r] = wx[k] * (w3t_old_f[r] / dt_ +
                         params_.alpha * (s2_lag[k] - params_.henry * gamma2_area_ * w3d_new) -
                         f_new);
      }
      w3t_new_f = macro_solver_->solve(b3);
      if (with_residuals && sweep == sweeps - 1) {
        const Eigen::VectorXd res = macro_matrix_ * w3t_new_f - b3;
        rep.residual_macro = res.lpNorm<Eigen::Infinity>() /
                             std::max(1.0, b3.lpNorm<Eigen::Infinity>());
      }
      w3_new.setConstant(w3d_new);
      for (int r = 0; r < grid_.n_free(); ++r)
        w3_new[grid_.free_nodes[static_cast<std::size_t>(r)]] += w3t_new_f[r];

      // ---- stage 3: micro pairs, data-parallel across macro nodes ----
      if (psi_implicit_ && (big_b.rows() != 2 * ny || big_b.cols() != nm))
        big_b.resize(2 * ny, nm);
      w1_new.resize(ny, nm);
      w2_new.resize(ny, nm);
      const double gamma = params_.gamma, alpha = params_.alpha, h = params_.henry;

      if (psi_implicit_) {
        parallel_for(nm, ctl_.threads, [&](int b, int e) {
          Eigen::VectorXd col(2 * ny);
          for (int i = b; i < e; ++i) {
            col.head(ny) = wy.cwiseProduct(s.w1.col(i)) / dt_;
            for (int j = 0; j < ng1; ++j)
              col[grid_.gamma1.nodes[static_cast<std::size_t>(j)]] -=
                  grid_.gamma1.weights[j] * g_flux(j, i);
            col.tail(ny) = gamma * wy.cwiseProduct(s.w2.col(i)) / dt_;
            for (int j = 0; j < grid_.gamma2.count(); ++j) {
              const int node = grid_.gamma2.nodes[static_cast<std::size_t>(j)];
              col[ny + node] += gamma * alpha * grid_.gamma2.weights[j] *
                                (h * w3_new[i] - (*w2_lag)(node, i));
            }
            big_b.col(i) = col;
          }
          if (micro_uniform_solvers()) {
            Eigen::MatrixXd x = micro_block_solver_[0]->solve(big_b.middleCols(b, e - b));
            w1_new.middleCols(b, e - b) = x.topRows(ny);
            w2_new.middleCols(b, e - b) = x.bottomRows(ny);
          } else {
            for (int i = b; i < e; ++i) {
              Eigen::VectorXd x = micro_block_solver_[static_cast<std::size_t>(i)]->solve(big_b.col(i));
              w1_new.col(i) = x.head(ny);
              w2_new.col(i) = x.tail(ny);
            }
          }
        });
      } else {
        // lagged psi: the two micro fields decouple
        Eigen::MatrixXd b1(ny, nm), b2(ny, nm);
        parallel_for(nm, ctl_.threads, [&](int b, int e) {
          for (int i = b; i < e; ++i) {
            Eigen::VectorXd psi_v(ny);
            for (int j = 0; j < ny; ++j)
              psi_v[j] = eval_kinetic(params_.psi,
                                      (*w1_lag)(j, i) - gamma * (*w2_lag)(j, i));
            b1.col(i) = wy.cwiseProduct(s.w1.col(i) / dt_ - psi_v);
            for (int j = 0; j < ng1; ++j)
              b1(grid_.gamma1.nodes[static_cast<std::size_t>(j)], i) -=
                  grid_.gamma1.weights[j] * g_flux(j, i);
            b2.col(i) = wy.cwiseProduct(s.w2.col(i) / dt_ + psi_v);
            for (int j = 0; j < grid_.gamma2.count(); ++j) {
              const int node = grid_.gamma2.nodes[static_cast<std::size_t>(j)];
              b2(node, i) += alpha * grid_.gamma2.weights[j] *
                             (h * w3_new[i] - (*w2_lag)(node, i));
            }
          }
          if (micro_uniform_solvers()) {
            w1_new.middleCols(b, e - b) = micro1_solver_[0]->solve(b1.middleCols(b, e - b));
            w2_new.middleCols(b, e - b) = micro2_solver_[0]->solve(b2.middleCols(b, e - b));
          } else {
            for (int i = b; i < e; ++i) {
              w1_new.col(i) = micro1_solver_[static_cast<std::size_t>(i)]->solve(b1.col(i));
              w2_new.col(i) = micro2_solver_[static_cast<std::size_t>(i)]->solve(b2.col(i));
            }
          }
        });
        if (with_residuals && sweep == sweeps - 1) {
          double worst = 0;
          for (int i = 0; i < nm; ++i) {
            worst = std::max(worst, (micro1_matrix(i) * w1_new.col(i) - b1.col(i)).lpNorm<Eigen::Infinity>());
            worst = std::max(worst, (micro2_matrix(i) * w2_new.col(i) - b2.col(i)).lpNorm<Eigen::Infinity>());
          }
          rep.residual_micro = worst / std::max(1.0, std::max(b1.lpNorm<Eigen::Infinity>(),
                                                              b2.lpNorm<Eigen::Infinity>()));
        }
      }
      if (psi_implicit_ && with_residuals && sweep == sweeps - 1) {
        double worst = 0;
        for (int i = 0; i < nm; ++i) {
          Eigen::VectorXd x(2 * ny);
          x.head(ny) = w1_new.col(i);
          x.tail(ny) = w2_new.col(i);
          worst = std::max(worst, (micro_block_matrix(i) * x - big_b.col(i)).lpNorm<Eigen::Infinity>());
        }
        rep.residual_micro = worst / std::max(1.0, big_b.lpNorm<Eigen::Infinity>());
      }
      w1_lag = &w1_new;  // next sweep (if any) lags at the current iterate
      w2_lag = &w2_new;
    }

    // ---- step acceptance: bounds monitor ----
    {
      State cand;  // shallow assembly for the check
      cand.w1 = std::move(w1_new);
      cand.w2 = std::move(w2_new);
      cand.w3 = w3_new;
      cand.w4 = std::move(w4_new);
      cand.t = t_new;
      rep.bound_defect = check_bounds(cand, bounds_);
      if (ctl_.check_bounds) {
        for (int i = 0; i < 4; ++i) {
          const double tol = ctl_.bound_tol_rel * bounds_[i];
          if (rep.bound_defect[static_cast<std::size_t>(i)] > tol) {
            rep.ok = false;
            rep.failure = "bound defect " +
                          std::to_string(rep.bound_defect[static_cast<std::size_t>(i)]) +
                          " on field w" + std::to_string(i + 1) + " exceeds " + std::to_string(tol);
          }
        }
      }
      if (!rep.ok) return rep;  // state untouched

      // ---- per-step diagnostics (serial reductions, deterministic) ----
      finalize_report(rep, s, cand, w3t_old_f, w3t_new_f, s2_lag, w3d_old, w3d_new, f_old, f_new);
      s = std::move(cand);
    }
    return rep;
  }

  const TwoScaleGrid& grid() const { return grid_; }

 private:
  bool micro_uniform_solvers() const { return ops_.micro_uniform; }

  const Eigen::SparseMatrix<double>& micro_block_matrix(int i) const {
    return micro_block_matrix_[ops_.micro_uniform ? 0 : static_cast<std::size_t>(i)];
  }
  const Eigen::SparseMatrix<double>& micro1_matrix(int i) const {
    return micro1_matrix_[ops_.micro_uniform ? 0 : static_cast<std::size_t>(i)];
  }
  const Eigen::SparseMatrix<double>& micro2_matrix(int i) const {
    return micro2_matrix_[ops_.micro_uniform ? 0 : static_cast<std::size_t>(i)];
  }

  void factorize() {
    using Solver = Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>>;
    const int ny = grid_.n_micro();
    const Eigen::VectorXd& wy = grid_.micro.mass;
    const double gamma = params_.gamma;
    const int copies = ops_.micro_uniform ? 1 : grid_.n_macro();

    micro_block_solver_.clear();
    micro1_solver_.clear();
    micro2_solver_.clear();
    micro_block_matrix_.clear();
    micro1_matrix_.clear();
    micro2_matrix_.clear();

    for (int c = 0; c < copies; ++c) {
      const auto& k1 = ops_.m1(c).stiffness;
      const auto& k2 = ops_.m2(c).stiffness;
      if (psi_implicit_) {
        const double kpsi = params_.psi.k;
        std::vector<Eigen::Triplet<double>> trip;
        trip.reserve(static_cast<std::size_t>(k1.nonZeros() + k2.nonZeros() + 4 * ny));
        for (int col = 0; col < k1.outerSize(); ++col)
          for (Eigen::SparseMatrix<double>::InnerIterator it(k1, col); it; ++it)
            trip.emplace_back(static_cast<int>(it.row()), col, it.value());
        for (int col = 0; col < k2.outerSize(); ++col)
          for (Eigen::SparseMatrix<double>::InnerIterator it(k2, col); it; ++it)
            trip.emplace_back(static_cast<int>(it.row()) + ny, col + ny, gamma * it.value());
        for (int j = 0; j < ny; ++j) {
          trip.emplace_back(j, j, wy[j] / dt_ + kpsi * wy[j]);
          trip.emplace_back(ny + j, ny + j, gamma * wy[j] / dt_ + gamma * gamma * kpsi * wy[j]);
          trip.emplace_back(j, ny + j, -gamma * kpsi * wy[j]);
          trip.emplace_back(ny + j, j, -gamma * kpsi * wy[j]);
        }
        Eigen::SparseMatrix<double> a(2 * ny, 2 * ny);
        a.setFromTriplets(trip.begin(), trip.end());
        a.makeCompressed();
        micro_block_matrix_.push_back(a);
        micro_block_solver_.push_back(std::make_unique<Solver>(micro_block_matrix_.back()));
        if (micro_block_solver_.back()->info() != Eigen::Success)
          throw SolverError("micro factorization failed");
      } else {
        Eigen::SparseMatrix<double> a1 = k1, a2 = k2;
        Eigen::SparseMatrix<double> massdt(ny, ny);
        std::vector<Eigen::Triplet<double>> dtrip;
        for (int j = 0; j < ny; ++j) dtrip.emplace_back(j, j, wy[j] / dt_);
        massdt.setFromTriplets(dtrip.begin(), dtrip.end());
        a1 += massdt;
        a2 += massdt;
        micro1_matrix_.push_back(a1);
        micro2_matrix_.push_back(a2);
        micro1_solver_.push_back(std::make_unique<Solver>(micro1_matrix_.back()));
        micro2_solver_.push_back(std::make_unique<Solver>(micro2_matrix_.back()));
        if (micro1_solver_.back()->info() != Eigen::Success ||
            micro2_solver_.back()->info() != Eigen::Success)
          throw SolverError("micro factorization failed");
      }
    }

    // macro matrix: M/dt + K3_ff + alpha h |Gamma_2| M
    macro_matrix_ = ops_.k3_ff;
    std::vector<Eigen::Triplet<double>> dtrip;
    const double shift = 1.0 / dt_ + params_.alpha * params_.henry * gamma2_area_;
    for (int r = 0; r < grid_.n_free(); ++r)
      dtrip.emplace_back(r, r, grid_.macro.mass[grid_.free_nodes[static_cast<std::size_t>(r)]] * shift);
    Eigen::SparseMatrix<double> md(grid_.n_free(), grid_.n_free());
    md.setFromTriplets(dtrip.begin(), dtrip.end());
    macro_matrix_ += md;
    macro_solver_ = std::make_unique<Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>>>(macro_matrix_);
    if (macro_solver_->info() != Eigen::Success) throw SolverError("macro factorization failed");
    ++factorizations_;
  }

  void finalize_report(StepReport& rep, const State& old_s, const State& new_s,
                       const Eigen::VectorXd& w3t_old_f, const Eigen::VectorXd& w3t_new_f,
                       const Eigen::VectorXd& s2_lag, double w3d_old, double w3d_new,
                       double f_old, double f_new) {
    const Eigen::VectorXd& wx = grid_.macro.mass;
    const Eigen::VectorXd& wy = grid_.micro.mass;
    const int nm = grid_.n_macro();

    // gypsum monotonicity and time-integral increments
    const Eigen::MatrixXd dw4 = new_s.w4 - old_s.w4;
    rep.w4_min_increment = dw4.size() ? dw4.minCoeff() : 0.0;
    rep.w4_l1_increment = grid_.gamma1.weights.dot(dw4.cwiseAbs() * wx);
    rep.w4_l2_increment = grid_.gamma1.weights.dot(dw4.array().square().matrix() * wx) / dt_;

    // dissipation increment dt ||(w~^{n+1} - w~^n)/dt||_H^2
    {
      const Eigen::MatrixXd d1 = new_s.w1 - old_s.w1;
      const Eigen::MatrixXd d2 = new_s.w2 - old_s.w2;
      double b1 = wy.dot((d1.array().square().matrix() * wx));
      double b2 = wy.dot((d2.array().square().matrix() * wx));
      double b3 = 0;
      for (int r = 0; r < grid_.n_free(); ++r) {
        const double d = w3t_new_f[r] - w3t_old_f[r];
        b3 += wx[grid_.free_nodes[static_cast<std::size_t>(r)]] * d * d;
      }
      rep.dissipation_increment =
          (b1 + params_.gamma * b2 + params_.gamma * params_.henry * b3) / dt_;
    }

    // I-term increments
    {
      double i1 = 0;
      for (int i = 0; i < nm; ++i)
        for (int j = 0; j < grid_.gamma1.count(); ++j) {
          const int node = grid_.gamma1.nodes[static_cast<std::size_t>(j)];
          i1 += wx[i] * grid_.gamma1.weights[j] *
                (eval_kinetic(params_.Q, new_s.w4(j, i)) - eval_kinetic(params_.Q, old_s.w4(j, i))) *
                (has_primitives() ? eval_primitive(params_.R, new_s.w1(node, i)) : 0.0);
        }
      rep.i1 = has_primitives() ? i1 : std::numeric_limits<double>::quiet_NaN();

      const double dw3d = w3d_new - w3d_old;
      double i2 = 0;
      if (dw3d != 0.0) {
        for (int i = 0; i < nm; ++i)
          for (int j = 0; j < grid_.gamma2.count(); ++j) {
            const int node = grid_.gamma2.nodes[static_cast<std::size_t>(j)];
            i2 += wx[i] * grid_.gamma2.weights[j] *
                  (params_.henry * new_s.w3[i] - new_s.w2(node, i));
          }
        i2 *= params_.alpha * params_.gamma * params_.henry * dw3d;
      }
      rep.i2 = i2;

      double wt_new = 0, wt_old = 0;
      for (int r = 0; r < grid_.n_free(); ++r) {
        const int k = grid_.free_nodes[static_cast<std::size_t>(r)];
        wt_new += wx[k] * w3t_new_f[r];
        wt_old += wx[k] * w3t_old_f[r];
      }
      const double gh = params_.gamma * params_.henry;
      rep.i4 = gh * (f_new - f_old) * wt_new;
      rep.i3 = -gh * (f_new * wt_new - f_old * wt_old);
    }

    // mass balance: Delta mass - flux, with the flux read off the Dirichlet
    // rows plus the moving-data bookkeeping
    {
      rep.mass_total = mass_total(new_s, grid_);
      const double mass_old = mass_total(old_s, grid_);
      const Eigen::VectorXd kdf = ops_.k3_df * w3t_new_f;
      double flux = 0;
      for (std::size_t r = 0; r < grid_.dirichlet_nodes.size(); ++r) {
        const int k = grid_.dirichlet_nodes[r];
        const double e2 = params_.alpha *
                          (params_.henry * gamma2_area_ * new_s.w3[k] - s2_lag[k]);
        flux += kdf[static_cast<Eigen::Index>(r)] + wx[k] * e2;
      }
      flux *= dt_;
      const double dw3d = w3d_new - w3d_old;
      flux += grid_.macro.measure() * dw3d;
      double wf = 0;
      for (int k : grid_.free_nodes) wf += wx[k];
      flux -= dt_ * wf * f_new;
      rep.flux = flux;
      rep.mass_defect = std::abs((rep.mass_total - mass_old) - flux);
    }
  }

  bool has_primitives() const {
    return params_.R.kind != KineticKind::custom_table &&
           params_.psi.kind != KineticKind::custom_table;
  }

  const TwoScaleGrid& grid_;
  const Params& params_;
  const DiscreteOperators& ops_;
  Bounds bounds_;
  StepControls ctl_;
  bool psi_implicit_ = true;
  double dt_ = 0;
  double gamma2_area_ = 0;
  int factorizations_ = 0;

  std::vector<Eigen::SparseMatrix<double>> micro_block_matrix_, micro1_matrix_, micro2_matrix_;
  std::vector<std::unique_ptr<Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>>>>
      micro_block_solver_, micro1_solver_, micro2_solver_;
  Eigen::SparseMatrix<double> macro_matrix_;
  std::unique_ptr<Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>>> macro_solver_;
};

// ---------------------------------------------------------------------------
// Trajectory driver
// ---------------------------------------------------------------------------

struct RunControls {
  double dt = 1e-3;
  double t_end = 1.0;
  double output_every = 0.1;  // <= 0: record only the initial and final states
  double steady_tol = 0.0;    // > 0: stop when ||dt state||_H drops below it
  long max_steps = std::numeric_limits<long>::max();
  bool adaptive = false;  // halve dt and retry on step failure
  int sweeps = 1;
  int threads = 1;
  bool with_residuals = false;
};

enum class RunStatus { completed, steady_reached, step_failed, max_steps_reached };

struct RunResult {
  std::vector<State> snapshots;
  std::vector<DiagnosticsRecord> records;
  RunStatus status = RunStatus::completed;
  std::string message;
  Bounds bounds;
  std::array<double, 4> max_bound_defect{-1e300, -1e300, -1e300, -1e300};
  double max_mass_defect = 0;      // absolute, over all steps
  double max_mass_defect_rel = 0;  // relative to the current total mass
  double min_w4_increment = 0;     // most negative nodewise gypsum increment
  long steps = 0;
  double dt_final = 0;
  double dt_max_estimate = 0;
  double runtime_seconds = 0;

  bool ok() const { return status == RunStatus::completed || status == RunStatus::steady_reached; }
};

/// Advances the system to t_end recording snapshots and diagnostics at the
/// requested cadence; stops early at the steady-state criterion or on an
/// unrecoverable step failure (partial trajectory retained).
inline RunResult run(const State& initial, const Params& params, const TwoScaleGrid& grid,
                     const DiscreteOperators& ops, const RunControls& rc) {
  const auto wall0 = std::chrono::steady_clock::now();
  RunResult out;
  out.bounds = compute_bounds(params, initial);
  StepControls sc;
  sc.sweeps = rc.sweeps;
  sc.threads = rc.threads;
  Stepper stepper(grid, params, ops, out.bounds, rc.dt, sc);
  out.dt_max_estimate = stepper.dt_max_estimate();

  const bool energy_available = params.R.kind != KineticKind::custom_table &&
                                params.psi.kind != KineticKind::custom_table;
  State s = initial;
  auto make_record = [&](double dissipation, double steady_rate) {
    DiagnosticsRecord rec;
    rec.step = out.steps;
    rec.t = s.t;
    rec.energy = energy_available ? energy(s, params, grid, ops)
                                  : std::numeric_limits<double>::quiet_NaN();
    rec.mass_total = mass_total(s, grid);
    rec.w4_total = w4_mass(s, grid);
    rec.dissipation = dissipation;
    rec.steady_rate = steady_rate;
    return rec;
  };
  out.snapshots.push_back(s);
  out.records.push_back(make_record(0.0, std::numeric_limits<double>::quiet_NaN()));

  if (rc.t_end <= s.t) {
    out.runtime_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - wall0).count();
    out.dt_final = rc.dt;
    return out;
  }

  DiagnosticsRecord interval{};  // accumulators for the current interval
  State prev_out = s;
  double next_out = rc.output_every > 0 ? s.t + rc.output_every
                                        : std::numeric_limits<double>::infinity();
  // absorbs the accumulated roundoff of repeated t += dt so a run over an
  // exact multiple of dt takes exactly that many steps
  const double t_eps = 1e-9 * std::max(rc.dt, std::abs(rc.t_end) + 1.0);
  int halvings = 0;

  while (s.t < rc.t_end - t_eps) {
    if (out.steps >= rc.max_steps) {
      out.status = RunStatus::max_steps_reached;
      out.message = "max_steps reached at t = " + std::to_string(s.t);
      break;
    }
    if (s.t + stepper.dt() > rc.t_end + t_eps) stepper.set_dt(rc.t_end - s.t);

    StepReport rep;
    try {
      rep = stepper.step(s, rc.with_residuals);
    } catch (const SolverError& e) {
      rep.ok = false;
      rep.failure = e.what();
    }
    if (!rep.ok) {
      if (rc.adaptive && halvings < 20) {
        stepper.set_dt(0.5 * stepper.dt());
        ++halvings;
        continue;
      }
      out.status = RunStatus::step_failed;
      out.message = rep.failure;
      break;
    }
    ++out.steps;

    // aggregate per-step monitors
    for (std::size_t i = 0; i < 4; ++i)
      out.max_bound_defect[i] = std::max(out.max_bound_defect[i], rep.bound_defect[i]);
    out.max_mass_defect = std::max(out.max_mass_defect, rep.mass_defect);
    if (rep.mass_total > 0)
      out.max_mass_defect_rel = std::max(out.max_mass_defect_rel, rep.mass_defect / rep.mass_total);
    else if (rep.mass_defect > 0)
      out.max_mass_defect_rel = std::numeric_limits<double>::infinity();
    out.min_w4_increment = std::min(out.min_w4_increment, rep.w4_min_increment);

    interval.dissipation_integral += rep.dissipation_increment;
    interval.i1 += rep.i1;
    interval.i2 += rep.i2;
    interval.i3 += rep.i3;
    interval.i4 += rep.i4;
    interval.flux_integral += rep.flux;
    interval.mass_defect = std::max(interval.mass_defect, rep.mass_defect);
    interval.w4_l1_increment += rep.w4_l1_increment;
    double bd = -1e300;
    for (double d : rep.bound_defect) bd = std::max(bd, d);
    interval.bound_defect = std::max(interval.bound_defect, bd);

    const bool at_output = s.t >= next_out - t_eps;
    const bool at_end = s.t >= rc.t_end - t_eps;
    if (at_output || at_end) {
      const double dt_out = s.t - prev_out.t;
      const double rate_sq = dt_out > 0 ? h_distance_sq(s, prev_out, params, grid) / (dt_out * dt_out)
                                        : 0.0;
      DiagnosticsRecord rec = make_record(rate_sq, std::sqrt(rate_sq));
      rec.dissipation_integral = interval.dissipation_integral;
      rec.i1 = interval.i1;
      rec.i2 = interval.i2;
      rec.i3 = interval.i3;
      rec.i4 = interval.i4;
      rec.flux_integral = interval.flux_integral;
      rec.mass_defect = interval.mass_defect;
      rec.bound_defect = interval.bound_defect;
      rec.w4_l1_increment = interval.w4_l1_increment;
      out.records.push_back(rec);
      out.snapshots.push_back(s);
      interval = DiagnosticsRecord{};
      prev_out = s;
      while (next_out <= s.t + t_eps) next_out += rc.output_every;
      if (rc.steady_tol > 0 && std::sqrt(rate_sq) < rc.steady_tol && !at_end) {
        out.status = RunStatus::steady_reached;
        out.message = "steady state at t = " + std::to_string(s.t);
        break;
      }
    }
  }

  out.dt_final = stepper.dt();
  out.runtime_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - wall0).count();
  return out;
}

/// Fills DiagnosticsRecord::h_norm_sq with |w~(t) - w~_ref|_H^2 against a
/// stationary reference state.
inline void fill_distances(RunResult& result, const State& reference, const Params& params,
                           const TwoScaleGrid& grid) {
  for (std::size_t n = 0; n < result.snapshots.size() && n < result.records.size(); ++n)
    result.records[n].h_norm_sq = h_distance_sq(result.snapshots[n], reference, params, grid);
}

}  // namespace tsrd
