#include <catch2/catch_amalgamated.hpp>
#include <random>

#include "tsrd/diagnostics.hpp"
#include "tsrd/oracle.hpp"
#include "tsrd/timestepper.hpp"

using namespace tsrd;

namespace {

Params basic_params() {
  Params p;
  p.gamma = 2.0;
  p.henry = 0.5;
  p.alpha = 1.0;
  p.R = make_clipped_r(1.0);
  p.Q = make_clipped_q(1.0, 1.0);
  p.psi = make_linear_psi(1.0);
  return p;
}

State random_state(const TwoScaleGrid& g, const Bounds& b, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  State s = State::zero(g);
  for (int i = 0; i < g.n_macro(); ++i) {
    for (int j = 0; j < g.n_micro(); ++j) {
      s.w1(j, i) = b.M1 * uni(rng);
      s.w2(j, i) = b.M2 * uni(rng);
    }
    s.w3[i] = b.M3 * uni(rng);
    for (int j = 0; j < g.gamma1.count(); ++j) s.w4(j, i) = b.M4 * uni(rng);
  }
  return s;
}

}  // namespace

TEST_CASE("h_inner") {
  Params p = basic_params();
  auto g = default_1d_grid(4, 4);

  SECTION("constants on unit domains") {
    Eigen::MatrixXd ones1 = Eigen::MatrixXd::Ones(g.n_micro(), g.n_macro());
    Eigen::VectorXd ones3 = Eigen::VectorXd::Ones(g.n_macro());
    const double v = h_inner(ones1, ones1, ones3, ones1, ones1, ones3, p, g);
    CHECK(v == Catch::Approx(1 + p.gamma + p.gamma * p.henry).epsilon(1e-14));
  }
  SECTION("orthogonal components") {
    Eigen::MatrixXd u1 = Eigen::MatrixXd::Ones(g.n_micro(), g.n_macro());
    Eigen::MatrixXd z = Eigen::MatrixXd::Zero(g.n_micro(), g.n_macro());
    Eigen::VectorXd z3 = Eigen::VectorXd::Zero(g.n_macro());
    CHECK(h_inner(z, u1, z3, u1, z, z3, p, g) == 0.0);
  }
  SECTION("gamma = 2, h = 0.5 weights") {
    Eigen::MatrixXd z = Eigen::MatrixXd::Zero(g.n_micro(), g.n_macro());
    Eigen::MatrixXd u2 = Eigen::MatrixXd::Ones(g.n_micro(), g.n_macro());
    Eigen::VectorXd u3 = Eigen::VectorXd::Ones(g.n_macro());
    CHECK(h_inner(z, u2, u3, z, u2, u3, p, g) == Catch::Approx(3.0).epsilon(1e-14));
  }
  SECTION("symmetric bilinear positive definite") {
    std::mt19937_64 rng(5);
    Bounds b{1, 1, 1, 1};
    State u = random_state(g, b, rng), v = random_state(g, b, rng);
    const double uv = h_inner(u.w1, u.w2, u.w3, v.w1, v.w2, v.w3, p, g);
    const double vu = h_inner(v.w1, v.w2, v.w3, u.w1, u.w2, u.w3, p, g);
    CHECK(uv == Catch::Approx(vu).epsilon(1e-14));
    const double uu = h_inner(u.w1, u.w2, u.w3, u.w1, u.w2, u.w3, p, g);
    CHECK(uu > 0);
    // bilinearity in the first slot
    Eigen::MatrixXd w1 = 2.0 * u.w1 + v.w1;
    Eigen::MatrixXd w2 = 2.0 * u.w2 + v.w2;
    Eigen::VectorXd w3 = 2.0 * u.w3 + v.w3;
    const double lin = h_inner(w1, w2, w3, v.w1, v.w2, v.w3, p, g);
    CHECK(lin == Catch::Approx(2 * uv + h_inner(v.w1, v.w2, v.w3, v.w1, v.w2, v.w3, p, g)).epsilon(1e-12));
  }
  SECTION("shape mismatch") {
    Eigen::MatrixXd u1 = Eigen::MatrixXd::Ones(g.n_micro(), g.n_macro());
    Eigen::VectorXd u3 = Eigen::VectorXd::Ones(g.n_macro() + 1);
    CHECK_THROWS_AS(h_inner(u1, u1, u3, u1, u1, u3, p, g), DomainError);
  }
}

TEST_CASE("energy closed forms") {
  Params p = basic_params();
  auto g = canonical_2d_grid(3, 3);
  auto ops = assemble_operators(g, p);

  SECTION("zero state with zero data") {
    State s = State::zero(g);
    CHECK(energy(s, p, g, ops) == 0.0);
  }
  SECTION("constant w1, rest zero") {
    // u1 = c, Q(w4) = q, w3D = 0: phi = q Rhat(c) |Omega| |Gamma_1|
    //                                + psihat(c) |Omega| |Y| (gradients vanish)
    const double c = 0.8;
    State s = State::zero(g);
    s.w1.setConstant(c);
    s.w4.setConstant(0.5);  // Q = 0.5 constant
    const double q = eval_kinetic(p.Q, 0.5);
    const double expected = q * (c * c / 2) * 1.0 * 1.0 + (c * c / 2) * 1.0 * 1.0;
    CHECK(energy(s, p, g, ops) == Catch::Approx(expected).epsilon(1e-13));
  }
}

TEST_CASE("double-entry energy against the independent evaluator") {
  Params p = basic_params();
  p.d1.cy = {0.3, 0.1};  // exercise coefficient variation
  p.d2.cx = {0.2, 0.0};
  p.w3D.winf = 0.9;
  p.w3D.amplitude = 0.4;
  p.w3D.rate = 2.0;
  auto g = canonical_2d_grid(4, 4);
  auto ops = assemble_operators(g, p);
  Bounds b{1.0, 0.5, 1.0, 1.0};
  std::mt19937_64 rng(42);
  for (int trial = 0; trial < 100; ++trial) {
    State s = random_state(g, b, rng);
    s.t = 0.3 * trial;
    const double a = energy(s, p, g, ops);
    const double c = oracle::energy_independent(s, p, g);
    CHECK(std::abs(a - c) <= 1e-12 * std::max(std::abs(a), std::abs(c)));
  }
}

TEST_CASE("double-entry energy across grid dimension combinations") {
  Params p = basic_params();
  p.w3D.winf = 0.5;
  p.w3D.amplitude = 0.2;
  Bounds b{1, 1, 1, 1};
  std::mt19937_64 rng(23);

  auto check_pair = [&](const TwoScaleGrid& g) {
    auto ops = assemble_operators(g, p);
    for (int trial = 0; trial < 20; ++trial) {
      State s = random_state(g, b, rng);
      s.t = 0.25 * trial;
      const double a = energy(s, p, g, ops);
      const double c = oracle::energy_independent(s, p, g);
      CHECK(std::abs(a - c) <= 1e-12 * std::max(std::abs(a), std::abs(c)));
    }
  };

  // 1d macro x 2d micro
  {
    MacroGridSpec m;
    m.dim = 1;
    m.axes[0].cells = 4;
    m.tags = {{Face::left, MacroBc::dirichlet}, {Face::right, MacroBc::neumann}};
    MicroGridSpec u;
    u.dim = 2;
    u.axes[0].cells = 3;
    u.axes[1].cells = 4;
    u.tags = {{Face::bottom, MicroTag::gamma1},
              {Face::top, MicroTag::gamma2},
              {Face::left, MicroTag::gamma3},
              {Face::right, MicroTag::gamma3}};
    check_pair(build_two_scale_grid(m, u));
  }
  // 2d macro x 1d micro
  {
    MacroGridSpec m;
    m.dim = 2;
    m.axes[0].cells = 3;
    m.axes[1].cells = 4;
    m.tags = {{Face::left, MacroBc::dirichlet},
              {Face::right, MacroBc::neumann},
              {Face::bottom, MacroBc::neumann},
              {Face::top, MacroBc::neumann}};
    MicroGridSpec u;
    u.dim = 1;
    u.axes[0].cells = 5;
    u.tags = {{Face::left, MicroTag::gamma1}, {Face::right, MicroTag::gamma2}};
    check_pair(build_two_scale_grid(m, u));
  }
}

TEST_CASE("check_bounds") {
  auto g = default_1d_grid(3, 3);
  Bounds b{1, 1, 1, 1};
  State s = State::zero(g);
  auto d0 = check_bounds(s, b);
  for (double v : d0) CHECK(v == 0.0);

  s.w1.setConstant(1.0);  // exactly at the bound
  CHECK(check_bounds(s, b)[0] == 0.0);

  s.w1(0, 0) = 2.0;  // one node above
  CHECK(check_bounds(s, b)[0] == Catch::Approx(1.0));

  s.w1(0, 0) = -0.5;  // negativity counts too
  CHECK(check_bounds(s, b)[0] == Catch::Approx(0.5));
}

TEST_CASE("discrete gradient consistency") {
  // directional finite differences of the energy match <gradient, dir>_H
  Params p = basic_params();
  auto g = default_1d_grid(3, 4);
  auto ops = assemble_operators(g, p);
  p.w3D.winf = 1.0;

  State s = State::henry_equilibrium(g, p, 1.0);
  // move off equilibrium but keep R on its smooth branch (w1 > 0 at Gamma_1)
  s.w1.array() += 0.3;
  s.w2.array() += 0.1;
  for (int k : g.free_nodes) s.w3[k] += 0.2;
  s.w4.setConstant(0.4);
  s.t = 0.0;

  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> uni(-1.0, 1.0);
  State dir = State::zero(g);
  for (int i = 0; i < g.n_macro(); ++i) {
    for (int j = 0; j < g.n_micro(); ++j) {
      dir.w1(j, i) = uni(rng);
      dir.w2(j, i) = uni(rng);
    }
    dir.w3[i] = uni(rng);
  }
  for (int k : g.dirichlet_nodes) dir.w3[k] = 0.0;  // stay in the constrained space

  auto grad = energy_gradient(s, p, g, ops);
  const double pairing = h_inner(grad.g1, grad.g2, grad.g3, dir.w1, dir.w2, dir.w3, p, g);

  const double delta = 1e-6;
  State sp = s, sm = s;
  sp.w1 += delta * dir.w1; sp.w2 += delta * dir.w2; sp.w3 += delta * dir.w3;
  sm.w1 -= delta * dir.w1; sm.w2 -= delta * dir.w2; sm.w3 -= delta * dir.w3;
  const double fd = (energy(sp, p, g, ops) - energy(sm, p, g, ops)) / (2 * delta);
  CHECK(fd == Catch::Approx(pairing).epsilon(1e-6));
}

TEST_CASE("stationary run has identically zero balance defects") {
  Params p = basic_params();
  p.w3D.winf = 0.8;
  auto g = default_1d_grid(3, 3);
  auto ops = assemble_operators(g, p);
  State eq = State::henry_equilibrium(g, p, 0.8);
  RunControls rc;
  rc.dt = 1e-2;
  rc.t_end = 0.2;
  rc.output_every = 0.05;
  auto rr = run(eq, p, g, ops, rc);
  REQUIRE(rr.ok());
  for (double d : energy_balance(rr.records)) CHECK(std::abs(d) <= 1e-14);
  for (double d : mass_balance(rr.records)) CHECK(std::abs(d) <= 1e-13);
  CHECK(rr.max_mass_defect <= 1e-14);
  for (const auto& r : rr.records) CHECK(r.dissipation_integral <= 1e-20);
}

TEST_CASE("energy is bounded below by the forcing term") {
  // all quadratic/primitive terms are nonnegative, so
  // phi_1 >= -gamma h |f| int |u3|
  Params p = basic_params();
  p.w3D.winf = 1.0;
  p.w3D.amplitude = 0.5;
  p.w3D.rate = 1.0;
  auto g = default_1d_grid(3, 3);
  auto ops = assemble_operators(g, p);
  std::mt19937_64 rng(13);
  Bounds b{1, 1, 1, 1};
  for (int trial = 0; trial < 20; ++trial) {
    State s = random_state(g, b, rng);
    s.t = 0.1 * trial;
    const double f = p.w3D.forcing(s.t);
    const Eigen::VectorXd w3t = lifted_w3(s, p);
    double l1 = 0;
    for (int k = 0; k < g.n_macro(); ++k) l1 += g.macro.mass[k] * std::abs(w3t[k]);
    CHECK(energy(s, p, g, ops) >= -p.gamma * p.henry * std::abs(f) * l1 - 1e-12);
  }
}

TEST_CASE("w4_convergence on degenerate trajectories") {
  auto g = default_1d_grid(3, 3);
  SECTION("single state") {
    std::vector<State> traj{State::zero(g)};
    auto c = w4_convergence(traj, g);
    CHECK(c.total_variation == 0.0);
    CHECK(c.monotone);
  }
  SECTION("constant w4") {
    State a = State::zero(g), b = State::zero(g);
    b.t = 1.0;
    std::vector<State> traj{a, b};
    auto c = w4_convergence(traj, g);
    CHECK(c.total_variation == 0.0);
    CHECK(c.l2_time_integral == 0.0);
    CHECK(c.monotone);
  }
}
