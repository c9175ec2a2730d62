#include <catch2/catch_amalgamated.hpp>
#include <cmath>

#include "tsrd/grid.hpp"

using namespace tsrd;

TEST_CASE("1d micro measures") {
  auto g = default_1d_grid(4, 10);
  CHECK(g.micro.measure() == Catch::Approx(1.0).epsilon(1e-15));
  CHECK(g.gamma1.count() == 1);
  CHECK(g.gamma1.nodes[0] == 0);
  CHECK(g.gamma2.count() == 1);
  CHECK(g.gamma2.nodes[0] == 10);  // last node
  CHECK(g.gamma2.measure() == 1.0);
  CHECK(g.gamma3.empty());
  CHECK(boundary_nodes(g, Region::gamma3).count() == 0);
}

TEST_CASE("2d micro regions") {
  auto g = canonical_2d_grid(4, 8);
  CHECK(g.micro.measure() == Catch::Approx(1.0).epsilon(1e-15));
  CHECK(g.gamma1.measure() == Catch::Approx(1.0).epsilon(1e-15));  // bottom edge length
  CHECK(g.gamma2.measure() == Catch::Approx(1.0).epsilon(1e-15));
  CHECK(g.gamma3.measure() == Catch::Approx(2.0).epsilon(1e-15));  // two side edges
  CHECK(g.gamma3.count() == 2 * (8 + 1));                          // 2n nodes for n nodes per axis
  // regions cover the whole micro boundary
  CHECK(g.gamma1.measure() + g.gamma2.measure() + g.gamma3.measure() ==
        Catch::Approx(4.0).epsilon(1e-15));
}

TEST_CASE("macro tagging") {
  auto g = canonical_2d_grid(4, 4);
  CHECK(g.gamma_d.count() == 5);  // left edge of a 4-cell square
  CHECK(g.n_free() == g.n_macro() - 5);
  for (int k : g.dirichlet_nodes) CHECK(g.free_index[static_cast<std::size_t>(k)] == -1);
  // sorted, duplicate-free
  for (std::size_t i = 1; i < g.gamma_d.nodes.size(); ++i)
    CHECK(g.gamma_d.nodes[i] > g.gamma_d.nodes[i - 1]);
}

TEST_CASE("face quadrature integrates affine functions exactly") {
  auto g = canonical_2d_grid(3, 5);
  // f(x) = 2x0 + 3x1 + 1 on the bottom macro face: int over [0,1] at x1=0
  double acc = 0.0;
  for (int j = 0; j < g.gamma_n.count(); ++j) {
    const auto c = g.macro.coord(g.gamma_n.nodes[static_cast<std::size_t>(j)]);
    acc += g.gamma_n.weights[j] * (2 * c[0] + 3 * c[1] + 1);
  }
  // Gamma_N = right + bottom + top edges: int f = (3 + 3/2 + 1) + (1 + 1 + 1) + (1 + 4)
  const double exact = (2 * 1 * 1 + 3 * 0.5 + 1) + (2 * 0.5 + 3 * 0 + 1) + (2 * 0.5 + 3 * 1 + 1);
  CHECK(acc == Catch::Approx(exact).epsilon(1e-14));
}

TEST_CASE("bulk quadrature of coordinate polynomials") {
  auto g = canonical_2d_grid(6, 6);
  double acc = 0.0;
  for (int k = 0; k < g.n_macro(); ++k) {
    const auto c = g.macro.coord(k);
    acc += g.macro.mass[k] * (c[0] + 2 * c[1]);
  }
  CHECK(acc == Catch::Approx(1.5).epsilon(1e-14));  // int (x + 2y) over unit square
}

TEST_CASE("configuration errors") {
  SECTION("missing Gamma_2") {
    MicroGridSpec u;
    u.dim = 1;
    u.axes[0].cells = 4;
    u.tags = {{Face::left, MicroTag::gamma1}, {Face::right, MicroTag::gamma1}};
    MacroGridSpec m;
    m.dim = 1;
    m.axes[0].cells = 4;
    m.tags = {{Face::left, MacroBc::dirichlet}, {Face::right, MacroBc::neumann}};
    CHECK_THROWS_AS(build_two_scale_grid(m, u), ConfigError);
  }
  SECTION("missing Gamma_1") {
    MicroGridSpec u;
    u.dim = 1;
    u.axes[0].cells = 4;
    u.tags = {{Face::left, MicroTag::gamma3}, {Face::right, MicroTag::gamma2}};
    MacroGridSpec m;
    m.dim = 1;
    m.axes[0].cells = 4;
    m.tags = {{Face::left, MacroBc::dirichlet}, {Face::right, MacroBc::neumann}};
    CHECK_THROWS_AS(build_two_scale_grid(m, u), ConfigError);
  }
  SECTION("Neumann-only macro boundary") {
    MicroGridSpec u;
    u.dim = 1;
    u.axes[0].cells = 4;
    u.tags = {{Face::left, MicroTag::gamma1}, {Face::right, MicroTag::gamma2}};
    MacroGridSpec m;
    m.dim = 1;
    m.axes[0].cells = 4;
    m.tags = {{Face::left, MacroBc::neumann}, {Face::right, MacroBc::neumann}};
    CHECK_THROWS_AS(build_two_scale_grid(m, u), ConfigError);
  }
  SECTION("untagged face") {
    MicroGridSpec u;
    u.dim = 2;
    u.axes[0].cells = 2;
    u.axes[1].cells = 2;
    u.tags = {{Face::bottom, MicroTag::gamma1}, {Face::top, MicroTag::gamma2}};
    MacroGridSpec m;
    m.dim = 1;
    m.axes[0].cells = 2;
    m.tags = {{Face::left, MacroBc::dirichlet}, {Face::right, MacroBc::neumann}};
    CHECK_THROWS_AS(build_two_scale_grid(m, u), ConfigError);
  }
  SECTION("2d face names on a 1d grid") {
    MicroGridSpec u;
    u.dim = 1;
    u.axes[0].cells = 2;
    u.tags = {{Face::bottom, MicroTag::gamma1}, {Face::top, MicroTag::gamma2}};
    MacroGridSpec m;
    m.dim = 1;
    m.axes[0].cells = 2;
    m.tags = {{Face::left, MacroBc::dirichlet}, {Face::right, MacroBc::neumann}};
    CHECK_THROWS_AS(build_two_scale_grid(m, u), ConfigError);
  }
}

TEST_CASE("corner weights merge within a region") {
  // Gamma_3 = left + top share the corner (0,1): one node, summed weight
  MicroGridSpec u;
  u.dim = 2;
  u.axes[0].cells = 4;
  u.axes[1].cells = 4;
  u.tags = {{Face::bottom, MicroTag::gamma1},
            {Face::right, MicroTag::gamma2},
            {Face::left, MicroTag::gamma3},
            {Face::top, MicroTag::gamma3}};
  MacroGridSpec m;
  m.dim = 1;
  m.axes[0].cells = 2;
  m.tags = {{Face::left, MacroBc::dirichlet}, {Face::right, MacroBc::neumann}};
  auto g = build_two_scale_grid(m, u);
  CHECK(g.gamma3.count() == 2 * 5 - 1);
  CHECK(g.gamma3.measure() == Catch::Approx(2.0).epsilon(1e-15));
}
