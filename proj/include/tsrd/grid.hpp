#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <array>
#include <map>
#include <string>
#include <vector>

#include "tsrd/error.hpp"

namespace tsrd {

enum class Face { left, right, bottom, top };
enum class MacroBc { dirichlet, neumann };
enum class MicroTag { gamma1, gamma2, gamma3 };
enum class Region { gamma1, gamma2, gamma3, gamma_d, gamma_n };

inline std::string face_name(Face f) {
  switch (f) { case Face::left: return "left"; case Face::right: return "right";
               case Face::bottom: return "bottom"; default: return "top"; }
}

struct AxisSpec {
  int cells = 1;
  double length = 1.0;
};

struct MacroGridSpec {
  int dim = 1;
  std::array<AxisSpec, 2> axes{};
  std::map<Face, MacroBc> tags;  // every face of the chosen dimension
};

struct MicroGridSpec {
  int dim = 1;
  std::array<AxisSpec, 2> axes{};
  std::map<Face, MicroTag> tags;
};

/// Vertex-centered structured grid on [0,L0] (x [0,L1]); node index
/// idx = ix + n0 * iy, trapezoidal node weights.
struct StructuredGrid {
  int dim = 1;
  std::array<int, 2> n{2, 1};       // nodes per axis (n1 = 1 in 1D)
  std::array<double, 2> h{1.0, 0.0};
  std::array<double, 2> len{1.0, 0.0};
  Eigen::VectorXd mass;             // trapezoid weights, size nodes()

  int nodes() const { return n[0] * n[1]; }
  int index(int ix, int iy) const { return ix + n[0] * iy; }
  std::array<double, 2> coord(int idx) const {
    const int ix = idx % n[0], iy = idx / n[0];
    return {ix * h[0], dim == 2 ? iy * h[1] : 0.0};
  }
  double axis_weight(int axis, int i) const {
    if (dim == 1 && axis == 1) return 1.0;
    return (i == 0 || i == n[static_cast<std::size_t>(axis)] - 1) ? 0.5 * h[static_cast<std::size_t>(axis)]
                                                                  : h[static_cast<std::size_t>(axis)];
  }
  double measure() const { return mass.sum(); }
};

/// Nodes of one tagged boundary region together with their boundary
/// quadrature weights (trapezoid per face, faces merged; a node shared by two
/// faces of the same region carries the summed weight). 0-dimensional faces
/// (grid endpoints in 1D) carry weight 1.
struct BoundaryRegion {
  std::vector<int> nodes;        // sorted, duplicate-free
  Eigen::VectorXd weights;       // aligned with nodes
  int count() const { return static_cast<int>(nodes.size()); }
  bool empty() const { return nodes.empty(); }
  double measure() const { return weights.size() ? weights.sum() : 0.0; }
};

namespace detail {

inline StructuredGrid build_structured(int dim, const std::array<AxisSpec, 2>& axes,
                                       const char* what) {
  if (dim != 1 && dim != 2) throw ConfigError(std::string(what) + ": dim must be 1 or 2");
  StructuredGrid g;
  g.dim = dim;
  for (int d = 0; d < dim; ++d) {
    const auto& ax = axes[static_cast<std::size_t>(d)];
    if (ax.cells < 1) throw ConfigError(std::string(what) + ": cells must be >= 1");
    if (!(ax.length > 0)) throw ConfigError(std::string(what) + ": length must be > 0");
    g.n[static_cast<std::size_t>(d)] = ax.cells + 1;
    g.len[static_cast<std::size_t>(d)] = ax.length;
    g.h[static_cast<std::size_t>(d)] = ax.length / ax.cells;
  }
  if (dim == 1) { g.n[1] = 1; g.h[1] = 0.0; g.len[1] = 0.0; }
  g.mass.resize(g.nodes());
  for (int iy = 0; iy < g.n[1]; ++iy)
    for (int ix = 0; ix < g.n[0]; ++ix)
      g.mass[g.index(ix, iy)] = g.axis_weight(0, ix) * g.axis_weight(1, iy);
  return g;
}

/// Face node list with per-node trapezoid weights; 1D faces are single nodes
/// with weight 1.
inline void face_nodes(const StructuredGrid& g, Face f, std::vector<int>& nodes,
                       std::vector<double>& w) {
  nodes.clear();
  w.clear();
  if (g.dim == 1) {
    if (f == Face::bottom || f == Face::top)
      throw ConfigError("face '" + face_name(f) + "' does not exist on a 1D grid");
    nodes.push_back(f == Face::left ? 0 : g.n[0] - 1);
    w.push_back(1.0);
    return;
  }
  switch (f) {
    case Face::left:
      for (int iy = 0; iy < g.n[1]; ++iy) { nodes.push_back(g.index(0, iy)); w.push_back(g.axis_weight(1, iy)); }
      break;
    case Face::right:
      for (int iy = 0; iy < g.n[1]; ++iy) { nodes.push_back(g.index(g.n[0] - 1, iy)); w.push_back(g.axis_weight(1, iy)); }
      break;
    case Face::bottom:
      for (int ix = 0; ix < g.n[0]; ++ix) { nodes.push_back(g.index(ix, 0)); w.push_back(g.axis_weight(0, ix)); }
      break;
    case Face::top:
      for (int ix = 0; ix < g.n[0]; ++ix) { nodes.push_back(g.index(ix, g.n[1] - 1)); w.push_back(g.axis_weight(0, ix)); }
      break;
  }
}

inline BoundaryRegion merge_faces(const StructuredGrid& g, const std::vector<Face>& faces) {
  std::map<int, double> acc;
  std::vector<int> nodes;
  std::vector<double> w;
  for (Face f : faces) {
    face_nodes(g, f, nodes, w);
    for (std::size_t i = 0; i < nodes.size(); ++i) acc[nodes[i]] += w[i];
  }
  BoundaryRegion r;
  r.nodes.reserve(acc.size());
  r.weights.resize(static_cast<Eigen::Index>(acc.size()));
  Eigen::Index k = 0;
  for (const auto& [node, weight] : acc) {
    r.nodes.push_back(node);
    r.weights[k++] = weight;
  }
  return r;
}

inline std::vector<Face> faces_of_dim(int dim) {
  if (dim == 1) return {Face::left, Face::right};
  return {Face::left, Face::right, Face::bottom, Face::top};
}

template <typename Tag>
inline void require_full_tagging(int dim, const std::map<Face, Tag>& tags, const char* what) {
  const auto faces = faces_of_dim(dim);
  if (tags.size() != faces.size())
    throw ConfigError(std::string(what) + ": every boundary face must carry exactly one tag");
  for (Face f : faces)
    if (!tags.count(f))
      throw ConfigError(std::string(what) + ": face '" + face_name(f) + "' is untagged");
}

}  // namespace detail

/// Macro grid for the bulk domain plus micro reference-cell grid, with all
/// boundary regions and quadrature weights precomputed. The micro node
/// layout is identical for every macro node.
struct TwoScaleGrid {
  StructuredGrid macro;
  StructuredGrid micro;

  BoundaryRegion gamma1, gamma2, gamma3;  // micro boundary
  BoundaryRegion gamma_d, gamma_n;        // macro boundary

  std::vector<int> free_nodes;       // macro nodes not on Gamma_D
  std::vector<int> dirichlet_nodes;  // sorted
  std::vector<int> free_index;       // macro node -> index into free_nodes, -1 on Gamma_D

  int n_macro() const { return macro.nodes(); }
  int n_micro() const { return micro.nodes(); }
  int n_free() const { return static_cast<int>(free_nodes.size()); }

  const BoundaryRegion& region(Region r) const {
    switch (r) {
      case Region::gamma1: return gamma1;
      case Region::gamma2: return gamma2;
      case Region::gamma3: return gamma3;
      case Region::gamma_d: return gamma_d;
      case Region::gamma_n: return gamma_n;
    }
    throw DomainError("unknown boundary region");
  }
};

inline TwoScaleGrid build_two_scale_grid(const MacroGridSpec& mspec, const MicroGridSpec& uspec) {
  TwoScaleGrid g;
  g.macro = detail::build_structured(mspec.dim, mspec.axes, "macro grid");
  g.micro = detail::build_structured(uspec.dim, uspec.axes, "micro grid");

  detail::require_full_tagging(mspec.dim, mspec.tags, "macro grid");
  detail::require_full_tagging(uspec.dim, uspec.tags, "micro grid");

  std::vector<Face> fd, fn, f1, f2, f3;
  for (const auto& [face, bc] : mspec.tags) (bc == MacroBc::dirichlet ? fd : fn).push_back(face);
  for (const auto& [face, tag] : uspec.tags) {
    if (tag == MicroTag::gamma1) f1.push_back(face);
    else if (tag == MicroTag::gamma2) f2.push_back(face);
    else f3.push_back(face);
  }
  g.gamma_d = detail::merge_faces(g.macro, fd);
  g.gamma_n = detail::merge_faces(g.macro, fn);
  g.gamma1 = detail::merge_faces(g.micro, f1);
  g.gamma2 = detail::merge_faces(g.micro, f2);
  g.gamma3 = detail::merge_faces(g.micro, f3);

  if (g.gamma_d.empty())
    throw ConfigError("macro grid: Gamma_D is empty (the Dirichlet data must act somewhere)");
  if (g.gamma1.empty()) throw ConfigError("micro grid: Gamma_1 is empty");
  if (g.gamma2.empty()) throw ConfigError("micro grid: Gamma_2 is empty");

  g.free_index.assign(static_cast<std::size_t>(g.n_macro()), -1);
  std::vector<bool> on_dirichlet(static_cast<std::size_t>(g.n_macro()), false);
  for (int k : g.gamma_d.nodes) on_dirichlet[static_cast<std::size_t>(k)] = true;
  for (int k = 0; k < g.n_macro(); ++k) {
    if (on_dirichlet[static_cast<std::size_t>(k)]) {
      g.dirichlet_nodes.push_back(k);
    } else {
      g.free_index[static_cast<std::size_t>(k)] = static_cast<int>(g.free_nodes.size());
      g.free_nodes.push_back(k);
    }
  }
  return g;
}

/// Sorted, duplicate-free node list of a tagged region with matching
/// quadrature weights.
inline const BoundaryRegion& boundary_nodes(const TwoScaleGrid& grid, Region region) {
  return grid.region(region);
}

/// Default desk-scale instance: 1D macro x 1D micro with Gamma_1 = {y=0},
/// Gamma_2 = {y=1}, Gamma_3 empty, Dirichlet data on the left macro end.
inline TwoScaleGrid default_1d_grid(int macro_cells, int micro_cells) {
  MacroGridSpec m;
  m.dim = 1;
  m.axes[0].cells = macro_cells;
  m.tags = {{Face::left, MacroBc::dirichlet}, {Face::right, MacroBc::neumann}};
  MicroGridSpec u;
  u.dim = 1;
  u.axes[0].cells = micro_cells;
  u.tags = {{Face::left, MicroTag::gamma1}, {Face::right, MicroTag::gamma2}};
  return build_two_scale_grid(m, u);
}

/// Canonical 2D x 2D instance: Gamma_1 = bottom, Gamma_2 = top, Gamma_3 =
/// sides on the micro cell; Dirichlet on the left macro edge.
inline TwoScaleGrid canonical_2d_grid(int macro_cells, int micro_cells) {
  MacroGridSpec m;
  m.dim = 2;
  m.axes[0].cells = macro_cells;
  m.axes[1].cells = macro_cells;
  m.tags = {{Face::left, MacroBc::dirichlet},
            {Face::right, MacroBc::neumann},
            {Face::bottom, MacroBc::neumann},
            {Face::top, MacroBc::neumann}};
  MicroGridSpec u;
  u.dim = 2;
  u.axes[0].cells = micro_cells;
  u.axes[1].cells = micro_cells;
  u.tags = {{Face::bottom, MicroTag::gamma1},
            {Face::top, MicroTag::gamma2},
            {Face::left, MicroTag::gamma3},
            {Face::right, MicroTag::gamma3}};
  return build_two_scale_grid(m, u);
}

}  // namespace tsrd
