#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "tsrd/diagnostics.hpp"
#include "tsrd/grid.hpp"
#include "tsrd/state.hpp"

namespace tsrd {

namespace detail {

/// Shortest round-trippable decimal representation; fixed format makes the
/// output byte-deterministic across runs.
inline std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace detail

/// Columnar text snapshot: coordinates plus field values, one section per
/// field family.
inline void write_snapshot(const std::string& path, const State& s, const TwoScaleGrid& grid) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write snapshot '" + path + "'");
  const auto& ma = grid.macro;
  const auto& mi = grid.micro;
  out << "# t = " << detail::fmt(s.t) << "\n";
  out << "# columns: x0 x1 y0 y1 w1 w2\n";
  for (int i = 0; i < grid.n_macro(); ++i) {
    const auto x = ma.coord(i);
    for (int j = 0; j < grid.n_micro(); ++j) {
      const auto y = mi.coord(j);
      out << detail::fmt(x[0]) << ' ' << detail::fmt(x[1]) << ' ' << detail::fmt(y[0]) << ' '
          << detail::fmt(y[1]) << ' ' << detail::fmt(s.w1(j, i)) << ' '
          << detail::fmt(s.w2(j, i)) << "\n";
    }
  }
  out << "\n# columns: x0 x1 w3\n";
  for (int i = 0; i < grid.n_macro(); ++i) {
    const auto x = ma.coord(i);
    out << detail::fmt(x[0]) << ' ' << detail::fmt(x[1]) << ' ' << detail::fmt(s.w3[i]) << "\n";
  }
  out << "\n# columns: x0 x1 y0 y1 w4\n";
  for (int i = 0; i < grid.n_macro(); ++i) {
    const auto x = ma.coord(i);
    for (int j = 0; j < grid.gamma1.count(); ++j) {
      const auto y = mi.coord(grid.gamma1.nodes[static_cast<std::size_t>(j)]);
      out << detail::fmt(x[0]) << ' ' << detail::fmt(x[1]) << ' ' << detail::fmt(y[0]) << ' '
          << detail::fmt(y[1]) << ' ' << detail::fmt(s.w4(j, i)) << "\n";
    }
  }
}

inline void write_series_csv(const std::string& path, const std::vector<DiagnosticsRecord>& recs) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write series '" + path + "'");
  out << "step,t,energy,h_norm_sq,dissipation,dissipation_integral,i1,i2,i3,i4,"
         "mass_total,mass_defect,flux_integral,bound_defect,w4_total,steady_rate\n";
  for (const auto& r : recs) {
    out << r.step << ',' << detail::fmt(r.t) << ',' << detail::fmt(r.energy) << ','
        << detail::fmt(r.h_norm_sq) << ',' << detail::fmt(r.dissipation) << ','
        << detail::fmt(r.dissipation_integral) << ',' << detail::fmt(r.i1) << ','
        << detail::fmt(r.i2) << ',' << detail::fmt(r.i3) << ',' << detail::fmt(r.i4) << ','
        << detail::fmt(r.mass_total) << ',' << detail::fmt(r.mass_defect) << ','
        << detail::fmt(r.flux_integral) << ',' << detail::fmt(r.bound_defect) << ','
        << detail::fmt(r.w4_total) << ',' << detail::fmt(r.steady_rate) << "\n";
  }
}

inline void write_newton_trace(const std::string& path,
                               const std::vector<std::pair<int, double>>& trace) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write trace '" + path + "'");
  out << "iteration,residual\n";
  for (const auto& [it, res] : trace) out << it << ',' << detail::fmt(res) << "\n";
}

inline void write_json(const std::string& path, const nlohmann::json& j) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write '" + path + "'");
  out << j.dump(2) << "\n";
}

inline std::string snapshot_name(std::size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "snapshot_%06zu.txt", index);
  return buf;
}

}  // namespace tsrd
