#pragma once

#include <Eigen/Dense>

#include "tsrd/grid.hpp"
#include "tsrd/params.hpp"

namespace tsrd {

/// Discrete state of the four concentrations at time t.
/// w1, w2 : (micro node) x (macro node), one micro column per macro node
/// w3     : macro node
/// w4     : (Gamma_1 node, ordered as grid.gamma1.nodes) x (macro node)
struct State {
  Eigen::MatrixXd w1, w2;
  Eigen::VectorXd w3;
  Eigen::MatrixXd w4;
  double t = 0.0;

  static State zero(const TwoScaleGrid& g) {
    State s;
    s.w1 = Eigen::MatrixXd::Zero(g.n_micro(), g.n_macro());
    s.w2 = Eigen::MatrixXd::Zero(g.n_micro(), g.n_macro());
    s.w3 = Eigen::VectorXd::Zero(g.n_macro());
    s.w4 = Eigen::MatrixXd::Zero(g.gamma1.count(), g.n_macro());
    return s;
  }

  /// Henry-law equilibrium for boundary value w3d: w3 = w3d, w2 = h w3d,
  /// w1 = gamma h w3d, gypsum saturated at beta_max.
  static State henry_equilibrium(const TwoScaleGrid& g, const Params& p, double w3d) {
    State s = zero(g);
    s.w1.setConstant(p.gamma * p.henry * w3d);
    s.w2.setConstant(p.henry * w3d);
    s.w3.setConstant(w3d);
    s.w4.setConstant(p.beta_max());
    return s;
  }

  bool same_shape(const State& o) const {
    return w1.rows() == o.w1.rows() && w1.cols() == o.w1.cols() &&
           w2.rows() == o.w2.rows() && w2.cols() == o.w2.cols() &&
           w3.size() == o.w3.size() && w4.rows() == o.w4.rows() && w4.cols() == o.w4.cols();
  }

  bool matches(const TwoScaleGrid& g) const {
    return w1.rows() == g.n_micro() && w1.cols() == g.n_macro() &&
           w2.rows() == g.n_micro() && w2.cols() == g.n_macro() &&
           w3.size() == g.n_macro() && w4.rows() == g.gamma1.count() &&
           w4.cols() == g.n_macro();
  }
};

/// Sup norms of the four initial fields feed the maximum-principle bounds.
inline Bounds compute_bounds(const Params& params, const State& initial) {
  auto sup = [](const Eigen::MatrixXd& m) { return m.size() ? m.cwiseAbs().maxCoeff() : 0.0; };
  return compute_bounds(params, sup(initial.w1), sup(initial.w2),
                        initial.w3.size() ? initial.w3.cwiseAbs().maxCoeff() : 0.0, sup(initial.w4));
}

}  // namespace tsrd
