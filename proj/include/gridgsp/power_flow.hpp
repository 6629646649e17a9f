// Copyright 2026 The Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <cmath>
#include <numbers>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/SparseLU>

#include "gridgsp/errors.hpp"
#include "gridgsp/grid_model.hpp"

namespace gridgsp {

// Voltage, current and power injection per node, all p.u.
struct OperatingPoint {
  Eigen::VectorXcd v;
  Eigen::VectorXcd i;
  Eigen::VectorXcd s;
};

struct PowerFlowOptions {
  double tolerance = 1e-10;           // on max |v_{k+1} - v_k|
  int max_iterations = 200;
  double residual_tolerance = 1e-8;   // on max |s(v) - s_requested|
};

inline Complex nominal_phasor(Phase p) {
  constexpr double kShift = 2.0 * std::numbers::pi / 3.0;
  switch (p) {
    case Phase::a:
      return {1.0, 0.0};
    case Phase::b:
      return std::polar(1.0, -kShift);
    case Phase::c:
      return std::polar(1.0, kShift);
  }
  return {1.0, 0.0};
}

// 1 p.u. with 120-degree separation on each present slack phase.
inline Eigen::VectorXcd nominal_slack_voltage(const GridCase& grid) {
  const Bus& slack = grid.buses()[grid.slack_bus()];
  Eigen::VectorXcd v(slack.phases.size());
  Index k = 0;
  for (Phase p : slack.phases.phases()) v(k++) = nominal_phasor(p);
  return v;
}

// s = v o conj(Y v).
inline Eigen::VectorXcd compute_injections(const Eigen::VectorXcd& v, const AdmittanceMatrix& y) {
  if (v.size() != y.dimension()) {
    throw DimensionError("compute_injections: voltage has " + std::to_string(v.size()) +
                         " entries, admittance is " + std::to_string(y.dimension()));
  }
  const Eigen::VectorXcd current = y.y * v;
  return v.cwiseProduct(current.conjugate());
}

// Z-bus fixed point on the slack-partitioned network:
//   v_L <- Y_LL^{-1} (conj(s_L / v_L) - Y_LS v_S),
// started from the no-load solution. Factorizes Y_LL once; solves are cheap.
class PowerFlowSolver {
 public:
  PowerFlowSolver(const GridCase& grid, const AdmittanceMatrix& y, PowerFlowOptions options = {})
      : y_(y), options_(options) {
    const Index n = y.dimension();
    for (Index k = 0; k < n; ++k) {
      (grid.is_slack_node(k) ? slack_ : load_).push_back(k);
    }
    const Eigen::MatrixXcd dense = y.dense();
    Eigen::SparseMatrix<Complex> yll(static_cast<Index>(load_.size()), static_cast<Index>(load_.size()));
    std::vector<Eigen::Triplet<Complex>> trip;
    y_ls_.resize(static_cast<Index>(load_.size()), static_cast<Index>(slack_.size()));
    for (std::size_t r = 0; r < load_.size(); ++r) {
      for (std::size_t c = 0; c < load_.size(); ++c) {
        const Complex val = dense(load_[r], load_[c]);
        if (val != Complex(0.0, 0.0)) trip.emplace_back(static_cast<Index>(r), static_cast<Index>(c), val);
      }
      for (std::size_t c = 0; c < slack_.size(); ++c) {
        y_ls_(static_cast<Index>(r), static_cast<Index>(c)) = dense(load_[r], slack_[c]);
      }
    }
    yll.setFromTriplets(trip.begin(), trip.end());
    yll.makeCompressed();
    if (!load_.empty()) {
      lu_.analyzePattern(yll);
      lu_.factorize(yll);
      if (lu_.info() != Eigen::Success) {
        throw SingularMatrixError(
            "power flow: reduced admittance Y_LL is singular (disconnected island without shunt path)");
      }
    }
  }

  const std::vector<Index>& load_nodes() const { return load_; }
  const std::vector<Index>& slack_nodes() const { return slack_; }

  // `injections` has one entry per node; slack entries are ignored.
  OperatingPoint solve(const Eigen::VectorXcd& injections, const Eigen::VectorXcd& slack_voltage) const {
    const Index n = y_.dimension();
    if (injections.size() != n) {
      throw DimensionError("solve_power_flow: expected " + std::to_string(n) + " injections");
    }
    if (slack_voltage.size() != static_cast<Index>(slack_.size())) {
      throw DimensionError("solve_power_flow: expected " + std::to_string(slack_.size()) + " slack voltages");
    }
    const Index nl = static_cast<Index>(load_.size());
    Eigen::VectorXcd s_load(nl);
    for (Index k = 0; k < nl; ++k) s_load(k) = injections(load_[k]);

    const Eigen::VectorXcd rhs_slack = y_ls_ * slack_voltage;
    Eigen::VectorXcd v_load = nl > 0 ? Eigen::VectorXcd(lu_.solve(-rhs_slack)) : Eigen::VectorXcd();

    int iter = 0;
    bool converged = nl == 0;
    while (!converged && iter < options_.max_iterations) {
      ++iter;
      const Eigen::VectorXcd current = s_load.cwiseQuotient(v_load).conjugate();
      Eigen::VectorXcd next = lu_.solve(current - rhs_slack);
      const double step = (next - v_load).cwiseAbs().maxCoeff();
      v_load = std::move(next);
      if (!v_load.allFinite() || v_load.cwiseAbs().minCoeff() < 1e-3) {
        throw ConvergenceError("power flow diverged (voltage collapse) at iteration " + std::to_string(iter),
                               iter);
      }
      converged = step < options_.tolerance;
    }
    if (!converged) {
      throw ConvergenceError("power flow did not converge in " + std::to_string(options_.max_iterations) +
                                 " iterations (infeasible or extreme injections)",
                             iter);
    }

    OperatingPoint op;
    op.v.resize(n);
    for (std::size_t k = 0; k < slack_.size(); ++k) op.v(slack_[k]) = slack_voltage(static_cast<Index>(k));
    for (Index k = 0; k < nl; ++k) op.v(load_[k]) = v_load(k);
    op.i = y_.y * op.v;
    op.s = op.v.cwiseProduct(op.i.conjugate());
    double residual = 0.0;
    for (Index k = 0; k < nl; ++k) residual = std::max(residual, std::abs(op.s(load_[k]) - s_load(k)));
    if (residual > options_.residual_tolerance) {
      throw ConvergenceError("power flow residual " + std::to_string(residual) + " exceeds tolerance", iter);
    }
    return op;
  }

 private:
  AdmittanceMatrix y_;
  PowerFlowOptions options_;
  std::vector<Index> slack_;
  std::vector<Index> load_;
  Eigen::MatrixXcd y_ls_;
  Eigen::SparseLU<Eigen::SparseMatrix<Complex>, Eigen::COLAMDOrdering<int>> lu_;
};

inline OperatingPoint solve_power_flow(const GridCase& grid, const Eigen::VectorXcd& injections,
                                       const Eigen::VectorXcd& slack_voltage, PowerFlowOptions options = {}) {
  const PowerFlowSolver solver(grid, assemble_admittance(grid), options);
  return solver.solve(injections, slack_voltage);
}

}  // namespace gridgsp
