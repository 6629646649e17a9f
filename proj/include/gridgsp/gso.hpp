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

#include <algorithm>
#include <cmath>
#include <numbers>
#include <set>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "gridgsp/errors.hpp"
#include "gridgsp/grid_model.hpp"
#include "gridgsp/power_flow.hpp"

namespace gridgsp {

// Cosine and sine parts of the balanced phase-rotation outer product
// Gamma = Psi 11^T Psi^H, Psi = diag(1, e^{-j2pi/3}, e^{+j2pi/3}), restricted to
// the present phases. [Gamma]_kl = e^{-j2(k-l)pi/3}.
struct GammaMatrices {
  Eigen::MatrixXd gamma_c;
  Eigen::MatrixXd gamma_s;
};

inline GammaMatrices gamma_matrices(PhaseSet phases) {
  if (phases.empty()) throw ValidationError("gamma_matrices: empty phase set");
  const auto list = phases.phases();
  const Index p = static_cast<Index>(list.size());
  GammaMatrices g{Eigen::MatrixXd(p, p), Eigen::MatrixXd(p, p)};
  for (Index r = 0; r < p; ++r) {
    for (Index c = 0; c < p; ++c) {
      const Complex entry = nominal_phasor(list[r]) * std::conj(nominal_phasor(list[c]));
      // Exact values keep gamma_c symmetric bit-for-bit.
      const int d = (static_cast<int>(list[r]) - static_cast<int>(list[c]) + 3) % 3;
      g.gamma_c(r, c) = d == 0 ? 1.0 : -0.5;
      g.gamma_s(r, c) = d == 0 ? 0.0 : (entry.imag() > 0 ? 1.0 : -1.0) * std::sqrt(3.0) / 2.0;
    }
  }
  return g;
}

// Wraps to (-pi, pi].
inline double wrap_angle(double a) {
  constexpr double kTwoPi = 2.0 * std::numbers::pi;
  double w = std::remainder(a, kTwoPi);
  if (w <= -std::numbers::pi) w += kTwoPi;
  return w;
}

inline double phase_offset(Phase p) { return std::arg(nominal_phasor(p)); }

// phi_a = angle, phi_b = angle + 2pi/3, phi_c = angle - 2pi/3, wrapped.
inline Eigen::VectorXd recenter_phases(std::span<const NodeIndex> nodes, const Eigen::VectorXd& raw) {
  if (static_cast<Index>(nodes.size()) != raw.size()) {
    throw DimensionError("recenter_phases: node list and angle vector differ in length");
  }
  Eigen::VectorXd out(raw.size());
  for (Index k = 0; k < raw.size(); ++k) out(k) = wrap_angle(raw(k) - phase_offset(nodes[k].phase));
  return out;
}

// Real graph signal x = [phi; |v|] from complex voltages.
inline Eigen::VectorXd state_signal(std::span<const NodeIndex> nodes, const Eigen::VectorXcd& v) {
  const Index n = v.size();
  if (static_cast<Index>(nodes.size()) != n) throw DimensionError("state_signal: size mismatch");
  Eigen::VectorXd raw(n);
  Eigen::VectorXd x(2 * n);
  for (Index k = 0; k < n; ++k) {
    raw(k) = std::arg(v(k));
    x(n + k) = std::abs(v(k));
  }
  x.head(n) = recenter_phases(nodes, raw);
  return x;
}

// Inverse of state_signal: |v| e^{j(phi + nominal offset)}.
inline Eigen::VectorXcd complex_voltage(std::span<const NodeIndex> nodes, const Eigen::VectorXd& x) {
  const Index n = static_cast<Index>(nodes.size());
  if (x.size() != 2 * n) throw DimensionError("complex_voltage: signal must have 2N entries");
  Eigen::VectorXcd v(n);
  for (Index k = 0; k < n; ++k) v(k) = std::polar(x(n + k), x(k) + phase_offset(nodes[k].phase));
  return v;
}

// Real-valued physics GSO: [p; q] - [p_cst; q_cst] ~= blockdiag(b_hat, b_hat) [phi; |v|].
struct RealGso {
  std::vector<NodeIndex> nodes;
  Eigen::MatrixXd b_hat;
  Eigen::VectorXd p_cst;
  Eigen::VectorXd q_cst;
  Eigen::MatrixXd s_full;

  Index node_count() const { return b_hat.rows(); }
};

inline Eigen::MatrixXd block_diagonal2(const Eigen::MatrixXd& b) {
  const Index n = b.rows();
  Eigen::MatrixXd s = Eigen::MatrixXd::Zero(2 * n, 2 * n);
  s.topLeftCorner(n, n) = b;
  s.bottomRightCorner(n, n) = b;
  return s;
}

// Block assembly per line (m, n) with Bh = Gamma_c o Im(.):
//   [b_hat]_{n,n} += diag((Bh_s/2 + Bh_n + Bh_m) 1) - (Bh_s/2 + Bh_n)
//   [b_hat]_{n,m}  = -Bh_m
//   p_cst_n += diag(Gamma_s Im(Y_s)) / 2,  q_cst_n += -(Bh_s 1) / 2
// and symmetrically for the other end.
inline RealGso build_real_gso(const GridCase& grid) {
  const Index n = grid.node_count();
  RealGso g;
  g.nodes = grid.nodes();
  g.b_hat = Eigen::MatrixXd::Zero(n, n);
  g.p_cst = Eigen::VectorXd::Zero(n);
  g.q_cst = Eigen::VectorXd::Zero(n);

  for (const LineBranch& line : grid.lines()) {
    const GammaMatrices gamma = gamma_matrices(line.phases);
    const Eigen::MatrixXd bs = line.shunt.imag();
    const Eigen::MatrixXd bh_s = gamma.gamma_c.cwiseProduct(bs);
    const Eigen::MatrixXd bh_n = gamma.gamma_c.cwiseProduct(line.series_from.imag());
    const Eigen::MatrixXd bh_m = gamma.gamma_c.cwiseProduct(line.series_to.imag());
    const Eigen::MatrixXd self = 0.5 * bh_s + bh_n;
    const Eigen::VectorXd diag_terms = (self + bh_m).rowwise().sum();
    const Eigen::VectorXd p_const = 0.5 * (gamma.gamma_s * bs).diagonal();
    const Eigen::VectorXd q_const = -0.5 * bh_s.rowwise().sum();

    const auto ends = {std::pair{line.from, line.to}, std::pair{line.to, line.from}};
    for (const auto& [here, there] : ends) {
      const auto own = line_node_positions(grid, line, here);
      const auto other = line_node_positions(grid, line, there);
      const Index p = static_cast<Index>(own.size());
      for (Index r = 0; r < p; ++r) {
        g.b_hat(own[r], own[r]) += diag_terms(r);
        g.p_cst(own[r]) += p_const(r);
        g.q_cst(own[r]) += q_const(r);
        for (Index c = 0; c < p; ++c) {
          g.b_hat(own[r], own[c]) -= self(r, c);
          g.b_hat(own[r], other[c]) -= bh_m(r, c);
        }
      }
    }
  }
  g.s_full = block_diagonal2(g.b_hat);
  return g;
}

// s_full x; add (p_cst, q_cst) for the affine prediction of (p, q).
inline Eigen::VectorXd linearized_injections(const RealGso& gso, const Eigen::VectorXd& x) {
  if (x.size() != gso.s_full.rows()) {
    throw DimensionError("linearized_injections: signal has " + std::to_string(x.size()) + " entries, expected " +
                         std::to_string(gso.s_full.rows()));
  }
  return gso.s_full * x;
}

struct ReducedGso {
  std::vector<Index> retained;  // ascending positions in the original ordering
  Eigen::MatrixXd s_red;
};

namespace detail {

inline std::vector<Index> canonical_subset(std::span<const Index> subset, Index n, const char* who) {
  std::vector<Index> out(subset.begin(), subset.end());
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  for (Index k : out) {
    if (k < 0 || k >= n) throw DimensionError(std::string(who) + ": index " + std::to_string(k) + " out of range");
  }
  return out;
}

inline std::vector<Index> complement(const std::vector<Index>& subset, Index n) {
  std::vector<Index> out;
  std::size_t j = 0;
  for (Index k = 0; k < n; ++k) {
    if (j < subset.size() && subset[j] == k) {
      ++j;
    } else {
      out.push_back(k);
    }
  }
  return out;
}

inline Eigen::MatrixXd submatrix(const Eigen::MatrixXd& m, const std::vector<Index>& rows,
                                 const std::vector<Index>& cols) {
  return m(rows, cols);
}

// Connected components of the eliminated set that touch no retained node.
inline std::vector<std::vector<Index>> floating_components(const Eigen::MatrixXd& s, const std::vector<Index>& kept,
                                                           const std::vector<Index>& interior) {
  std::vector<int> comp(interior.size(), -1);
  std::vector<std::vector<Index>> out;
  int next = 0;
  for (std::size_t seed = 0; seed < interior.size(); ++seed) {
    if (comp[seed] >= 0) continue;
    std::vector<std::size_t> stack{seed};
    std::vector<Index> members;
    comp[seed] = next;
    bool anchored = false;
    while (!stack.empty()) {
      const std::size_t u = stack.back();
      stack.pop_back();
      members.push_back(interior[u]);
      for (Index k : kept) anchored = anchored || s(interior[u], k) != 0.0;
      for (std::size_t v = 0; v < interior.size(); ++v) {
        if (comp[v] < 0 && s(interior[u], interior[v]) != 0.0) {
          comp[v] = next;
          stack.push_back(v);
        }
      }
    }
    ++next;
    if (!anchored) out.push_back(std::move(members));
  }
  return out;
}

}  // namespace detail

// Schur complement S_MM - S_MMc S_McMc^{-1} S_MMc^T.
inline ReducedGso kron_reduce(const Eigen::MatrixXd& s, std::span<const Index> retained) {
  if (s.rows() != s.cols()) throw DimensionError("kron_reduce: matrix must be square");
  const Index n = s.rows();
  ReducedGso out;
  out.retained = detail::canonical_subset(retained, n, "kron_reduce");
  const auto interior = detail::complement(out.retained, n);
  if (interior.empty()) {
    out.s_red = s;
    return out;
  }
  const Eigen::MatrixXd s_mm = detail::submatrix(s, out.retained, out.retained);
  const Eigen::MatrixXd s_mc = detail::submatrix(s, out.retained, interior);
  const Eigen::MatrixXd s_cc = detail::submatrix(s, interior, interior);

  Eigen::FullPivLU<Eigen::MatrixXd> lu(s_cc);
  lu.setThreshold(1e-12);
  if (!lu.isInvertible()) {
    auto floating = detail::floating_components(s, out.retained, interior);
    std::string msg = "kron_reduce: eliminated block is singular";
    const auto& report = floating.empty() ? std::vector<std::vector<Index>>{interior} : floating;
    for (const auto& comp : report) {
      msg += "; floating component {";
      for (std::size_t k = 0; k < comp.size(); ++k) msg += (k ? "," : "") + std::to_string(comp[k]);
      msg += "}";
    }
    throw SingularMatrixError(msg);
  }
  Eigen::MatrixXd reduced = s_mm - s_mc * lu.solve(Eigen::MatrixXd(s_mc.transpose()));
  out.s_red = 0.5 * (reduced + reduced.transpose());
  return out;
}

// Kron reduction of b_hat onto `retained` node positions; s_full of the result
// is blockdiag(reduced b_hat, reduced b_hat) over [phi_M; |v|_M].
inline RealGso reduce_gso(const RealGso& gso, std::span<const Index> retained) {
  const ReducedGso red = kron_reduce(gso.b_hat, retained);
  RealGso out;
  for (Index k : red.retained) out.nodes.push_back(gso.nodes[k]);
  out.b_hat = red.s_red;
  out.p_cst = gso.p_cst(red.retained);
  out.q_cst = gso.q_cst(red.retained);
  out.s_full = block_diagonal2(out.b_hat);
  return out;
}

// Positions of a node subset in the signal [phi; |v|] of an N-node grid.
inline std::vector<Index> signal_positions(std::span<const Index> nodes, Index n) {
  std::vector<Index> out(nodes.begin(), nodes.end());
  for (Index k : nodes) out.push_back(n + k);
  return out;
}

}  // namespace gridgsp
