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
#include <limits>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/SVD>

#include "gridgsp/errors.hpp"
#include "gridgsp/grid_model.hpp"
#include "gridgsp/gso.hpp"
#include "gridgsp/gsp.hpp"

namespace gridgsp {

struct PlacementResult {
  std::vector<Index> selected;  // in greedy selection order
  double sigma_min = 0.0;
};

// Smallest of the min(rows, cols) singular values.
inline double smallest_singular_value(const Eigen::MatrixXd& a) {
  if (a.rows() == 0 || a.cols() == 0) return 0.0;
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(a);
  return svd.singularValues().minCoeff();
}

// sigma_k of F_M U_K: zero when fewer than k rows are sampled.
inline double sampling_sigma_min(const GftBasis& basis, int k_freqs, std::span<const Index> rows) {
  if (static_cast<int>(rows.size()) < k_freqs) return 0.0;
  const std::vector<Index> r(rows.begin(), rows.end());
  return smallest_singular_value(basis.u(r, Eigen::seqN(0, k_freqs)));
}

// Greedy forward selection maximizing the smallest singular value of the
// sampled low-frequency basis U_K. While fewer than k nodes are chosen the
// score is the smallest of the available singular values.
inline PlacementResult place_pmus(const GftBasis& basis, int k_freqs, int m) {
  const Index n = basis.u.rows();
  if (k_freqs < 1 || k_freqs > n) {
    throw ValidationError("place_pmus: k_freqs must be in [1, " + std::to_string(n) + "]");
  }
  if (m < 0 || m > n) throw ValidationError("place_pmus: cannot place " + std::to_string(m) + " PMUs on " +
                                            std::to_string(n) + " nodes");
  const Eigen::MatrixXd uk = basis.u.leftCols(k_freqs);
  PlacementResult out;
  std::vector<bool> used(static_cast<std::size_t>(n), false);
  Eigen::MatrixXd rows(0, k_freqs);
  for (int step = 0; step < m; ++step) {
    Index best = -1;
    double best_score = -1.0;
    Eigen::MatrixXd grown(rows.rows() + 1, k_freqs);
    grown.topRows(rows.rows()) = rows;
    for (Index cand = 0; cand < n; ++cand) {
      if (used[static_cast<std::size_t>(cand)]) continue;
      grown.bottomRows(1) = uk.row(cand);
      const double score = smallest_singular_value(grown);
      if (score > best_score * (1.0 + 1e-12) + 1e-15) {
        best_score = score;
        best = cand;
      }
    }
    used[static_cast<std::size_t>(best)] = true;
    out.selected.push_back(best);
    rows.conservativeResize(rows.rows() + 1, Eigen::NoChange);
    rows.bottomRows(1) = uk.row(best);
  }
  out.sigma_min = sampling_sigma_min(basis, k_freqs, out.selected);
  return out;
}

// z = [i_M; v_M] = H [v_M; v_U] with H = [[Y_MM, Y_MU], [I, 0]].
struct MeasurementModel {
  Eigen::MatrixXcd h;
  std::vector<Index> observed;  // ascending node positions
  std::vector<Index> hidden;    // ascending node positions

  Index node_count() const { return static_cast<Index>(observed.size() + hidden.size()); }
  // Node position of column c of H.
  Index column_node(Index c) const {
    const auto m = static_cast<Index>(observed.size());
    return c < m ? observed[static_cast<std::size_t>(c)] : hidden[static_cast<std::size_t>(c - m)];
  }
  std::vector<Index> column_order() const {
    std::vector<Index> order = observed;
    order.insert(order.end(), hidden.begin(), hidden.end());
    return order;
  }
};

inline MeasurementModel build_measurement_model(const AdmittanceMatrix& y, std::span<const Index> observed) {
  const Index n = y.dimension();
  if (observed.empty()) throw ValidationError("build_measurement_model: observed set is empty");
  MeasurementModel model;
  model.observed.assign(observed.begin(), observed.end());
  std::sort(model.observed.begin(), model.observed.end());
  model.observed.erase(std::unique(model.observed.begin(), model.observed.end()), model.observed.end());
  for (Index k : model.observed) {
    if (k < 0 || k >= n) throw ValidationError("build_measurement_model: node position " + std::to_string(k) +
                                               " is not in the graph");
  }
  for (Index k = 0, j = 0; k < n; ++k) {
    if (j < static_cast<Index>(model.observed.size()) && model.observed[static_cast<std::size_t>(j)] == k) {
      ++j;
    } else {
      model.hidden.push_back(k);
    }
  }
  const Index m = static_cast<Index>(model.observed.size());
  const Eigen::MatrixXcd dense = y.dense();
  model.h = Eigen::MatrixXcd::Zero(2 * m, n);
  model.h.topRows(m) = dense(model.observed, model.column_order());
  model.h.bottomLeftCorner(m, m).setIdentity();
  return model;
}

inline MeasurementModel build_measurement_model(const AdmittanceMatrix& y, const std::vector<NodeIndex>& observed) {
  std::vector<Index> pos;
  for (const NodeIndex& node : observed) {
    const auto it = std::find(y.nodes.begin(), y.nodes.end(), node);
    if (it == y.nodes.end()) {
      throw ValidationError("build_measurement_model: node " + node.label() + " is not in the graph");
    }
    pos.push_back(static_cast<Index>(it - y.nodes.begin()));
  }
  return build_measurement_model(y, std::span<const Index>(pos));
}

struct MeasurementSample {
  Eigen::VectorXcd z;
  double noise_sigma = 0.0;
};

// Noise is circular complex Gaussian with E|e|^2 = sigma^2 per channel.
inline MeasurementSample measure(const MeasurementModel& model, const Eigen::VectorXcd& v_true, double sigma,
                                 std::mt19937_64& rng) {
  if (v_true.size() != model.node_count()) throw DimensionError("measure: voltage vector size mismatch");
  const std::vector<Index> order = model.column_order();
  MeasurementSample out{model.h * v_true(order), sigma};
  if (sigma > 0.0) {
    std::normal_distribution<double> gauss(0.0, sigma / std::sqrt(2.0));
    for (Index k = 0; k < out.z.size(); ++k) out.z(k) += Complex(gauss(rng), gauss(rng));
  }
  return out;
}

// b_hat acting on re-centered phasors: R = D^H b_hat D with
// D = diag(conj(nominal phasor)). x^H R x penalizes differences of the
// re-centered voltages across lines, so a balanced flat profile costs nothing.
inline Eigen::MatrixXcd phase_aligned_regularizer(const RealGso& gso) {
  Eigen::VectorXcd d(gso.node_count());
  for (Index k = 0; k < d.size(); ++k) d(k) = std::conj(nominal_phasor(gso.nodes[static_cast<std::size_t>(k)].phase));
  return d.conjugate().asDiagonal() * gso.b_hat.cast<Complex>() * d.asDiagonal();
}

struct StateEstimate {
  Eigen::VectorXcd v;  // node order
  Index rank = 0;
  bool rank_deficient = false;
};

// Precomputed (H^H H + mu1 R)^+ H^H for repeated recovery under one model.
// `reg` is indexed in node order and is permuted to H's column order.
class StateRecovery {
 public:
  StateRecovery(const MeasurementModel& model, const Eigen::MatrixXd& reg, double mu1)
      : StateRecovery(model, Eigen::MatrixXcd(reg.cast<Complex>()), mu1) {}

  StateRecovery(const MeasurementModel& model, const Eigen::MatrixXcd& reg, double mu1) : model_(model), mu1_(mu1) {
    if (!(mu1 >= 0.0)) throw ValidationError("recover_state: mu1 must be nonnegative");
    const Index n = model.node_count();
    if (reg.rows() != n || reg.cols() != n) throw DimensionError("recover_state: regularizer size mismatch");
    order_ = model.column_order();
    reg_perm_ = reg(order_, order_);
    const Eigen::MatrixXcd normal = model.h.adjoint() * model.h + mu1 * reg_perm_;
    Eigen::JacobiSVD<Eigen::MatrixXcd> svd(normal, Eigen::ComputeFullU | Eigen::ComputeFullV);
    const Eigen::VectorXd sv = svd.singularValues();
    const double tol = static_cast<double>(n) * std::numeric_limits<double>::epsilon() * (sv.size() ? sv(0) : 0.0);
    Eigen::VectorXd inv = Eigen::VectorXd::Zero(sv.size());
    for (Index k = 0; k < sv.size(); ++k) {
      if (sv(k) > tol) {
        inv(k) = 1.0 / sv(k);
        ++rank_;
      }
    }
    gain_ = svd.matrixV() * inv.asDiagonal() * svd.matrixU().adjoint() * model.h.adjoint();
  }

  StateEstimate recover(const MeasurementSample& sample) const {
    if (sample.z.size() != model_.h.rows()) throw DimensionError("recover_state: measurement length mismatch");
    const Eigen::VectorXcd x = gain_ * sample.z;
    StateEstimate est;
    est.v.resize(x.size());
    for (Index c = 0; c < x.size(); ++c) est.v(order_[static_cast<std::size_t>(c)]) = x(c);
    est.rank = rank_;
    est.rank_deficient = rank_ < x.size();
    return est;
  }

  // ||z - H x||^2 + mu1 x^H R x with x in node order.
  double objective(const MeasurementSample& sample, const Eigen::VectorXcd& v) const {
    const Eigen::VectorXcd x = v(order_);
    const Complex quad = x.dot(reg_perm_ * x);
    return (sample.z - model_.h * x).squaredNorm() + mu1_ * quad.real();
  }

  const MeasurementModel& model() const { return model_; }
  Index rank() const { return rank_; }

 private:
  MeasurementModel model_;
  double mu1_;
  std::vector<Index> order_;
  Eigen::MatrixXcd reg_perm_;
  Eigen::MatrixXcd gain_;
  Index rank_ = 0;
};

inline StateEstimate recover_state(const MeasurementSample& sample, const MeasurementModel& model,
                                   const Eigen::MatrixXcd& reg, double mu1) {
  return StateRecovery(model, reg, mu1).recover(sample);
}

}  // namespace gridgsp
