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
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>

#include "gridgsp/errors.hpp"

namespace gridgsp {

// Eigenbasis of a symmetric shift operator, eigenvalues ascending.
struct GftBasis {
  Eigen::MatrixXd u;
  Eigen::VectorXd lambda;

  Eigen::VectorXd forward(const Eigen::VectorXd& x) const { return u.transpose() * x; }
  Eigen::VectorXd inverse(const Eigen::VectorXd& xt) const { return u * xt; }
  double lambda_max() const { return lambda.cwiseAbs().maxCoeff(); }
};

inline GftBasis gft(const Eigen::MatrixXd& s, double symmetry_tol = 1e-10) {
  if (s.rows() != s.cols()) throw DimensionError("gft: matrix must be square");
  const double asym = s.size() ? (s - s.transpose()).cwiseAbs().maxCoeff() : 0.0;
  if (asym > symmetry_tol) {
    throw ValidationError("gft: matrix is not symmetric (max asymmetry " + std::to_string(asym) + ")");
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (s + s.transpose()));
  if (es.info() != Eigen::Success) throw NumericalError("gft: eigensolver failed");
  GftBasis basis{es.eigenvectors(), es.eigenvalues()};
  // Sign convention: the largest-magnitude entry of each eigenvector is
  // positive, first index on ties.
  for (Eigen::Index c = 0; c < basis.u.cols(); ++c) {
    Eigen::Index arg = 0;
    double best = -1.0;
    for (Eigen::Index r = 0; r < basis.u.rows(); ++r) {
      const double a = std::abs(basis.u(r, c));
      if (a > best + 1e-12) {
        best = a;
        arg = r;
      }
    }
    if (basis.u(arg, c) < 0.0) basis.u.col(c) *= -1.0;
  }
  return basis;
}

// Polynomial graph filter H(S) = sum_k h_k S^k.
struct PolynomialFilter {
  std::vector<double> h;

  int order() const { return static_cast<int>(h.size()) - 1; }

  // Frequency response h(lambda) = sum_k h_k lambda^k.
  double response(double lambda) const {
    double acc = 0.0;
    for (auto it = h.rbegin(); it != h.rend(); ++it) acc = acc * lambda + *it;
    return acc;
  }
};

// Works with dense or sparse S; only matrix-vector products are formed.
template <typename Matrix>
Eigen::VectorXd apply_filter(const PolynomialFilter& f, const Matrix& s, const Eigen::VectorXd& x) {
  if (s.rows() != s.cols() || s.cols() != x.size()) {
    throw DimensionError("apply_filter: operator is " + std::to_string(s.rows()) + "x" + std::to_string(s.cols()) +
                         ", signal has " + std::to_string(x.size()) + " entries");
  }
  if (f.h.empty()) return Eigen::VectorXd::Zero(x.size());
  Eigen::VectorXd acc = f.h.back() * x;
  for (int k = f.order() - 1; k >= 0; --k) {
    Eigen::VectorXd shifted = s * acc;
    acc = shifted + f.h[static_cast<std::size_t>(k)] * x;
  }
  return acc;
}

// T consecutive graph signals. frames.back() is the most recent x_t, so
// lag(tau) returns x_{t-tau}.
struct GraphSignalWindow {
  std::vector<Eigen::VectorXd> frames;
  std::vector<long> timestamps;

  std::size_t length() const { return frames.size(); }
  const Eigen::VectorXd& lag(std::size_t tau) const { return frames[frames.size() - 1 - tau]; }
  Eigen::Index dimension() const { return frames.empty() ? 0 : frames.front().size(); }
};

// Coefficients h(k, tau), k = 0..K graph order, tau = 0..T-1 temporal lag.
struct SpatioTemporalFilter {
  Eigen::MatrixXd h;

  int graph_order() const { return static_cast<int>(h.rows()) - 1; }
  int temporal_length() const { return static_cast<int>(h.cols()); }
};

// w_t = sum_k sum_tau h(k, tau) S^k x_{t-tau}, evaluated per k as
// S^k (sum_tau h(k, tau) x_{t-tau}) with Horner accumulation over k.
template <typename Matrix>
Eigen::VectorXd apply_st_filter(const SpatioTemporalFilter& f, const Matrix& s, const GraphSignalWindow& window) {
  const int t_len = f.temporal_length();
  if (t_len < 1 || f.h.rows() < 1) throw ValidationError("apply_st_filter: empty coefficient table");
  if (window.length() < static_cast<std::size_t>(t_len)) {
    throw DimensionError("apply_st_filter: window has " + std::to_string(window.length()) + " frames, filter needs " +
                         std::to_string(t_len));
  }
  const Eigen::Index n = window.dimension();
  if (s.rows() != n || s.cols() != n) throw DimensionError("apply_st_filter: operator/signal size mismatch");
  auto temporal = [&](int k) {
    Eigen::VectorXd u = Eigen::VectorXd::Zero(n);
    for (int tau = 0; tau < t_len; ++tau) u += f.h(k, tau) * window.lag(static_cast<std::size_t>(tau));
    return u;
  };
  Eigen::VectorXd acc = temporal(f.graph_order());
  for (int k = f.graph_order() - 1; k >= 0; --k) {
    Eigen::VectorXd shifted = s * acc;
    acc = shifted + temporal(k);
  }
  return acc;
}

}  // namespace gridgsp
