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

#include <cmath>
#include <complex>
#include <numbers>
#include <random>

#include <Eigen/Sparse>
#include <gtest/gtest.h>

#include "gridgsp/gsp.hpp"

namespace gridgsp {
namespace {

Eigen::MatrixXd random_symmetric(Eigen::Index n, std::mt19937_64& rng) {
  std::normal_distribution<double> g;
  Eigen::MatrixXd a(n, n);
  for (Eigen::Index c = 0; c < n; ++c) {
    for (Eigen::Index r = 0; r < n; ++r) a(r, c) = g(rng);
  }
  return 0.5 * (a + a.transpose());
}

Eigen::VectorXd random_vector(Eigen::Index n, std::mt19937_64& rng) {
  std::normal_distribution<double> g;
  Eigen::VectorXd v(n);
  for (Eigen::Index k = 0; k < n; ++k) v(k) = g(rng);
  return v;
}

PolynomialFilter random_filter(int order, std::mt19937_64& rng) {
  std::normal_distribution<double> g;
  PolynomialFilter f;
  for (int k = 0; k <= order; ++k) f.h.push_back(g(rng));
  return f;
}

TEST(Gft, TwoNodeLaplacian) {
  Eigen::Matrix2d s;
  s << 1, -1, -1, 1;
  const GftBasis b = gft(s);
  EXPECT_NEAR(b.lambda(0), 0.0, 1e-15);
  EXPECT_NEAR(b.lambda(1), 2.0, 1e-15);
  const double r = 1.0 / std::sqrt(2.0);
  EXPECT_NEAR(b.u(0, 0), r, 1e-15);
  EXPECT_NEAR(b.u(1, 0), r, 1e-15);
  EXPECT_NEAR(b.u(0, 1), r, 1e-15);   // largest-magnitude tie resolved at the first index
  EXPECT_NEAR(b.u(1, 1), -r, 1e-15);
}

TEST(Gft, IdentityHasUnitSpectrum) {
  const GftBasis b = gft(Eigen::MatrixXd::Identity(5, 5));
  EXPECT_LE((b.lambda.array() - 1.0).abs().maxCoeff(), 1e-15);
}

TEST(Gft, RandomSymmetricInvariants) {
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 20; ++trial) {
    const Eigen::MatrixXd s = random_symmetric(8, rng);
    const GftBasis b = gft(s);
    EXPECT_LE((b.u.transpose() * b.u - Eigen::MatrixXd::Identity(8, 8)).cwiseAbs().maxCoeff(), 1e-10);
    EXPECT_LE((b.u * b.lambda.asDiagonal() * b.u.transpose() - s).cwiseAbs().maxCoeff(), 1e-8 * s.cwiseAbs().maxCoeff());
    for (int k = 1; k < 8; ++k) EXPECT_LE(b.lambda(k - 1), b.lambda(k));
    for (int c = 0; c < 8; ++c) {
      Eigen::Index arg = 0;
      b.u.col(c).cwiseAbs().maxCoeff(&arg);
      EXPECT_GT(b.u(arg, c), 0.0);
    }
    const Eigen::VectorXd x = random_vector(8, rng);
    EXPECT_NEAR(x.norm(), b.forward(x).norm(), 1e-10);
    EXPECT_LE((b.inverse(b.forward(x)) - x).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(Gft, RejectsNonSymmetric) {
  Eigen::Matrix2d s;
  s << 1, 2, 0, 1;
  EXPECT_THROW(gft(s), ValidationError);
}

TEST(ApplyFilter, IdentityAndShift) {
  std::mt19937_64 rng(2);
  const Eigen::MatrixXd s = random_symmetric(6, rng);
  const Eigen::VectorXd x = random_vector(6, rng);
  EXPECT_EQ(apply_filter(PolynomialFilter{{1.0}}, s, x), x);
  EXPECT_LE((apply_filter(PolynomialFilter{{0.0, 1.0}}, s, x) - s * x).cwiseAbs().maxCoeff(), 1e-14);
  EXPECT_THROW(apply_filter(PolynomialFilter{{1.0}}, s, Eigen::VectorXd::Zero(3)), DimensionError);
}

TEST(ApplyFilter, SparseOperatorMatchesDense) {
  std::mt19937_64 rng(3);
  const Eigen::MatrixXd s = random_symmetric(7, rng);
  const Eigen::SparseMatrix<double> sp = s.sparseView();
  const PolynomialFilter f = random_filter(4, rng);
  const Eigen::VectorXd x = random_vector(7, rng);
  EXPECT_LE((apply_filter(f, sp, x) - apply_filter(f, s, x)).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(ApplyFilter, SpectralDomainEquality) {
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 100; ++trial) {
    const Eigen::MatrixXd s = random_symmetric(6, rng) / 3.0;
    const GftBasis b = gft(s);
    const PolynomialFilter f = random_filter(1 + trial % 5, rng);
    const Eigen::VectorXd x = random_vector(6, rng);
    Eigen::VectorXd expect = b.forward(x);
    for (Eigen::Index i = 0; i < expect.size(); ++i) expect(i) *= f.response(b.lambda(i));
    EXPECT_LE((b.forward(apply_filter(f, s, x)) - expect).cwiseAbs().maxCoeff(), 1e-9);
  }
}

TEST(ApplyFilter, ShiftInvarianceAndLinearity) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 100; ++trial) {
    const Eigen::MatrixXd s = random_symmetric(6, rng) / 3.0;
    const PolynomialFilter f = random_filter(1 + trial % 5, rng);
    Eigen::MatrixXd h(6, 6);
    for (int c = 0; c < 6; ++c) h.col(c) = apply_filter(f, s, Eigen::VectorXd::Unit(6, c));
    EXPECT_LE((h * s - s * h).cwiseAbs().maxCoeff(), 1e-9);

    const Eigen::VectorXd x = random_vector(6, rng);
    const Eigen::VectorXd y = random_vector(6, rng);
    const double a = 0.7;
    const double b = -1.3;
    const Eigen::VectorXd lhs = apply_filter(f, s, a * x + b * y);
    const Eigen::VectorXd rhs = a * apply_filter(f, s, x) + b * apply_filter(f, s, y);
    EXPECT_LE((lhs - rhs).cwiseAbs().maxCoeff(), 1e-10);
  }
}

GraphSignalWindow random_window(Eigen::Index n, int t, std::mt19937_64& rng) {
  GraphSignalWindow w;
  for (int k = 0; k < t; ++k) {
    w.frames.push_back(random_vector(n, rng));
    w.timestamps.push_back(k);
  }
  return w;
}

TEST(ApplyStFilter, DeltaCoefficientReturnsLatestFrame) {
  std::mt19937_64 rng(6);
  const Eigen::MatrixXd s = random_symmetric(5, rng);
  const GraphSignalWindow w = random_window(5, 4, rng);
  SpatioTemporalFilter f{Eigen::MatrixXd::Zero(3, 4)};
  f.h(0, 0) = 1.0;
  EXPECT_EQ(apply_st_filter(f, s, w), w.frames.back());
}

TEST(ApplyStFilter, ConstantWindowCollapsesTemporalSum) {
  std::mt19937_64 rng(7);
  const Eigen::MatrixXd s = random_symmetric(5, rng) / 3.0;
  const Eigen::VectorXd x = random_vector(5, rng);
  GraphSignalWindow w;
  for (int k = 0; k < 4; ++k) w.frames.push_back(x);
  SpatioTemporalFilter f{Eigen::MatrixXd(3, 4)};
  std::normal_distribution<double> g;
  for (int k = 0; k < 3; ++k) {
    for (int t = 0; t < 4; ++t) f.h(k, t) = g(rng);
  }
  PolynomialFilter collapsed;
  for (int k = 0; k < 3; ++k) collapsed.h.push_back(f.h.row(k).sum());
  EXPECT_LE((apply_st_filter(f, s, w) - apply_filter(collapsed, s, x)).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(ApplyStFilter, ShortWindowIsRejected) {
  std::mt19937_64 rng(8);
  const GraphSignalWindow w = random_window(3, 2, rng);
  EXPECT_THROW(apply_st_filter(SpatioTemporalFilter{Eigen::MatrixXd::Ones(2, 3)}, Eigen::MatrixXd::Identity(3, 3), w),
               DimensionError);
}

// Frequency-domain oracle: per graph frequency lambda_i, multiply the
// zero-padded z-transform of the window sequence by
// H(lambda_i, z) = sum_k sum_tau h(k, tau) lambda_i^k z^{-tau}
// on the unit circle and read the most recent sample of the inverse transform.
TEST(ApplyStFilter, JointTransferFunctionOracle) {
  using C = std::complex<double>;
  std::mt19937_64 rng(9);
  std::normal_distribution<double> g;
  for (int trial = 0; trial < 100; ++trial) {
    const int n = 5;
    const int t_len = 1 + trial % 6;
    const int order = trial % 4;
    const Eigen::MatrixXd s = random_symmetric(n, rng) / 3.0;
    const GraphSignalWindow w = random_window(n, t_len + 2, rng);
    SpatioTemporalFilter f{Eigen::MatrixXd(order + 1, t_len)};
    for (int k = 0; k <= order; ++k) {
      for (int t = 0; t < t_len; ++t) f.h(k, t) = g(rng);
    }
    const GftBasis b = gft(s);
    const int len = static_cast<int>(w.length());
    const int m_pts = 2 * len;
    Eigen::VectorXd expect(n);
    for (int i = 0; i < n; ++i) {
      C acc(0.0, 0.0);
      for (int m = 0; m < m_pts; ++m) {
        const C z = std::polar(1.0, 2.0 * std::numbers::pi * m / m_pts);
        C x_z(0.0, 0.0);
        for (int q = 0; q < len; ++q) x_z += b.forward(w.frames[static_cast<std::size_t>(q)])(i) * std::pow(z, -q);
        C h_z(0.0, 0.0);
        for (int k = 0; k <= order; ++k) {
          for (int t = 0; t < t_len; ++t) h_z += f.h(k, t) * std::pow(b.lambda(i), k) * std::pow(z, -t);
        }
        acc += h_z * x_z * std::pow(z, len - 1);
      }
      expect(i) = (acc / static_cast<double>(m_pts)).real();
    }
    EXPECT_LE((b.forward(apply_st_filter(f, s, w)) - expect).cwiseAbs().maxCoeff(), 1e-9) << "trial " << trial;
  }
}

}  // namespace
}  // namespace gridgsp
