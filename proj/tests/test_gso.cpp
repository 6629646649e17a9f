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
#include <fstream>
#include <numbers>
#include <random>
#include <vector>

#include <gtest/gtest.h>
#include "json.hpp"

#include "gridgsp/gso.hpp"

namespace gridgsp {
namespace {

using C = std::complex<double>;

std::string case_path(const std::string& name) { return std::string(GRIDGSP_DATA_DIR) + "/cases/" + name; }

nlohmann::json read_json(const std::string& name) {
  std::ifstream in(case_path(name));
  return nlohmann::json::parse(in);
}

Eigen::VectorXcd flat_voltage(const GridCase& g) {
  Eigen::VectorXcd v(g.node_count());
  for (Index k = 0; k < v.size(); ++k) v(k) = nominal_phasor(g.nodes()[k].phase);
  return v;
}

LineBranch single_phase_line(const std::string& f, const std::string& t, double b) {
  LineBranch l;
  l.from = f;
  l.to = t;
  l.phases = PhaseSet::parse("a");
  l.series_from = Eigen::MatrixXcd::Constant(1, 1, C(0.0, -b));
  l.series_to = -l.series_from;
  l.shunt = Eigen::MatrixXcd::Zero(1, 1);
  return l;
}

// Random connected single-phase lossless network: a spanning tree plus chords.
GridCase random_single_phase(int n, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> w(1.0, 20.0);
  std::vector<Bus> buses;
  for (int k = 0; k < n; ++k) {
    buses.push_back(Bus{std::to_string(k), PhaseSet::parse("a"), k == 0 ? BusKind::slack : BusKind::load, {}});
  }
  std::vector<LineBranch> lines;
  for (int k = 1; k < n; ++k) {
    std::uniform_int_distribution<int> parent(0, k - 1);
    lines.push_back(single_phase_line(std::to_string(parent(rng)), std::to_string(k), w(rng)));
  }
  lines.push_back(single_phase_line("0", std::to_string(n - 1), w(rng)));
  return GridCase("rand", buses, lines, {}, 1.0, 1.0);
}

TEST(GammaMatrices, ThreePhaseCosinePart) {
  const GammaMatrices g = gamma_matrices(PhaseSet::parse("abc"));
  Eigen::Matrix3d expect;
  expect << 1, -0.5, -0.5, -0.5, 1, -0.5, -0.5, -0.5, 1;
  EXPECT_EQ(g.gamma_c, Eigen::MatrixXd(expect));
}

TEST(GammaMatrices, ThreePhaseSinePartIsSkew) {
  const GammaMatrices g = gamma_matrices(PhaseSet::parse("abc"));
  EXPECT_EQ((g.gamma_s + g.gamma_s.transpose()).cwiseAbs().maxCoeff(), 0.0);
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 3; ++c) {
      EXPECT_DOUBLE_EQ(std::abs(g.gamma_s(r, c)), r == c ? 0.0 : std::sqrt(3.0) / 2.0);
    }
  }
}

TEST(GammaMatrices, MatchesPsiOuterProduct) {
  // Psi 1 1^T Psi^H with Psi = diag(1, e^{-j2pi/3}, e^{j2pi/3}).
  const double a = 2.0 * std::numbers::pi / 3.0;
  const Eigen::Vector3cd psi(C(1, 0), std::polar(1.0, -a), std::polar(1.0, a));
  const Eigen::Matrix3cd gamma = psi * psi.adjoint();
  for (const char* ph : {"abc", "ab", "ac", "bc", "a", "b", "c"}) {
    const PhaseSet set = PhaseSet::parse(ph);
    const GammaMatrices g = gamma_matrices(set);
    const auto list = set.phases();
    for (std::size_t r = 0; r < list.size(); ++r) {
      for (std::size_t c = 0; c < list.size(); ++c) {
        const C ref = gamma(static_cast<int>(list[r]), static_cast<int>(list[c]));
        EXPECT_NEAR(g.gamma_c(r, c), ref.real(), 1e-15) << ph;
        EXPECT_NEAR(g.gamma_s(r, c), ref.imag(), 1e-15) << ph;
      }
    }
    EXPECT_EQ((g.gamma_c - g.gamma_c.transpose()).cwiseAbs().maxCoeff(), 0.0);
  }
}

TEST(GammaMatrices, SinglePhaseAndEmpty) {
  const GammaMatrices g = gamma_matrices(PhaseSet::parse("a"));
  EXPECT_EQ(g.gamma_c(0, 0), 1.0);
  EXPECT_EQ(g.gamma_s(0, 0), 0.0);
  EXPECT_THROW(gamma_matrices(PhaseSet()), ValidationError);
}

TEST(RecenterPhases, Examples) {
  const double a = 2.0 * std::numbers::pi / 3.0;
  const std::vector<NodeIndex> abc{{"1", Phase::a}, {"1", Phase::b}, {"1", Phase::c}};
  Eigen::Vector3d raw(0.0, -a, a);
  EXPECT_LE(recenter_phases(abc, raw).cwiseAbs().maxCoeff(), 1e-15);

  const std::vector<NodeIndex> one{{"1", Phase::a}};
  EXPECT_DOUBLE_EQ(recenter_phases(one, Eigen::VectorXd::Constant(1, 0.01))(0), 0.01);

  const std::vector<NodeIndex> b{{"1", Phase::b}};
  EXPECT_NEAR(recenter_phases(b, Eigen::VectorXd::Constant(1, -a + 0.02))(0), 0.02, 1e-15);

  // Wrapping keeps the result in (-pi, pi].
  const std::vector<NodeIndex> c{{"1", Phase::c}};
  const double w = recenter_phases(c, Eigen::VectorXd::Constant(1, -std::numbers::pi + 0.1))(0);
  EXPECT_GT(w, -std::numbers::pi);
  EXPECT_LE(w, std::numbers::pi);
}

TEST(StateSignal, RoundTripsComplexVoltage) {
  const GridCase g = load_case(case_path("four_bus.json"));
  const OperatingPoint op = solve_power_flow(g, -g.nominal_load(), nominal_slack_voltage(g));
  const Eigen::VectorXd x = state_signal(g.nodes(), op.v);
  EXPECT_LE((complex_voltage(g.nodes(), x) - op.v).cwiseAbs().maxCoeff(), 1e-14);
}

TEST(BuildRealGso, TwoBusIsDcLaplacian) {
  const RealGso gso = build_real_gso(load_case(case_path("two_bus.json")));
  Eigen::Matrix2d expect;
  expect << 10, -10, -10, 10;
  EXPECT_EQ(gso.b_hat, Eigen::MatrixXd(expect));
  EXPECT_EQ(gso.p_cst.cwiseAbs().maxCoeff(), 0.0);
  EXPECT_EQ(gso.q_cst.cwiseAbs().maxCoeff(), 0.0);
  EXPECT_EQ(gso.s_full.rows(), 4);
}

TEST(BuildRealGso, AnnihilatesOnesWithAndWithoutShunts) {
  for (const char* name : {"two_bus.json", "four_bus.json"}) {
    auto doc = read_json(name);
    const RealGso with = build_real_gso(parse_case(doc));
    EXPECT_LE((with.b_hat * Eigen::VectorXd::Ones(with.node_count())).cwiseAbs().maxCoeff(), 1e-10) << name;
    EXPECT_EQ((with.b_hat - with.b_hat.transpose()).cwiseAbs().maxCoeff(), 0.0) << name;
    for (auto& l : doc["lines"]) l.erase("shunt");
    const RealGso without = build_real_gso(parse_case(doc));
    EXPECT_LE((without.b_hat * Eigen::VectorXd::Ones(without.node_count())).cwiseAbs().maxCoeff(), 1e-10) << name;
  }
}

// Off-diagonal blocks equal ((1 1^T) kron Gamma_c) o B with B = -Im(Y),
// evaluated entrywise from the node phases.
TEST(BuildRealGso, OffDiagonalBlocksMatchHadamardForm) {
  const GridCase g = load_case(case_path("four_bus.json"));
  const RealGso gso = build_real_gso(g);
  const Eigen::MatrixXd b = -assemble_admittance(g).dense().imag();
  const GammaMatrices full = gamma_matrices(PhaseSet::all());
  for (Index r = 0; r < g.node_count(); ++r) {
    for (Index c = 0; c < g.node_count(); ++c) {
      if (g.nodes()[r].bus == g.nodes()[c].bus) continue;
      const double ref = full.gamma_c(static_cast<int>(g.nodes()[r].phase), static_cast<int>(g.nodes()[c].phase)) * b(r, c);
      EXPECT_NEAR(gso.b_hat(r, c), ref, 1e-12) << r << "," << c;
    }
  }
}

TEST(BuildRealGso, ConstantsEqualFlatStartInjections) {
  const GridCase g = load_case(case_path("four_bus.json"));
  const RealGso gso = build_real_gso(g);
  const Eigen::VectorXcd s = compute_injections(flat_voltage(g), assemble_admittance(g));
  EXPECT_LE((s.real() - gso.p_cst).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_LE((s.imag() - gso.q_cst).cwiseAbs().maxCoeff(), 1e-12);
  ASSERT_GT(gso.p_cst.cwiseAbs().maxCoeff(), 1e-5);

  // The conjugate rotation convention would flip p_cst and miss the flat-start value.
  EXPECT_GT((s.real() + gso.p_cst).cwiseAbs().maxCoeff(), 1e-5);
}

TEST(BuildRealGso, SinglePhaseLosslessIsPsdLaplacian) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 10; ++trial) {
    const GridCase g = random_single_phase(6 + trial, rng);
    const RealGso gso = build_real_gso(g);
    const Eigen::MatrixXd neg_im = -assemble_admittance(g).dense().imag();
    EXPECT_EQ(gso.b_hat, neg_im);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(gso.b_hat);
    EXPECT_GE(es.eigenvalues().minCoeff(), -1e-10);
  }
}

TEST(LinearizedInjections, ConstantSignalAndDimension) {
  const RealGso gso = build_real_gso(load_case(case_path("four_bus.json")));
  EXPECT_LE(linearized_injections(gso, Eigen::VectorXd::Constant(24, 0.7)).cwiseAbs().maxCoeff(), 1e-10);
  EXPECT_THROW(linearized_injections(gso, Eigen::VectorXd::Zero(5)), DimensionError);
}

TEST(LinearizedInjections, TwoBusHandProduct) {
  const RealGso gso = build_real_gso(load_case(case_path("two_bus.json")));
  Eigen::Vector4d x(0.1, 0.0, 1.0, 1.0);
  const Eigen::VectorXd y = linearized_injections(gso, x);
  EXPECT_NEAR(y(0), 1.0, 1e-14);
  EXPECT_NEAR(y(1), -1.0, 1e-14);
  EXPECT_NEAR(y(2), 0.0, 1e-14);
  EXPECT_NEAR(y(3), 0.0, 1e-14);
}

double phase_channel_error(const GridCase& g, const RealGso& gso, double eps, const std::vector<Eigen::VectorXd>& dirs) {
  const AdmittanceMatrix y = assemble_admittance(g);
  const Index n = g.node_count();
  double num = 0.0;
  double den = 0.0;
  for (const auto& d : dirs) {
    Eigen::VectorXd x(2 * n);
    x.head(n) = eps * d;
    x.tail(n).setOnes();
    const Eigen::VectorXd p = compute_injections(complex_voltage(g.nodes(), x), y).real();
    const Eigen::VectorXd lin = linearized_injections(gso, x).head(n) + gso.p_cst;
    num += (lin - p).squaredNorm();
    den += p.squaredNorm();
  }
  return std::sqrt(num / std::max(den, 1e-12));
}

std::vector<Eigen::VectorXd> random_directions(Index n, int count, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<Eigen::VectorXd> out;
  for (int k = 0; k < count; ++k) {
    Eigen::VectorXd d(n);
    for (Index j = 0; j < n; ++j) d(j) = u(rng);
    out.push_back(d);
  }
  return out;
}

TEST(LinearizationAccuracy, PhaseChannelIsFirstOrder) {
  const GridCase g = load_case(case_path("four_bus.json"));
  const RealGso gso = build_real_gso(g);
  const auto dirs = random_directions(g.node_count(), 20, 11);
  double prev = phase_channel_error(g, gso, 0.02, dirs);
  EXPECT_LE(phase_channel_error(g, gso, 0.01, dirs), 0.05);
  for (double eps : {0.01, 0.005, 0.0025}) {
    const double e = phase_channel_error(g, gso, eps, dirs);
    EXPECT_GE(prev / e, 1.8) << "eps " << eps;
    prev = e;
  }
  RecordProperty("phase_channel_constant", std::to_string(phase_channel_error(g, gso, 0.01, dirs) / 0.01));
}

TEST(LinearizationAccuracy, ReactiveChannelAtNominalPhase) {
  const GridCase g = load_case(case_path("four_bus.json"));
  const RealGso gso = build_real_gso(g);
  const AdmittanceMatrix y = assemble_admittance(g);
  const Index n = g.node_count();
  const auto dirs = random_directions(n, 20, 12);
  auto err = [&](double eps) {
    double num = 0.0;
    double den = 0.0;
    for (const auto& d : dirs) {
      Eigen::VectorXd x(2 * n);
      x.head(n).setZero();
      x.tail(n) = Eigen::VectorXd::Ones(n) + eps * d;
      const Eigen::VectorXd q = compute_injections(complex_voltage(g.nodes(), x), y).imag();
      const Eigen::VectorXd lin = linearized_injections(gso, x).tail(n) + gso.q_cst;
      num += (lin - q).squaredNorm();
      den += q.squaredNorm();
    }
    return std::sqrt(num / den);
  };
  // The reactive block ignores the |v| dependence of the shunt terms, so the
  // relative error settles to a small constant rather than vanishing.
  EXPECT_LE(err(0.01), 0.05);
  RecordProperty("reactive_channel_error_at_0.01", std::to_string(err(0.01)));
}

TEST(LinearizationAccuracy, JointPerturbationFloorIsReported) {
  const GridCase g = load_case(case_path("four_bus.json"));
  const RealGso gso = build_real_gso(g);
  const AdmittanceMatrix y = assemble_admittance(g);
  const Index n = g.node_count();
  const auto dirs = random_directions(2 * n, 20, 13);
  for (double eps : {0.02, 0.01}) {
    double num = 0.0;
    double den = 0.0;
    for (const auto& d : dirs) {
      Eigen::VectorXd x = eps * d;
      x.tail(n).array() += 1.0;
      const Eigen::VectorXd p = compute_injections(complex_voltage(g.nodes(), x), y).real();
      num += (linearized_injections(gso, x).head(n) + gso.p_cst - p).squaredNorm();
      den += p.squaredNorm();
    }
    const double rel = std::sqrt(num / den);
    EXPECT_TRUE(std::isfinite(rel));
    RecordProperty("joint_error_eps_" + std::to_string(eps), std::to_string(rel));
  }
}

TEST(LinearizationAccuracy, NearFlatPowerFlowPoint) {
  const GridCase g = load_case(case_path("four_bus.json"));
  const RealGso gso = build_real_gso(g);
  const OperatingPoint op = solve_power_flow(g, -0.05 * g.nominal_load(), nominal_slack_voltage(g));
  const Eigen::VectorXd x = state_signal(g.nodes(), op.v);
  const Index n = g.node_count();
  const Eigen::VectorXd p_lin = linearized_injections(gso, x).head(n) + gso.p_cst;
  const double rel = (p_lin - op.s.real()).norm() / std::max(op.s.real().norm(), 1e-6);
  EXPECT_TRUE(std::isfinite(rel));
  RecordProperty("near_flat_relative_error", std::to_string(rel));
}

TEST(LinearizationAccuracy, LossyVariantReportsErrorConstant) {
  auto doc = read_json("four_bus.json");
  for (auto& l : doc["lines"]) {
    for (auto& row : l["series"]) {
      for (auto& e : row) e[0] = -0.2 * e[1].get<double>() * (std::abs(e[1].get<double>()) > 0.5 ? 1.0 : -0.3);
    }
  }
  const GridCase g = parse_case(doc);
  const RealGso gso = build_real_gso(g);
  const auto dirs = random_directions(g.node_count(), 10, 14);
  const double e = phase_channel_error(g, gso, 0.01, dirs);
  EXPECT_TRUE(std::isfinite(e));
  RecordProperty("lossy_phase_error_at_0.01", std::to_string(e));
}

// D(.) extracts the diagonal as a vector.
TEST(AppendixIdentities, RandomMatrices) {
  std::mt19937_64 rng(21);
  std::normal_distribution<double> gauss;
  auto rnd = [&](Index r, Index c) {
    Eigen::MatrixXd m(r, c);
    for (Index j = 0; j < c; ++j) {
      for (Index i = 0; i < r; ++i) m(i, j) = gauss(rng);
    }
    return m;
  };
  for (int trial = 0; trial < 50; ++trial) {
    const Index n = 2 + trial % 6;
    const Eigen::VectorXd a = rnd(n, 1);
    const Eigen::VectorXd b = rnd(n, 1);
    EXPECT_LE(((a * b.transpose()).diagonal() - b.asDiagonal() * a).cwiseAbs().maxCoeff(), 1e-14);

    const Eigen::MatrixXd A = rnd(n, n);
    const Eigen::VectorXd dc = rnd(n, 1);
    const Eigen::VectorXd de = rnd(n, 1);
    const Eigen::MatrixXd lhs = dc.asDiagonal() * A * de.asDiagonal();
    const Eigen::MatrixXd rhs = A.cwiseProduct(dc * de.transpose());
    EXPECT_LE((lhs - rhs).cwiseAbs().maxCoeff(), 1e-13);

    const Eigen::MatrixXd B = rnd(n, n);
    EXPECT_LE(((A * B).diagonal() - A.cwiseProduct(B.transpose()).rowwise().sum()).cwiseAbs().maxCoeff(), 1e-13);
  }
}

TEST(KronReduce, PathGraphMiddleNode) {
  Eigen::Matrix3d s;
  s << 1, -1, 0, -1, 2, -1, 0, -1, 1;
  const std::vector<Index> keep{0, 2};
  const ReducedGso r = kron_reduce(s, keep);
  Eigen::Matrix2d expect;
  expect << 0.5, -0.5, -0.5, 0.5;
  EXPECT_LE((r.s_red - expect).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(KronReduce, KeepingEverythingIsIdentity) {
  const RealGso gso = build_real_gso(load_case(case_path("four_bus.json")));
  std::vector<Index> all(12);
  for (Index k = 0; k < 12; ++k) all[static_cast<std::size_t>(k)] = k;
  EXPECT_EQ(kron_reduce(gso.b_hat, all).s_red, gso.b_hat);
}

std::vector<Index> random_subset(Index n, std::mt19937_64& rng) {
  std::uniform_int_distribution<Index> size(1, n - 1);
  std::vector<Index> all(static_cast<std::size_t>(n));
  for (Index k = 0; k < n; ++k) all[static_cast<std::size_t>(k)] = k;
  std::shuffle(all.begin(), all.end(), rng);
  all.resize(static_cast<std::size_t>(size(rng)));
  std::sort(all.begin(), all.end());
  return all;
}

TEST(KronReduce, ReducedSolveMatchesDecimatedFullSolve) {
  std::mt19937_64 rng(5);
  std::normal_distribution<double> gauss;
  for (const char* name : {"two_bus.json", "four_bus.json"}) {
    const RealGso gso = build_real_gso(load_case(case_path(name)));
    const Index n = gso.node_count();
    const Eigen::MatrixXd grounded = gso.b_hat + Eigen::MatrixXd::Identity(n, n);
    for (int trial = 0; trial < 20; ++trial) {
      const auto keep = random_subset(n, rng);
      Eigen::VectorXd f = Eigen::VectorXd::Zero(n);
      for (Index k : keep) f(k) = gauss(rng);
      const Eigen::VectorXd full = grounded.lu().solve(f);
      const ReducedGso red = kron_reduce(grounded, keep);
      const Eigen::VectorXd reduced = red.s_red.lu().solve(Eigen::VectorXd(f(keep)));
      EXPECT_LE((reduced - full(keep)).cwiseAbs().maxCoeff(), 1e-8) << name;
      EXPECT_EQ((red.s_red - red.s_red.transpose()).cwiseAbs().maxCoeff(), 0.0);
    }
  }
}

TEST(KronReduce, NestedReductionsCompose) {
  const RealGso gso = build_real_gso(load_case(case_path("four_bus.json")));
  const std::vector<Index> m1{0, 1, 2, 4, 5, 7, 9, 10, 11};
  const std::vector<Index> m2{0, 2, 5, 9, 11};
  const ReducedGso r1 = kron_reduce(gso.b_hat, m1);
  std::vector<Index> inner;  // positions of m2 inside m1
  for (Index k : m2) inner.push_back(static_cast<Index>(std::find(m1.begin(), m1.end(), k) - m1.begin()));
  const ReducedGso twice = kron_reduce(r1.s_red, inner);
  const ReducedGso once = kron_reduce(gso.b_hat, m2);
  EXPECT_LE((twice.s_red - once.s_red).cwiseAbs().maxCoeff(), 1e-9);
}

TEST(KronReduce, FloatingInteriorIsReported) {
  // Nodes 2 and 3 form an island with no edge to the retained nodes {0, 1}.
  Eigen::Matrix4d s;
  s << 1, -1, 0, 0, -1, 1, 0, 0, 0, 0, 1, -1, 0, 0, -1, 1;
  const std::vector<Index> keep{0, 1};
  try {
    kron_reduce(s, keep);
    FAIL() << "expected SingularMatrixError";
  } catch (const SingularMatrixError& e) {
    EXPECT_NE(std::string(e.what()).find("{2,3}"), std::string::npos) << e.what();
  }
}

TEST(ReduceGso, KeepsRetainedConstantsAndOrdering) {
  const RealGso gso = build_real_gso(load_case(case_path("four_bus.json")));
  const std::vector<Index> keep{1, 4, 8};
  const RealGso red = reduce_gso(gso, keep);
  EXPECT_EQ(red.node_count(), 3);
  EXPECT_EQ(red.nodes[1], gso.nodes[4]);
  EXPECT_EQ(red.p_cst(2), gso.p_cst(8));
  EXPECT_EQ(red.s_full.rows(), 6);
}

}  // namespace
}  // namespace gridgsp
