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

#include <cstring>
#include <random>

#include <gtest/gtest.h>

#include "gridgsp/autodiff.hpp"
#include "support/gradcheck.hpp"

namespace gridgsp {
namespace {

using ad::Matrix;
using ad::Var;

Matrix random_matrix(Eigen::Index r, Eigen::Index c, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> g(0.0, scale);
  Matrix m(r, c);
  for (Eigen::Index k = 0; k < m.size(); ++k) m.data()[k] = g(rng);
  return m;
}

TEST(Backward, LeastSquaresHandDerivative) {
  std::mt19937_64 rng(1);
  const Var w = ad::parameter(random_matrix(3, 4, rng));
  const Matrix x = random_matrix(4, 1, rng);
  const Matrix y = random_matrix(3, 1, rng);
  const Var r = ad::sub(ad::matmul(w, ad::constant(x)), ad::constant(y));
  ad::backward(ad::scale(ad::sum(ad::square(r)), 0.5));
  const Matrix expect = (w->value * x - y) * x.transpose();
  EXPECT_LE((w->grad - expect).cwiseAbs().maxCoeff(), 1e-14);
}

TEST(Backward, ConstantLossGivesZeroGradient) {
  std::mt19937_64 rng(2);
  const Var w = ad::parameter(random_matrix(3, 3, rng));
  ad::backward(ad::scale(ad::sum(w), 0.0));
  EXPECT_EQ(w->grad.cwiseAbs().maxCoeff(), 0.0);
}

TEST(Backward, DetachedGraphIsAnError) {
  const Var c = ad::constant(Matrix::Ones(2, 2));
  EXPECT_THROW(ad::backward(ad::sum(c)), Error);
  const Var w = ad::parameter(Matrix::Ones(2, 2));
  EXPECT_THROW(ad::backward(w), DimensionError);
}

TEST(Backward, SharedSubexpressionsAccumulate) {
  const Var w = ad::parameter(Matrix::Constant(1, 1, 3.0));
  const Var sq = ad::mul(w, w);
  ad::backward(ad::add(sq, sq));  // 2 w^2 -> 4 w
  EXPECT_DOUBLE_EQ(w->grad(0, 0), 12.0);
}

struct OpCase {
  const char* name;
  std::function<Var(const Var&, const Var&)> fn;
  Eigen::Index ar, ac, br, bc;
};

TEST(GradCheck, EveryElementaryOp) {
  std::mt19937_64 rng(3);
  Eigen::MatrixXi choice(2, 3);
  choice << 0, 3, 4, 2, 1, 0;
  const Matrix s = random_matrix(3, 3, rng);
  const std::vector<OpCase> cases{
      {"matmul", [](const Var& a, const Var& b) { return ad::matmul(a, b); }, 3, 4, 4, 2},
      {"transpose", [](const Var& a, const Var&) { return ad::transpose(a); }, 3, 4, 1, 1},
      {"add", [](const Var& a, const Var& b) { return ad::add(a, b); }, 3, 2, 3, 2},
      {"sub", [](const Var& a, const Var& b) { return ad::sub(a, b); }, 3, 2, 3, 2},
      {"mul", [](const Var& a, const Var& b) { return ad::mul(a, b); }, 3, 2, 3, 2},
      {"scale", [](const Var& a, const Var&) { return ad::scale(a, -1.7); }, 3, 2, 1, 1},
      {"add_scalar", [](const Var& a, const Var&) { return ad::add_scalar(a, 0.3); }, 3, 2, 1, 1},
      {"broadcast", [](const Var& a, const Var& b) { return ad::add_col_broadcast(a, b); }, 3, 4, 3, 1},
      {"relu", [](const Var& a, const Var&) { return ad::relu(a); }, 4, 3, 1, 1},
      {"tanh", [](const Var& a, const Var&) { return ad::tanh(a); }, 4, 3, 1, 1},
      {"sin", [](const Var& a, const Var&) { return ad::sin(a); }, 4, 3, 1, 1},
      {"cos", [](const Var& a, const Var&) { return ad::cos(a); }, 4, 3, 1, 1},
      {"exp", [](const Var& a, const Var&) { return ad::exp(a); }, 4, 3, 1, 1},
      {"square", [](const Var& a, const Var&) { return ad::square(a); }, 4, 3, 1, 1},
      {"mean", [](const Var& a, const Var&) { return ad::mean(a); }, 4, 3, 1, 1},
      {"minimum", [](const Var& a, const Var& b) { return ad::minimum(a, b); }, 4, 3, 4, 3},
      {"clamp", [](const Var& a, const Var&) { return ad::clamp(a, -0.5, 0.5); }, 4, 3, 1, 1},
      {"slice", [](const Var& a, const Var&) { return ad::slice_rows(a, 1, 2); }, 4, 3, 1, 1},
      {"vstack", [](const Var& a, const Var& b) { return ad::vstack({a, b, a}); }, 2, 3, 4, 3},
      {"block_mix", [](const Var& w, const Var& x) { return ad::block_mix(w, x, 3); }, 4, 2, 6, 5},
      {"block_shift", [s](const Var& a, const Var&) { return ad::block_shift(s, a); }, 6, 4, 1, 1},
      {"log_softmax", [](const Var& a, const Var&) { return ad::log_softmax_groups(a, 5); }, 10, 3, 1, 1},
      {"gather", [choice](const Var& a, const Var&) { return ad::gather_groups(a, choice, 5); }, 10, 3, 1, 1},
      {"sum_rows", [](const Var& a, const Var&) { return ad::sum_rows(a); }, 4, 3, 1, 1},
  };
  for (const auto& c : cases) {
    for (int trial = 0; trial < 5; ++trial) {
      const Var a = ad::parameter(random_matrix(c.ar, c.ac, rng));
      const Var b = ad::parameter(random_matrix(c.br, c.bc, rng));
      const Matrix weights = random_matrix(c.fn(a, b)->rows(), c.fn(a, b)->cols(), rng);
      auto loss = [&]() { return ad::sum(ad::mul(c.fn(a, b), ad::constant(weights))); };
      const auto r = testing::check_gradients({a, b}, loss);
      EXPECT_LE(r.max_rel_error, 1e-4) << c.name;
    }
  }
}

TEST(BlockMix, IsKroneckerChannelMixing) {
  std::mt19937_64 rng(4);
  const Matrix w = random_matrix(3, 2, rng);
  const Matrix x = random_matrix(2 * 4, 5, rng);
  Matrix kron = Matrix::Zero(3 * 4, 2 * 4);
  for (int r = 0; r < 3; ++r) {
    for (int q = 0; q < 2; ++q) kron.block(r * 4, q * 4, 4, 4) = w(r, q) * Matrix::Identity(4, 4);
  }
  const Var out = ad::block_mix(ad::constant(w), ad::constant(x), 4);
  EXPECT_LE((out->value - kron * x).cwiseAbs().maxCoeff(), 1e-14);
}

TEST(LogSoftmax, ShiftInvariantAndNormalized) {
  std::mt19937_64 rng(5);
  const Matrix logits = random_matrix(22, 3, rng);
  const Matrix a = ad::log_softmax_groups(ad::constant(logits), 11)->value;
  const Matrix b = ad::log_softmax_groups(ad::constant((logits.array() + 4.2).matrix()), 11)->value;
  EXPECT_LE((a - b).cwiseAbs().maxCoeff(), 1e-12);
  for (int g = 0; g < 2; ++g) {
    for (int c = 0; c < 3; ++c) EXPECT_NEAR(a.block(g * 11, c, 11, 1).array().exp().sum(), 1.0, 1e-12);
  }
}

TEST(Adam, ZeroGradientLeavesParameters) {
  Matrix p = Matrix::Constant(2, 2, 1.5);
  const Matrix g = Matrix::Zero(2, 2);
  ad::AdamState st;
  ad::adam_step({&p}, {&g}, st, ad::AdamConfig{0.1});
  EXPECT_EQ(p, Matrix::Constant(2, 2, 1.5));
}

TEST(Adam, FirstStepMovesByLearningRate) {
  Matrix p = Matrix::Constant(1, 1, 1.0);
  const Matrix g = Matrix::Constant(1, 1, 1.0);
  ad::AdamState st;
  ad::adam_step({&p}, {&g}, st, ad::AdamConfig{0.1});
  EXPECT_NEAR(p(0, 0), 0.9, 1e-7);
}

TEST(Adam, QuadraticBowlConverges) {
  const Var p = ad::parameter((Matrix(3, 1) << 2.0, -1.0, 0.5).finished());
  const Matrix target = (Matrix(3, 1) << -0.3, 0.7, 1.2).finished();
  ad::Adam opt({p}, ad::AdamConfig{0.05});
  int steps = 0;
  while (steps < 2000 && (p->value - target).cwiseAbs().maxCoeff() > 1e-4) {
    opt.zero_grad();
    ad::backward(ad::sum(ad::square(ad::sub(p, ad::constant(target)))));
    opt.step();
    ++steps;
  }
  EXPECT_LE((p->value - target).cwiseAbs().maxCoeff(), 1e-4);
  EXPECT_LT(steps, 2000);
}

TEST(Adam, DeterministicAcrossRuns) {
  auto run = []() {
    std::mt19937_64 rng(9);
    const Var w = ad::parameter(random_matrix(4, 3, rng));
    const Matrix x = random_matrix(3, 8, rng);
    const Matrix y = random_matrix(4, 8, rng);
    ad::Adam opt({w}, ad::AdamConfig{0.01});
    for (int k = 0; k < 50; ++k) {
      opt.zero_grad();
      ad::backward(ad::mean(ad::square(ad::sub(ad::tanh(ad::matmul(w, ad::constant(x))), ad::constant(y)))));
      opt.step();
    }
    return w->value;
  };
  const Matrix a = run();
  const Matrix b = run();
  EXPECT_EQ(std::memcmp(a.data(), b.data(), sizeof(double) * static_cast<std::size_t>(a.size())), 0);
}

}  // namespace
}  // namespace gridgsp
