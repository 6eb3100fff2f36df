// Copyright 2026 The SAP Fine-Tuning Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <cmath>
#include <vector>

#include "gradient_cases.h"
#include "gtest/gtest.h"
#include "sap/errors.h"
#include "sap/numerics/gradient_check.h"
#include "sap/numerics/graph.h"
#include "sap/numerics/random.h"

namespace sap::numerics {
namespace {

using test_support::primitive_cases;
using test_support::random_input;

constexpr double kTol = 1e-4;

TEST(MatmulTest, IdentityLeavesOperandUnchanged) {
  Graph g;
  Var a = g.constant(Tensor::from_rows({{1, 0}, {0, 1}}));
  Var b = g.constant(Tensor::from_rows({{2, 3}, {4, 5}}));
  EXPECT_EQ(g.value(g.matmul(a, b)), Tensor::from_rows({{2, 3}, {4, 5}}));
}

TEST(MatmulTest, RowTimesColumn) {
  Graph g;
  Var a = g.constant(Tensor::from_rows({{1, 2}}));
  Var b = g.constant(Tensor::from_rows({{3}, {4}}));
  EXPECT_EQ(g.value(g.matmul(a, b)), Tensor::from_rows({{11}}));
}

TEST(MatmulTest, InnerDimensionMismatchThrows) {
  Graph g;
  Var a = g.constant(Tensor({2, 3}));
  Var b = g.constant(Tensor({2, 3}));
  EXPECT_THROW(g.matmul(a, b), DimensionError);
}

TEST(MatmulTest, BackwardMatchesFiniteDifferences) {
  Rng rng = make_rng(11);
  auto report = gradient_check(
      [](DoubleGraph& g, std::span<const Var> v) { return g.matmul(v[0], v[1]); },
      {random_input({4, 5}, rng), random_input({5, 3}, rng)}, kTol);
  EXPECT_TRUE(report.passed) << report.summary();
}

TEST(SoftmaxTest, UniformForEqualInputs) {
  Graph g;
  Var y = g.softmax(g.constant(Tensor({3}, {0, 0, 0})), 0);
  for (float p : g.value(y).data()) EXPECT_NEAR(p, 1.0 / 3.0, 1e-7);
}

TEST(SoftmaxTest, SaturatesWithoutOverflow) {
  Graph g;
  Var y = g.softmax(g.constant(Tensor({3}, {1000, 0, 0})), 0);
  EXPECT_NEAR(g.value(y)[0], 1.0, 1e-6);
  EXPECT_NEAR(g.value(y)[1], 0.0, 1e-6);
  EXPECT_NEAR(g.value(y)[2], 0.0, 1e-6);
}

TEST(SoftmaxTest, MatchesDirectEvaluation) {
  // Reference: exp(x_i) / sum_j exp(x_j) evaluated in long double.
  const long double z = std::exp(1.0L) + std::exp(2.0L) + std::exp(3.0L);
  Graph g;
  Var y = g.softmax(g.constant(Tensor({3}, {1, 2, 3})), 0);
  EXPECT_NEAR(g.value(y)[0], double(std::exp(1.0L) / z), 1e-7);
  EXPECT_NEAR(g.value(y)[1], double(std::exp(2.0L) / z), 1e-7);
  EXPECT_NEAR(g.value(y)[2], double(std::exp(3.0L) / z), 1e-7);
  EXPECT_NEAR(g.value(y)[0], 0.09003, 5e-6);
  EXPECT_NEAR(g.value(y)[1], 0.24473, 5e-6);
  EXPECT_NEAR(g.value(y)[2], 0.66524, 5e-6);
}

TEST(SoftmaxTest, RowsSumToOneForLargeMagnitudes) {
  Rng rng = make_rng(3);
  std::uniform_real_distribution<double> dist(-1e4, 1e4);
  Tensor x({16, 32});
  for (float& v : x.data()) v = float(dist(rng));
  for (std::size_t axis : {0u, 1u}) {
    Graph g;
    const Tensor& y = g.value(g.softmax(g.constant(x), axis));
    const std::size_t rows = axis == 1 ? 16 : 32;
    for (std::size_t r = 0; r < rows; ++r) {
      double s = 0.0;
      for (std::size_t j = 0; j < (axis == 1 ? 32u : 16u); ++j) {
        s += axis == 1 ? y.at(r, j) : y.at(j, r);
      }
      EXPECT_NEAR(s, 1.0, 1e-6);
    }
  }
}

TEST(SoftmaxTest, InvalidAxisThrows) {
  Graph g;
  EXPECT_THROW(g.softmax(g.constant(Tensor({2, 2})), 2), DimensionError);
}

TEST(LayerNormTest, ConstantRowMapsToZero) {
  Graph g;
  Var y = g.layer_norm(g.constant(Tensor({1, 4}, {5, 5, 5, 5})),
                       g.constant(Tensor::full({4}, 1)), g.constant(Tensor({4})));
  for (float v : g.value(y).data()) EXPECT_EQ(v, 0.0f);
}

TEST(LayerNormTest, TwoElementRow) {
  Graph g;
  Var y = g.layer_norm(g.constant(Tensor({1, 2}, {1, 3})),
                       g.constant(Tensor::full({2}, 1)), g.constant(Tensor({2})));
  EXPECT_NEAR(g.value(y)[0], -1.0, 1e-4);
  EXPECT_NEAR(g.value(y)[1], 1.0, 1e-4);
}

TEST(LayerNormTest, BackwardMatchesFiniteDifferences) {
  Rng rng = make_rng(5);
  auto report = gradient_check(
      [](DoubleGraph& g, std::span<const Var> v) {
        return g.layer_norm(v[0], v[1], v[2]);
      },
      {random_input({3, 6}, rng), random_input({6}, rng), random_input({6}, rng)}, kTol);
  EXPECT_TRUE(report.passed) << report.summary();
}

TEST(CrossEntropyTest, UniformPredictionCostsLogC) {
  Graph g;
  std::vector<std::int32_t> labels = {1};
  Var l = g.cross_entropy(g.constant(Tensor({1, 2})), labels);
  EXPECT_NEAR(g.value(l)[0], std::log(2.0), 1e-7);
}

TEST(CrossEntropyTest, SaturatedCorrectPredictionCostsNothing) {
  Graph g;
  std::vector<std::int32_t> labels = {0, 1};
  Var l = g.cross_entropy(g.constant(Tensor::from_rows({{1000, 0}, {0, 1000}})), labels);
  EXPECT_NEAR(g.value(l)[0], 0.0, 1e-7);
}

TEST(CrossEntropyTest, OutOfRangeLabelThrows) {
  Graph g;
  std::vector<std::int32_t> labels = {2};
  EXPECT_THROW(g.cross_entropy(g.constant(Tensor({1, 2})), labels), LabelError);
  EXPECT_THROW(cross_entropy_with_grad(Tensor({1, 2}), labels), LabelError);
  labels = {-1};
  EXPECT_THROW(cross_entropy_with_grad(Tensor({1, 2}), labels), LabelError);
}

TEST(CrossEntropyTest, GradientIsSoftmaxMinusOneHot) {
  Tensor logits = Tensor::from_rows({{0.5f, -1.0f, 2.0f}, {0.0f, 0.3f, -0.2f}});
  std::vector<std::int32_t> labels = {2, 0};
  LossAndGrad lg = cross_entropy_with_grad(logits, labels);
  for (std::size_t i = 0; i < 2; ++i) {
    double z = 0.0;
    for (std::size_t j = 0; j < 3; ++j) z += std::exp(double(logits.at(i, j)));
    for (std::size_t j = 0; j < 3; ++j) {
      const double p = std::exp(double(logits.at(i, j))) / z;
      const double expected = (p - (std::int32_t(j) == labels[i] ? 1.0 : 0.0)) / 2.0;
      EXPECT_NEAR(lg.grad.at(i, j), expected, 1e-7);
    }
  }
  Rng rng = make_rng(9);
  auto report = gradient_check(
      [&](DoubleGraph& g, std::span<const Var> v) { return g.cross_entropy(v[0], labels); },
      {random_input({2, 3}, rng)}, kTol);
  EXPECT_TRUE(report.passed) << report.summary();
}

TEST(CrossEntropyTest, GraphAndStandaloneAgreeBitwise) {
  Tensor logits = Tensor::from_rows({{0.25f, -1.5f}, {3.0f, 0.1f}, {-0.7f, 0.7f}});
  std::vector<std::int32_t> labels = {1, 0, 1};
  Graph g;
  Tensor p = logits;
  p.set_requires_grad(true);
  Var l = g.cross_entropy(g.parameter(p), labels);
  g.backward(l);
  LossAndGrad lg = cross_entropy_with_grad(logits, labels);
  EXPECT_EQ(g.value(l)[0], static_cast<float>(lg.loss));
  for (std::size_t i = 0; i < lg.grad.size(); ++i) EXPECT_EQ(p.grad()[i], lg.grad[i]);
}

TEST(GradientCheckTest, Matmul3x3Passes) {
  Rng rng = make_rng(1);
  auto report = gradient_check(
      [](DoubleGraph& g, std::span<const Var> v) { return g.matmul(v[0], v[1]); },
      {random_input({3, 3}, rng), random_input({3, 3}, rng)}, kTol);
  EXPECT_TRUE(report.passed) << report.summary();
  EXPECT_EQ(report.entries_checked, 18u);
}

TEST(GradientCheckTest, SoftmaxCrossEntropyChainPasses) {
  Rng rng = make_rng(2);
  std::vector<std::int32_t> labels = {0, 2, 1, 1};
  auto report = gradient_check(
      [&](DoubleGraph& g, std::span<const Var> v) {
        Var p = g.softmax(v[0], 1);
        return g.cross_entropy(g.scale(p, 3.0), labels);
      },
      {random_input({4, 3}, rng)}, kTol);
  EXPECT_TRUE(report.passed) << report.summary();
}

TEST(GradientCheckTest, CorruptedGradientFails) {
  Rng rng = make_rng(1);
  GradientCheckOptions options;
  options.analytic_scale = 2.0;
  auto report = gradient_check(
      [](DoubleGraph& g, std::span<const Var> v) { return g.matmul(v[0], v[1]); },
      {random_input({3, 3}, rng), random_input({3, 3}, rng)}, kTol, options);
  EXPECT_FALSE(report.passed);
  EXPECT_NEAR(report.max_relative_error, 0.5, 1e-6);
}

TEST(GradientCheckTest, NonFiniteIntermediateRaises) {
  Rng rng = make_rng(4);
  EXPECT_THROW(gradient_check(
                   [](DoubleGraph& g, std::span<const Var> v) {
                     return g.scale(v[0], std::numeric_limits<double>::infinity());
                   },
                   {random_input({2}, rng)}, kTol),
               NumericError);
}

// Every differentiable primitive agrees with central differences on ten
// seeds.
TEST(PrimitiveGradientProperty, AllPrimitivesMatchFiniteDifferencesOnTenSeeds) {
  for (const auto& c : primitive_cases()) {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
      Rng rng = make_rng(seed, {0x7072});
      std::vector<DoubleTensor> inputs;
      for (const auto& s : c.shapes) inputs.push_back(random_input(s, rng));
      GradientCheckOptions options;
      options.seed = seed;
      auto report = gradient_check(c.op, inputs, kTol, options);
      EXPECT_TRUE(report.passed) << c.name << " seed " << seed << ": " << report.summary();
    }
  }
}

TEST(GraphTest, SharedInputAccumulatesGradient) {
  Tensor x({2}, {1.5f, -2.0f});
  x.set_requires_grad(true);
  Graph g;
  Var v = g.parameter(x);
  Var y = g.add(v, g.scale(v, 2.0));
  g.backward(g.weighted_sum(y, Tensor({2}, {1.0f, 1.0f})));
  EXPECT_FLOAT_EQ(x.grad()[0], 3.0f);
  EXPECT_FLOAT_EQ(x.grad()[1], 3.0f);
}

TEST(GraphTest, FrozenParameterReceivesNoGradient) {
  Tensor w({2, 2}, {1, 2, 3, 4});
  Tensor x({1, 2}, {1, 1});
  x.set_requires_grad(true);
  Graph g;
  Var y = g.matmul(g.parameter(x), g.parameter(w));
  EXPECT_FALSE(g.requires_grad(g.parameter(w)));
  g.backward(g.weighted_sum(y, Tensor({1, 2}, {1, 1})));
  EXPECT_FALSE(w.has_grad());
  EXPECT_FLOAT_EQ(x.grad()[0], 3.0f);
  EXPECT_FLOAT_EQ(x.grad()[1], 7.0f);
}

TEST(GraphTest, NonFiniteInputRaises) {
  Graph g;
  EXPECT_THROW(g.constant(Tensor({1}, {std::nanf("")})), NumericError);
  Var x = g.constant(Tensor({1}, {1e30f}));
  EXPECT_THROW(g.scale(x, 1e30), NumericError);
}

TEST(GraphTest, MaskedSoftmaxWithNoVisibleKeyIsZero) {
  Graph g;
  std::vector<std::uint8_t> mask = {0, 0, 0};
  Var y = g.masked_softmax(g.constant(Tensor({1, 2, 3}, {1, 2, 3, 4, 5, 6})), mask, 1);
  for (float v : g.value(y).data()) EXPECT_EQ(v, 0.0f);
}

TEST(GraphTest, StraightThroughEmbeddingRoutesGradientToOriginalIds) {
  const std::vector<std::int32_t> used = {3, 0, 4, 4};
  const std::vector<std::int32_t> original = {1, 1, 0, 2};
  Tensor upstream({2, 2, 3}, {1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12});
  Rng rng = make_rng(8);
  Tensor t1 = normal_tensor({5, 3}, 1.0, rng);
  Tensor t2 = t1;
  t1.set_requires_grad(true);
  t2.set_requires_grad(true);
  Graph g1;
  Var e1 = g1.embedding(g1.parameter(t1), used, 2, 2, original);
  Graph g2;
  Var e2 = g2.embedding(g2.parameter(t2), used, 2, 2);
  EXPECT_EQ(g1.value(e1), g2.value(e2));
  g1.backward(g1.weighted_sum(e1, upstream));
  Graph g3;
  Tensor t3 = t1;
  t3.set_requires_grad(true);
  g3.backward(g3.weighted_sum(g3.embedding(g3.parameter(t3), original, 2, 2), upstream));
  for (std::size_t i = 0; i < t1.size(); ++i) EXPECT_EQ(t1.grad()[i], t3.grad()[i]);
}

TEST(GraphTest, ForwardIsBitwiseDeterministic) {
  auto run = [] {
    Rng rng = make_rng(42);
    Tensor a = normal_tensor({8, 16}, 1.0, rng);
    Tensor b = normal_tensor({16, 8}, 1.0, rng);
    Tensor gam = normal_tensor({8}, 1.0, rng);
    Tensor bet = normal_tensor({8}, 1.0, rng);
    Graph g;
    Var h = g.matmul(g.constant(a), g.constant(b));
    h = g.layer_norm(h, g.constant(gam), g.constant(bet));
    return g.value(g.softmax(g.gelu(h), 1));
  };
  EXPECT_EQ(run(), run());
}

}  // namespace
}  // namespace sap::numerics
