// Copyright 2026 The gradleak Authors
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
#include <functional>
#include <string>
#include <vector>

#include <gtest/gtest.h>

#include "gradleak/errors.hpp"
#include "gradleak/ops.hpp"
#include "gradleak/tensor.hpp"
#include "test_util.hpp"

namespace gradleak {
namespace {

using testing::uniform_tensor;

// Contracts an arbitrary-shape output with fixed random weights so every
// coordinate of the gradient is generically nonzero.
Tensor contract(const Tensor& out, std::uint64_t seed) {
  Rng rng(seed);
  const Tensor r = uniform_tensor(out.shape(), rng, 0.5, 1.5);
  return ops::sum(ops::mul(out, r));
}

TEST(TensorTest, ConstructorChecksLength) {
  EXPECT_THROW(Tensor({2, 3}, std::vector<double>(5)), ShapeError);
  const Tensor t({2, 3}, std::vector<double>(6, 1.0));
  EXPECT_EQ(t.size(), 6u);
  EXPECT_EQ(t.rank(), 2u);
}

TEST(TensorTest, CloneIsDeepDetachShares) {
  Tensor t({3}, {1, 2, 3});
  Tensor c = t.clone();
  Tensor d = t.detach();
  t.mutable_values()[0] = 9.0;
  EXPECT_EQ(c.at(0), 1.0);
  EXPECT_EQ(d.at(0), 9.0);
  EXPECT_FALSE(d.requires_grad());
}

TEST(OpsTest, ReluDefinition) {
  const Tensor y = ops::relu(Tensor({3}, {-1, 0, 2}));
  EXPECT_EQ(std::vector<double>(y.values().begin(), y.values().end()),
            (std::vector<double>{0, 0, 2}));
}

TEST(OpsTest, SoftplusAtZeroIsLogTwo) {
  EXPECT_NEAR(ops::softplus(Tensor::scalar(0.0)).item(), std::log(2.0), 1e-15);
}

TEST(OpsTest, IdentityKernelConvReproducesImage) {
  Rng rng(1);
  const Tensor img = uniform_tensor({1, 1, 7, 5}, rng);
  std::vector<double> k(9, 0.0);
  k[4] = 1.0;
  const Tensor y = ops::conv2d(img, Tensor({1, 1, 3, 3}, k), Tensor::zeros({1}), 1);
  ASSERT_EQ(y.shape(), img.shape());
  EXPECT_EQ(testing::max_abs_diff(y.values(), img.values()), 0.0);
}

TEST(OpsTest, ConvMatchesDirectLoops) {
  Rng rng(2);
  const std::size_t B = 2, C = 3, H = 6, W = 5, O = 4, K = 3;
  const Tensor x = uniform_tensor({B, C, H, W}, rng);
  const Tensor w = uniform_tensor({O, C, K, K}, rng);
  const Tensor b = uniform_tensor({O}, rng);
  for (int pad : {0, 1}) {
    const Tensor y = ops::conv2d(x, w, b, pad);
    const std::size_t Ho = H + 2 * pad - K + 1, Wo = W + 2 * pad - K + 1;
    ASSERT_EQ(y.shape(), (Shape{B, O, Ho, Wo}));
    for (std::size_t n = 0; n < B; ++n) {
      for (std::size_t o = 0; o < O; ++o) {
        for (std::size_t i = 0; i < Ho; ++i) {
          for (std::size_t j = 0; j < Wo; ++j) {
            double acc = b.at(o);
            for (std::size_t c = 0; c < C; ++c) {
              for (std::size_t p = 0; p < K; ++p) {
                for (std::size_t q = 0; q < K; ++q) {
                  const long yi = static_cast<long>(i + p) - pad;
                  const long xj = static_cast<long>(j + q) - pad;
                  if (yi < 0 || xj < 0 || yi >= static_cast<long>(H) || xj >= static_cast<long>(W)) {
                    continue;
                  }
                  acc += w.at(((o * C + c) * K + p) * K + q) *
                         x.at(((n * C + c) * H + yi) * W + xj);
                }
              }
            }
            EXPECT_NEAR(y.at(((n * O + o) * Ho + i) * Wo + j), acc, 1e-12);
          }
        }
      }
    }
  }
}

TEST(OpsTest, MaxPoolPicksWindowMaximum) {
  const Tensor x({1, 1, 2, 4}, {1, 5, 2, 0, 3, 4, -1, 7});
  const Tensor y = ops::maxpool2x2(x);
  ASSERT_EQ(y.shape(), (Shape{1, 1, 1, 2}));
  EXPECT_EQ(y.at(0), 5.0);
  EXPECT_EQ(y.at(1), 7.0);
}

TEST(OpsTest, ShapeMismatchThrows) {
  EXPECT_THROW(ops::add(Tensor::zeros({2}), Tensor::zeros({3})), ShapeError);
  EXPECT_THROW(ops::matmul(Tensor::zeros({2, 3}), Tensor::zeros({2, 3})), ShapeError);
  EXPECT_THROW(ops::cross_entropy(Tensor::zeros({2, 3}), std::vector<int>{0}), ShapeError);
}

TEST(OpsTest, NonFiniteOutputThrows) {
  EXPECT_THROW(ops::log(Tensor({2}, {1.0, -1.0})), NumericError);
  EXPECT_THROW(ops::exp(Tensor::scalar(1000.0)), NumericError);
}

TEST(BackwardTest, LinearGradientIsInput) {
  Rng rng(3);
  const Tensor x = uniform_tensor({5}, rng);
  Tensor w = uniform_tensor({5}, rng);
  w.set_requires_grad(true);
  Graph g;
  {
    GraphScope scope(g);
    g.backward(ops::sum(ops::mul(w, x)));
  }
  EXPECT_EQ(testing::max_abs_diff(w.grad(), x.values()), 0.0);
}

TEST(BackwardTest, DeadReluHasZeroGradient) {
  Tensor z = Tensor::scalar(-1.0, true);
  Graph g;
  {
    GraphScope scope(g);
    g.backward(ops::relu(z));
  }
  EXPECT_EQ(z.grad_tensor().item(), 0.0);
}

TEST(BackwardTest, ReluAndAbsSubgradientAtZeroIsZero) {
  for (auto op : {&ops::relu, &ops::abs}) {
    Tensor z = Tensor::scalar(0.0, true);
    Graph g;
    {
      GraphScope scope(g);
      g.backward(op(z));
    }
    EXPECT_EQ(z.grad_tensor().item(), 0.0);
  }
}

TEST(BackwardTest, NonScalarLossThrows) {
  Tensor z({2}, {1.0, 2.0}, true);
  Graph g;
  GraphScope scope(g);
  Tensor y = ops::square(z);
  EXPECT_THROW(g.backward(y), ShapeError);
}

TEST(BackwardTest, NothingRecordedWithoutGraphOrGradInputs) {
  Graph g;
  {
    GraphScope scope(g);
    ops::square(Tensor({2}, {1.0, 2.0}));
  }
  EXPECT_EQ(g.size(), 0u);
  EXPECT_EQ(Graph::active(), nullptr);
}

TEST(BackwardTest, FanOutAccumulates) {
  Rng rng(4);
  const Tensor point = uniform_tensor({6}, rng);
  Tensor a = point.clone().set_requires_grad(true);
  Tensor b = point.clone().set_requires_grad(true);
  {
    Graph g;
    GraphScope scope(g);
    // x consumed three times.
    g.backward(ops::sum(ops::add(ops::mul(a, a), ops::scale(a, 3.0))));
  }
  {
    Graph g;
    GraphScope scope(g);
    g.backward(ops::sum(ops::add(ops::square(b), ops::scale(b, 3.0))));
  }
  for (std::size_t i = 0; i < 6; ++i) {
    EXPECT_NEAR(a.grad()[i], 2.0 * point.at(i) + 3.0, 1e-14);
    EXPECT_NEAR(a.grad()[i], b.grad()[i], 1e-14);
  }
}

TEST(BackwardTest, RepeatedRunsAreBitIdentical) {
  auto run = [] {
    Rng rng(5);
    Tensor w = uniform_tensor({4, 3}, rng).set_requires_grad(true);
    const Tensor x = uniform_tensor({2, 4}, rng);
    Graph g;
    GraphScope scope(g);
    Tensor loss = ops::cross_entropy(ops::matmul(x, w), std::vector<int>{0, 2});
    g.backward(loss);
    return std::pair{loss.item(), w.grad_tensor()};
  };
  const auto [l1, g1] = run();
  const auto [l2, g2] = run();
  EXPECT_EQ(l1, l2);
  EXPECT_TRUE(bitwise_equal(g1, g2));
}

TEST(GradCheckTest, SquareIsExact) {
  const double err = grad_check([](const Tensor& x) { return ops::sum(ops::square(x)); },
                                Tensor({1}, {3.0}), 1e-5);
  EXPECT_LT(err, 1e-6);
}

TEST(GradCheckTest, CrossEntropyOfLinearMap) {
  Rng rng(6);
  const Tensor x = uniform_tensor({3, 5}, rng);
  const Tensor w = uniform_tensor({5, 4}, rng);
  const std::vector<int> labels{1, 3, 0};
  EXPECT_LT(grad_check([&](const Tensor& m) { return ops::cross_entropy(ops::matmul(x, m), labels); },
                       w, 1e-5),
            1e-4);
}

TEST(GradCheckTest, TotalVariationAwayFromKinks) {
  // Random pixels keep every difference away from zero; the quadratic term
  // keeps interior coordinates (where the four signs may cancel) nonzero.
  Rng rng(7);
  const Tensor img = uniform_tensor({2, 5, 5}, rng, 0.0, 1.0);
  EXPECT_LT(grad_check([](const Tensor& x) {
              return ops::add(ops::tv_norm(x), ops::scale(ops::sum(ops::square(x)), 0.5));
            }, img, 1e-5),
            1e-4);
}

TEST(GradCheckTest, TwoLayerNetEveryLeaf) {
  Rng rng(8);
  const Tensor x = uniform_tensor({4, 6}, rng);
  const Tensor w1 = uniform_tensor({6, 5}, rng);
  const Tensor b1 = uniform_tensor({5}, rng);
  const Tensor w2 = uniform_tensor({5, 3}, rng);
  const std::vector<int> labels{0, 1, 2, 1};
  auto net = [&](const Tensor& a, const Tensor& b, const Tensor& c) {
    return ops::cross_entropy(ops::matmul(ops::softplus(ops::add_bias(ops::matmul(x, a), b)), c), labels);
  };
  EXPECT_LT(grad_check([&](const Tensor& t) { return net(t, b1, w2); }, w1, 1e-5), 1e-4);
  EXPECT_LT(grad_check([&](const Tensor& t) { return net(w1, t, w2); }, b1, 1e-5), 1e-4);
  EXPECT_LT(grad_check([&](const Tensor& t) { return net(w1, b1, t); }, w2, 1e-5), 1e-4);
}

struct PrimitiveCase {
  std::string name;
  Shape shape;
  std::function<Tensor(const Tensor&)> f;
  double lo = -2.0;
  double hi = 2.0;
};

class PrimitiveGradTest : public ::testing::TestWithParam<PrimitiveCase> {};

TEST_P(PrimitiveGradTest, MatchesCentralDifferences) {
  const auto& c = GetParam();
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    Rng rng(100 + seed);
    const Tensor point = uniform_tensor(c.shape, rng, c.lo, c.hi);
    const double err = grad_check([&](const Tensor& x) { return contract(c.f(x), 9 + seed); }, point, 1e-5);
    EXPECT_LT(err, 1e-4) << c.name << " seed " << seed;
  }
}

Tensor fixed(Shape shape, std::uint64_t seed) {
  Rng rng(seed);
  return uniform_tensor(std::move(shape), rng);
}

INSTANTIATE_TEST_SUITE_P(
    AllPrimitives, PrimitiveGradTest,
    ::testing::Values(
        PrimitiveCase{"add", {3, 4}, [](const Tensor& x) { return ops::add(x, fixed({3, 4}, 1)); }},
        PrimitiveCase{"sub", {3, 4}, [](const Tensor& x) { return ops::sub(fixed({3, 4}, 1), x); }},
        PrimitiveCase{"mul", {3, 4}, [](const Tensor& x) { return ops::mul(x, fixed({3, 4}, 2)); }},
        PrimitiveCase{"scale", {5}, [](const Tensor& x) { return ops::scale(x, -1.7); }},
        PrimitiveCase{"add_scalar", {5}, [](const Tensor& x) { return ops::add_scalar(x, 0.3); }},
        PrimitiveCase{"matmul_left", {3, 4}, [](const Tensor& x) { return ops::matmul(x, fixed({4, 2}, 3)); }},
        PrimitiveCase{"matmul_right", {4, 2}, [](const Tensor& x) { return ops::matmul(fixed({3, 4}, 3), x); }},
        PrimitiveCase{"add_bias", {4}, [](const Tensor& x) { return ops::add_bias(fixed({3, 4}, 4), x); }},
        PrimitiveCase{"conv2d_input", {2, 2, 5, 4},
                      [](const Tensor& x) { return ops::conv2d(x, fixed({3, 2, 3, 3}, 5), fixed({3}, 6), 1); }},
        PrimitiveCase{"conv2d_weight", {3, 2, 3, 3},
                      [](const Tensor& w) { return ops::conv2d(fixed({2, 2, 5, 4}, 7), w, fixed({3}, 6), 0); }},
        PrimitiveCase{"conv2d_bias", {3},
                      [](const Tensor& b) { return ops::conv2d(fixed({2, 2, 5, 4}, 7), fixed({3, 2, 3, 3}, 5), b, 1); }},
        PrimitiveCase{"relu", {10}, [](const Tensor& x) { return ops::relu(x); }},
        PrimitiveCase{"maxpool", {1, 2, 4, 6}, [](const Tensor& x) { return ops::maxpool2x2(x); }},
        PrimitiveCase{"upsample", {1, 2, 2, 3}, [](const Tensor& x) { return ops::upsample_nearest2x(x); }},
        PrimitiveCase{"concat", {1, 2, 3, 3},
                      [](const Tensor& x) { return ops::concat_channels(fixed({1, 1, 3, 3}, 8), x); }},
        PrimitiveCase{"flatten", {2, 3, 2}, [](const Tensor& x) { return ops::flatten(x); }},
        PrimitiveCase{"sum", {7}, [](const Tensor& x) { return ops::sum(ops::square(x)); }},
        PrimitiveCase{"mean", {7}, [](const Tensor& x) { return ops::mean(ops::square(x)); }},
        PrimitiveCase{"log", {6}, [](const Tensor& x) { return ops::log(x); }, 0.2, 2.0},
        PrimitiveCase{"exp", {6}, [](const Tensor& x) { return ops::exp(x); }},
        PrimitiveCase{"softplus", {6}, [](const Tensor& x) { return ops::softplus(x); }},
        PrimitiveCase{"sigmoid", {6}, [](const Tensor& x) { return ops::sigmoid(x); }},
        PrimitiveCase{"abs", {6}, [](const Tensor& x) { return ops::abs(x); }},
        PrimitiveCase{"square", {6}, [](const Tensor& x) { return ops::square(x); }},
        PrimitiveCase{"l2_norm", {6}, [](const Tensor& x) { return ops::l2_norm(x); }},
        PrimitiveCase{"softmax", {3, 4}, [](const Tensor& x) { return ops::softmax(x); }},
        PrimitiveCase{"log_softmax", {3, 4}, [](const Tensor& x) { return ops::log_softmax(x); }},
        PrimitiveCase{"cross_entropy", {3, 4},
                      [](const Tensor& x) { return ops::cross_entropy(x, std::vector<int>{0, 3, 1}); }}),
    [](const ::testing::TestParamInfo<PrimitiveCase>& info) { return info.param.name; });

}  // namespace
}  // namespace gradleak
