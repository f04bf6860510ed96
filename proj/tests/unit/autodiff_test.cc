// Copyright 2026 The dpsum Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "dpsum/autodiff.h"

#include <cmath>
#include <vector>

#include <gtest/gtest.h>

#include "dpsum/common.h"
#include "../common/gradcheck.h"

namespace dpsum {
namespace {

using ::dpsum::testing::CheckGradients;
using ::dpsum::testing::RandomTensor;

constexpr double kTol = 1e-4;
constexpr int kInstances = 20;

// Draws a dimension in [lo, hi].
int64_t Dim(CounterRng& rng, int64_t lo, int64_t hi) {
  return lo + static_cast<int64_t>(rng.NextBelow(hi - lo + 1));
}

TEST(AffineTest, IdentityInputSelectsWeightRows) {
  Tape tape;
  Tensor x({1, 3, 3});
  for (int i = 0; i < 3; ++i) x[i * 3 + i] = 1.0;
  CounterRng rng(1);
  Tensor w = RandomTensor({3, 4}, rng);
  Var y = Affine(tape.Constant(x), tape.Constant(w), tape.Constant(Tensor({4})));
  EXPECT_EQ(y.value().Reshaped(w.shape()), w);
}

TEST(AffineTest, ZeroInputBroadcastsBias) {
  Tape tape;
  Tensor b({3}, std::vector<double>{1.0, -2.0, 0.5});
  CounterRng rng(2);
  Var y = Affine(tape.Constant(Tensor({2, 2, 5})),
                 tape.Constant(RandomTensor({5, 3}, rng)), tape.Constant(b));
  for (int64_t r = 0; r < 4; ++r) {
    for (int64_t j = 0; j < 3; ++j) EXPECT_EQ(y.value()[r * 3 + j], b[j]);
  }
}

TEST(AffineTest, ShapeMismatchNamesBothShapes) {
  Tape tape;
  Var x = tape.Constant(Tensor({2, 3, 4}));
  Var w = tape.Constant(Tensor({5, 6}));
  try {
    Affine(x, w);
    FAIL() << "expected ShapeError";
  } catch (const ShapeError& e) {
    EXPECT_NE(std::string(e.what()).find("[2x3x4]"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("[5x6]"), std::string::npos);
  }
}

TEST(AffineTest, MatchesFiniteDifferences) {
  CounterRng rng(10);
  for (int i = 0; i < kInstances; ++i) {
    const int64_t b = Dim(rng, 1, 3), t = Dim(rng, 1, 4), d = Dim(rng, 1, 5),
                  p = Dim(rng, 1, 5);
    auto report = CheckGradients(
        [](Tape&, const std::vector<Var>& in) {
          return Affine(in[0], in[1], in[2]);
        },
        {RandomTensor({b, t, d}, rng), RandomTensor({d, p}, rng),
         RandomTensor({p}, rng)},
        100 + i);
    EXPECT_LT(report.max_rel_error, kTol) << report.worst;
  }
}

TEST(AffineTest, TransposedMatchesFiniteDifferences) {
  CounterRng rng(11);
  for (int i = 0; i < kInstances; ++i) {
    const int64_t b = Dim(rng, 1, 3), t = Dim(rng, 1, 4), d = Dim(rng, 1, 5),
                  p = Dim(rng, 1, 5);
    auto report = CheckGradients(
        [](Tape&, const std::vector<Var>& in) {
          return AffineTransposed(in[0], in[1]);
        },
        {RandomTensor({b, t, d}, rng), RandomTensor({p, d}, rng)}, 200 + i);
    EXPECT_LT(report.max_rel_error, kTol) << report.worst;
  }
}

TEST(EmbedLookupTest, MatchesFiniteDifferencesAndRejectsBadIndex) {
  CounterRng rng(12);
  for (int i = 0; i < kInstances; ++i) {
    const int64_t v = Dim(rng, 2, 6), d = Dim(rng, 1, 4), b = Dim(rng, 1, 3),
                  t = Dim(rng, 1, 4);
    std::vector<int32_t> ids(static_cast<size_t>(b * t));
    for (auto& id : ids) id = static_cast<int32_t>(rng.NextBelow(v));
    auto report = CheckGradients(
        [&](Tape&, const std::vector<Var>& in) {
          return EmbedLookup(in[0], ids, b, t);
        },
        {RandomTensor({v, d}, rng)}, 300 + i);
    EXPECT_LT(report.max_rel_error, kTol) << report.worst;
  }
  Tape tape;
  Var table = tape.Constant(Tensor({4, 2}));
  std::vector<int32_t> bad{0, 4};
  EXPECT_THROW(EmbedLookup(table, bad, 1, 2), IndexError);
}

TEST(ElementwiseTest, AddMulScaleMatchFiniteDifferences) {
  CounterRng rng(13);
  for (int i = 0; i < kInstances; ++i) {
    const Shape shape{Dim(rng, 1, 3), Dim(rng, 1, 4), Dim(rng, 1, 4)};
    auto report = CheckGradients(
        [](Tape&, const std::vector<Var>& in) {
          return Scale(Add(Mul(in[0], in[1]), in[0]), -1.7);
        },
        {RandomTensor(shape, rng), RandomTensor(shape, rng)}, 400 + i);
    EXPECT_LT(report.max_rel_error, kTol) << report.worst;
  }
}

TEST(MatMulTest, MatchesFiniteDifferences) {
  CounterRng rng(14);
  for (int i = 0; i < kInstances; ++i) {
    const int64_t m = Dim(rng, 1, 4), k = Dim(rng, 1, 4), n = Dim(rng, 1, 4);
    auto report = CheckGradients(
        [](Tape&, const std::vector<Var>& in) { return MatMul(in[0], in[1]); },
        {RandomTensor({2, m, k}, rng), RandomTensor({k, n}, rng)}, 500 + i);
    EXPECT_LT(report.max_rel_error, kTol) << report.worst;
  }
}

TEST(SoftmaxTest, RowsSumToOneAndMatchFiniteDifferences) {
  CounterRng rng(15);
  for (int i = 0; i < kInstances; ++i) {
    const Shape shape{Dim(rng, 1, 3), Dim(rng, 1, 3), Dim(rng, 2, 6)};
    Tape tape;
    Var y = Softmax(tape.Constant(RandomTensor(shape, rng)));
    for (int64_t r = 0; r < y.value().rows(); ++r) {
      double s = 0.0;
      for (int64_t j = 0; j < y.value().cols(); ++j) {
        s += y.value()[r * y.value().cols() + j];
      }
      EXPECT_NEAR(s, 1.0, 1e-12);
    }
    auto report = CheckGradients(
        [](Tape&, const std::vector<Var>& in) { return Softmax(in[0]); },
        {RandomTensor(shape, rng)}, 600 + i);
    EXPECT_LT(report.max_rel_error, kTol) << report.worst;
  }
}

TEST(LayerNormTest, MatchesFiniteDifferences) {
  CounterRng rng(16);
  for (int i = 0; i < kInstances; ++i) {
    const int64_t n = Dim(rng, 2, 6);
    auto report = CheckGradients(
        [](Tape&, const std::vector<Var>& in) {
          return LayerNorm(in[0], in[1], in[2]);
        },
        {RandomTensor({Dim(rng, 1, 3), Dim(rng, 1, 3), n}, rng),
         RandomTensor({n}, rng), RandomTensor({n}, rng)},
        700 + i);
    EXPECT_LT(report.max_rel_error, kTol) << report.worst;
  }
}

TEST(GeluTest, MatchesFiniteDifferences) {
  CounterRng rng(17);
  for (int i = 0; i < kInstances; ++i) {
    auto report = CheckGradients(
        [](Tape&, const std::vector<Var>& in) { return Gelu(in[0]); },
        {RandomTensor({Dim(rng, 1, 3), Dim(rng, 1, 5), 3}, rng, 2.0)},
        800 + i);
    EXPECT_LT(report.max_rel_error, kTol) << report.worst;
  }
}

TEST(CausalAttentionTest, MatchesFiniteDifferences) {
  CounterRng rng(18);
  for (int i = 0; i < kInstances; ++i) {
    const int64_t heads = Dim(rng, 1, 2);
    const Shape shape{Dim(rng, 1, 2), Dim(rng, 1, 5), heads * Dim(rng, 1, 3)};
    auto report = CheckGradients(
        [heads](Tape&, const std::vector<Var>& in) {
          return CausalAttention(in[0], in[1], in[2], heads);
        },
        {RandomTensor(shape, rng), RandomTensor(shape, rng),
         RandomTensor(shape, rng)},
        900 + i);
    EXPECT_LT(report.max_rel_error, kTol) << report.worst;
  }
}

TEST(CausalAttentionTest, OutputIgnoresFuturePositions) {
  CounterRng rng(19);
  const Shape shape{2, 6, 4};
  Tensor q = RandomTensor(shape, rng), k = RandomTensor(shape, rng),
         v = RandomTensor(shape, rng);
  Tape base_tape;
  Tensor base = CausalAttention(base_tape.Constant(q), base_tape.Constant(k),
                                base_tape.Constant(v), 2)
                    .value();
  for (int64_t t = 0; t < 6; ++t) {
    Tensor q2 = q, k2 = k, v2 = v;
    // Perturb every position after t.
    for (int64_t b = 0; b < 2; ++b) {
      for (int64_t s = t + 1; s < 6; ++s) {
        for (int64_t j = 0; j < 4; ++j) {
          const int64_t idx = (b * 6 + s) * 4 + j;
          q2[idx] += 3.0;
          k2[idx] -= 2.0;
          v2[idx] *= -5.0;
        }
      }
    }
    Tape tape;
    Tensor out = CausalAttention(tape.Constant(q2), tape.Constant(k2),
                                 tape.Constant(v2), 2)
                     .value();
    for (int64_t b = 0; b < 2; ++b) {
      for (int64_t s = 0; s <= t; ++s) {
        for (int64_t j = 0; j < 4; ++j) {
          const int64_t idx = (b * 6 + s) * 4 + j;
          EXPECT_EQ(out[idx], base[idx]) << "t=" << t << " s=" << s;
        }
      }
    }
  }
}

TEST(CrossEntropyTest, UniformLogitsGiveLogV) {
  Tape tape;
  Var logits = tape.Constant(Tensor({2, 3, 4}, 0.7));
  std::vector<int32_t> targets{0, 1, 2, 3, 0, 1};
  std::vector<double> mask(6, 1.0);
  Var loss = CrossEntropyPerExample(logits, targets, mask);
  EXPECT_NEAR(loss.value()[0], std::log(4.0), 1e-15);
  EXPECT_NEAR(loss.value()[1], std::log(4.0), 1e-15);
}

TEST(CrossEntropyTest, LargeMarginGivesNearZeroLoss) {
  Tensor l({1, 2, 3}, -50.0);
  l[1] = 50.0;
  l[3 + 2] = 50.0;
  Tape tape;
  std::vector<int32_t> targets{1, 2};
  std::vector<double> mask{1.0, 1.0};
  Var loss = CrossEntropyPerExample(tape.Constant(l), targets, mask);
  EXPECT_LT(loss.value()[0], 1e-40);
}

TEST(CrossEntropyTest, AllMaskedExampleHasZeroLossAndGradient) {
  CounterRng rng(20);
  Tape tape;
  Var logits = tape.Leaf("logits", RandomTensor({2, 3, 5}, rng), true);
  std::vector<int32_t> targets{1, 2, 3, 4, 0, 1};
  std::vector<double> mask{1, 0, 1, 0, 0, 0};
  Var loss = CrossEntropyPerExample(logits, targets, mask);
  EXPECT_EQ(loss.value()[1], 0.0);
  BackwardResult r = tape.Backward(loss);
  const Tensor& g = r.grads.at("logits");
  for (int64_t i = 15; i < 30; ++i) EXPECT_EQ(g[i], 0.0);
}

TEST(CrossEntropyTest, MatchesFiniteDifferences) {
  CounterRng rng(21);
  for (int i = 0; i < kInstances; ++i) {
    const int64_t b = Dim(rng, 1, 3), t = Dim(rng, 1, 4), v = Dim(rng, 2, 6);
    std::vector<int32_t> targets(static_cast<size_t>(b * t));
    std::vector<double> mask(targets.size());
    for (size_t j = 0; j < targets.size(); ++j) {
      targets[j] = static_cast<int32_t>(rng.NextBelow(v));
      mask[j] = rng.NextBelow(4) == 0 ? 0.0 : 1.0;
    }
    auto report = CheckGradients(
        [&](Tape&, const std::vector<Var>& in) {
          return CrossEntropyPerExample(in[0], targets, mask);
        },
        {RandomTensor({b, t, v}, rng, 2.0)}, 1000 + i);
    EXPECT_LT(report.max_rel_error, kTol) << report.worst;
  }
}

TEST(CrossEntropyTest, RejectsOutOfRangeTarget) {
  Tape tape;
  std::vector<int32_t> targets{5};
  std::vector<double> mask{1.0};
  EXPECT_THROW(
      CrossEntropyPerExample(tape.Constant(Tensor({1, 1, 5})), targets, mask),
      IndexError);
}

TEST(SumPerExampleTest, MatchesFiniteDifferences) {
  CounterRng rng(22);
  for (int i = 0; i < kInstances; ++i) {
    auto report = CheckGradients(
        [](Tape&, const std::vector<Var>& in) {
          return SumPerExample(Mul(in[0], in[0]));
        },
        {RandomTensor({Dim(rng, 1, 4), Dim(rng, 1, 3), 2}, rng)}, 1100 + i);
    EXPECT_LT(report.max_rel_error, kTol) << report.worst;
  }
}

TEST(TapeTest, BackwardOnDetachedTensorIsUsageError) {
  Tape tape;
  Tape other;
  Var y = Scale(other.Leaf("x", Tensor({2}, 1.0), true), 2.0);
  EXPECT_THROW(tape.Backward(Var()), UsageError);
  EXPECT_THROW(tape.Backward(y), UsageError);
}

TEST(TapeTest, RepeatedBackwardIsDeterministic) {
  CounterRng rng(23);
  Tape tape;
  Var w = tape.Leaf("w", RandomTensor({4, 3}, rng), true);
  Var y = Gelu(Affine(tape.Constant(RandomTensor({2, 5, 4}, rng)), w));
  Var loss = SumPerExample(Mul(y, y));
  Tensor seed({2}, std::vector<double>{0.3, -1.2});
  BackwardResult a = tape.Backward(loss, seed);
  BackwardResult b = tape.Backward(loss, seed);
  EXPECT_EQ(a.grads.at("w"), b.grads.at("w"));
}

TEST(TapeTest, NonFiniteValuesAreRejected) {
  Tape tape;
  Tensor bad({2});
  bad[1] = std::nan("");
  EXPECT_THROW(tape.Constant(bad), NumericError);
  Var x = tape.Constant(Tensor({1, 2}, 1e300));
  EXPECT_THROW(Mul(x, x), NumericError);
}

TEST(TapeTest, FrozenLeavesReceiveNoGradient) {
  CounterRng rng(24);
  Tape tape;
  Var w = tape.Leaf("w", RandomTensor({3, 3}, rng), false);
  Var u = tape.Leaf("u", RandomTensor({3, 3}, rng), true);
  Var x = tape.Constant(RandomTensor({1, 2, 3}, rng));
  BackwardResult r = tape.Backward(SumPerExample(Affine(Affine(x, w), u)));
  EXPECT_EQ(r.grads.count("w"), 0u);
  EXPECT_EQ(r.grads.count("u"), 1u);
}

}  // namespace
}  // namespace dpsum
