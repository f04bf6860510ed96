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

#include "dpsum/lora.h"

#include <cmath>

#include <gtest/gtest.h>

#include "dpsum/common.h"
#include "dpsum/dp_optim.h"
#include "dpsum/model.h"
#include "dpsum/rng.h"

namespace dpsum {
namespace {

Tensor Gaussian(Shape shape, CounterRng& rng, double scale = 1.0) {
  Tensor t(std::move(shape));
  for (double& v : t.data()) v = scale * rng.NextGaussian();
  return t;
}

TEST(LoraConfigTest, RankValidation) {
  LoraConfig c;
  c.rank = 0;
  EXPECT_THROW(c.Validate(8, 8), ConfigError);
  c.rank = 9;
  EXPECT_THROW(c.Validate(8, 16), ConfigError);
  c.rank = 8;
  EXPECT_NO_THROW(c.Validate(8, 16));
  c.targets = {"mlp"};
  EXPECT_THROW(c.Validate(8, 16), ConfigError);
  EXPECT_DOUBLE_EQ(LoraConfig{}.scaling(), 2.0);
}

TEST(LoraForwardTest, FreshAdapterEqualsBaseExactly) {
  CounterRng rng(1);
  ParamStore p{{"l.w", {Gaussian({6, 5}, rng), false}},
               {"l.b", {Gaussian({5}, rng), false}}};
  LoraConfig c;
  c.rank = 3;
  AttachLora(p, "l", c, 9);
  Tensor x = Gaussian({2, 4, 6}, rng);
  Tape tape;
  Var xv = tape.Constant(x);
  Var w = tape.Param(p, "l.w");
  Var b = tape.Param(p, "l.b");
  Tensor base = Affine(xv, w, b).value();
  Tensor adapted = LoraForward(xv, w, b, tape.Param(p, LoraAName("l")),
                               tape.Param(p, LoraBName("l")), c.scaling())
                       .value();
  for (int64_t i = 0; i < base.size(); ++i) {
    EXPECT_LE(std::abs(base[i] - adapted[i]), 1e-15);
  }
  EXPECT_EQ(p.at(LoraAName("l")).value.shape(), (Shape{3, 6}));
  EXPECT_EQ(p.at(LoraBName("l")).value.shape(), (Shape{5, 3}));
}

TEST(LoraForwardTest, FullRankAdapterFitsAnyLinearDelta) {
  // Fit y = x (W + D) with W frozen by training only the adapter.
  CounterRng rng(2);
  const int64_t d = 3;
  ParamStore p{{"l.w", {Gaussian({d, d}, rng), false}},
               {"l.b", {Tensor({d}), false}}};
  LoraConfig c;
  c.rank = d;
  c.alpha = static_cast<double>(d);
  AttachLora(p, "l", c, 3);
  Tensor delta = Gaussian({d, d}, rng);
  Tensor x = Gaussian({16, 1, d}, rng);
  Tensor target({16, 1, d});
  for (int64_t n = 0; n < 16; ++n) {
    for (int64_t j = 0; j < d; ++j) {
      double s = 0.0;
      for (int64_t i = 0; i < d; ++i) {
        s += x[n * d + i] * (p.at("l.w").value[i * d + j] + delta[i * d + j]);
      }
      target[n * d + j] = s;
    }
  }
  OptimState state;
  state.config.lr = 0.01;
  double loss = 0.0;
  for (int step = 0; step < 4000; ++step) {
    Tape tape;
    Var y = LoraForward(tape.Constant(x), tape.Param(p, "l.w"),
                        tape.Param(p, "l.b"), tape.Param(p, LoraAName("l")),
                        tape.Param(p, LoraBName("l")), c.scaling());
    Var diff = Add(y, Scale(tape.Constant(target), -1.0));
    Var per = SumPerExample(Mul(diff, diff));
    loss = 0.0;
    for (double v : per.value().data()) loss += v;
    BackwardResult r = tape.Backward(per);
    DpAdamStep(p, r.grads, state);
  }
  EXPECT_LT(loss, 1e-8);
}

TEST(LoraModelTest, TrainableFractionOnDefaultTinyConfig) {
  ModelConfig mc;  // d = 64, 2 layers, V = 512, L = 512
  ParamStore p = InitParams(mc, 1);
  EXPECT_EQ(TrainableFraction(p), 1.0);
  const int64_t base = CountParameters(p);
  LoraConfig lc;
  lc.enabled = true;
  ApplyLora(p, mc, lc, 2);
  // Two adapted projections per layer, each r*d + d*r parameters.
  const int64_t adapters = mc.n_layers * 2 * (8 * 64 + 64 * 8);
  EXPECT_EQ(CountParameters(p, true), adapters);
  EXPECT_DOUBLE_EQ(TrainableFraction(p),
                   static_cast<double>(adapters) / static_cast<double>(base + adapters));
  EXPECT_LT(TrainableFraction(p), 0.15);
}

TEST(LoraModelTest, HandCountOnSmallConfig) {
  ModelConfig mc;
  mc.vocab_size = 10;
  mc.context_length = 16;
  mc.d_model = 4;
  mc.n_layers = 1;
  mc.n_heads = 2;
  ParamStore p = InitParams(mc, 1);
  // tok 40 + pos 64 + ln 8 + attn 4*(16+4) + ln 8 + fc 64+16 + proj 64+4
  // + ln_f 8.
  EXPECT_EQ(CountParameters(p), 40 + 64 + 8 + 80 + 8 + 80 + 68 + 8);
  LoraConfig lc;
  lc.enabled = true;
  lc.rank = 2;
  ApplyLora(p, mc, lc, 1);
  EXPECT_EQ(CountParameters(p, true), 2 * (2 * 4 + 4 * 2));
}

TEST(LoraModelTest, FreshAdaptersLeaveModelOutputUnchanged) {
  ModelConfig mc;
  mc.vocab_size = 20;
  mc.context_length = 16;
  mc.d_model = 16;
  mc.n_heads = 2;
  ParamStore base = InitParams(mc, 5);
  ParamStore adapted = base;
  LoraConfig lc;
  lc.enabled = true;
  lc.rank = 4;
  ApplyLora(adapted, mc, lc, 6);
  std::vector<int32_t> ids{1, 7, 8, 2, 9, 3, 11};
  Tape t1, t2;
  Tensor a = ForwardLogits(t1, base, mc, {}, ids, 1, 7).value();
  Tensor b = ForwardLogits(t2, adapted, mc, lc, ids, 1, 7).value();
  for (int64_t i = 0; i < a.size(); ++i) EXPECT_LE(std::abs(a[i] - b[i]), 1e-15);
}

TEST(LoraModelTest, OnlyAdaptersReceiveGradients) {
  ModelConfig mc;
  mc.vocab_size = 12;
  mc.context_length = 16;
  mc.d_model = 8;
  mc.n_heads = 2;
  ParamStore p = InitParams(mc, 5);
  LoraConfig lc;
  lc.enabled = true;
  lc.rank = 2;
  ApplyLora(p, mc, lc, 6);
  Batch b;
  b.batch = 2;
  b.steps = 4;
  b.inputs = {1, 5, 6, 3, 1, 7, 3, 8};
  b.targets = {5, 6, 3, 9, 7, 3, 8, 4};
  b.mask = {0, 0, 1, 1, 0, 1, 1, 1};
  Tape tape;
  Var losses = ForwardLoss(tape, p, mc, lc, b);
  BackwardResult r = tape.Backward(losses);
  for (const auto& [name, g] : r.grads) EXPECT_TRUE(IsAdapterParam(name)) << name;
  EXPECT_EQ(r.grads.size(), 8u);
  // Perturbing a frozen weight does change the loss.
  const double before = losses.value()[0];
  p.at("h0.attn.k.w").value[0] += 1e-3;
  Tape t2;
  EXPECT_NE(ForwardLoss(t2, p, mc, lc, b).value()[0], before);
}

TEST(LoraModelTest, GhostNormsOverAdaptersMatchNaive) {
  ModelConfig mc;
  mc.vocab_size = 12;
  mc.context_length = 16;
  mc.d_model = 8;
  mc.n_heads = 2;
  for (int trial = 0; trial < 10; ++trial) {
    ParamStore p = InitParams(mc, 10 + trial);
    LoraConfig lc;
    lc.enabled = true;
    lc.rank = 1 + trial % 4;
    ApplyLora(p, mc, lc, 6);
    CounterRng rng(20 + trial);
    for (auto& [name, param] : p) {
      if (IsAdapterParam(name)) {
        for (double& v : param.value.data()) v = 0.3 * rng.NextGaussian();
      }
    }
    Batch b;
    b.batch = 3;
    b.steps = 5;
    for (int i = 0; i < 15; ++i) {
      b.inputs.push_back(static_cast<int32_t>(rng.NextBelow(12)));
      b.targets.push_back(static_cast<int32_t>(rng.NextBelow(12)));
      b.mask.push_back(1.0);
    }
    Tape tape;
    Var losses = ForwardLoss(tape, p, mc, lc, b);
    BackwardOptions o;
    o.capture_per_example = true;
    o.accumulate_leaf_grads = false;
    auto ghost = PerExampleNormsGhost(tape.Backward(losses, o), p, 3);
    auto naive = PerExampleNormsNaive(PerExampleGradsByBackprop(tape, losses, p));
    for (int i = 0; i < 3; ++i) {
      EXPECT_NEAR(ghost[i], naive[i], 1e-6 * naive[i]);
    }
  }
}

}  // namespace
}  // namespace dpsum
