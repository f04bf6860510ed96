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

// Differentially private gradient machinery: per-example gradient norms
// (a naive oracle and the ghost-clipping variant), clipping, the Gaussian
// mechanism, and the Adam / AdamW update rules.

#ifndef DPSUM_DP_OPTIM_H_
#define DPSUM_DP_OPTIM_H_

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "dpsum/autodiff.h"
#include "dpsum/tensor.h"

namespace dpsum {

enum class ClipMode { kNaive, kGhost };

const char* ClipModeName(ClipMode mode);
// Accepts "naive" and "ghost"; throws ConfigError otherwise.
ClipMode ParseClipMode(const std::string& name);

struct ClipConfig {
  double clipping_norm = 0.1;
  double noise_multiplier = 0.0;
  int64_t batch_size = 1;  // divisor applied after noising
  ClipMode mode = ClipMode::kGhost;

  // Throws DomainError unless C > 0, sigma >= 0 and B >= 1.
  void Validate() const;
};

// Full-parameter L2 norm of each example's gradient map. Throws
// StructuralError when the maps disagree on parameter names or shapes.
std::vector<double> PerExampleNormsNaive(std::span<const GradMap> per_example);

// Per-example norms from the captures of a backward pass run with
// capture_per_example. For each parameter with only affine-type captures the
// squared norm of example b is
//
//   sum_{k,l} < X_k X_l^T , Y_k Y_l^T >_F    (rows of example b only)
//
// over all captured uses k, l of the parameter, which never forms the
// [rows x cols] gradient. When (sum_k T_k)^2 > rows * cols the gradient is
// materialized instead, as it is for parameters that mix explicit and affine
// captures. Every trainable parameter of `params` must have been captured;
// otherwise ConfigError.
std::vector<double> PerExampleNormsGhost(const BackwardResult& captures,
                                         const ParamStore& params,
                                         int64_t batch);

// Reconstructs each example's full gradient map from captures.
std::vector<GradMap> PerExampleGradsFromCaptures(const BackwardResult& captures,
                                                 const ParamStore& params,
                                                 int64_t batch);

// Oracle: one backward pass per example with a one-hot seed over the
// per-example loss vector `losses` [B]. Trainable parameters that are not
// reached get zero gradients.
std::vector<GradMap> PerExampleGradsByBackprop(const Tape& tape, Var losses,
                                               const ParamStore& params);

// c_i = min(1, C / norm_i), and 1 for a zero norm.
std::vector<double> ClipFactors(std::span<const double> norms,
                                double clipping_norm);

// Sum of c_i * g_i accumulated in ascending example order.
GradMap ClippedSum(std::span<const GradMap> per_example,
                   std::span<const double> factors);

// Zero-filled gradient for every trainable parameter.
GradMap ZeroGrads(const ParamStore& params);

// Adds zero tensors for trainable parameters missing from `grads`.
void CompleteGrads(const ParamStore& params, GradMap& grads);

// (clipped_sum + N(0, sigma^2 C^2 I)) / B. Element j of parameter `name` at
// `step` receives CounterRng(DeriveKey(seed, {step, Fnv1a64(name)}))
// .GaussianAt(j), so noise depends on (seed, step, name) only. With sigma = 0
// no generator is consulted and the result is the clipped mean.
GradMap Privatize(const GradMap& clipped_sum, const ClipConfig& config,
                  uint64_t seed, int64_t step);

struct PrivateGradient {
  GradMap grad;                 // privatized mean gradient
  std::vector<double> norms;    // per-example norms before clipping
  std::vector<double> factors;  // clip factors
};

// One DP step's gradient for the per-example loss vector `losses` [B].
// Ghost mode runs two backward passes over the same tape: the first records
// captures and yields the norms, the second backpropagates the seed c and so
// produces sum_i c_i g_i directly. Naive mode materializes every example's
// gradient through B backward passes.
PrivateGradient ComputePrivateGradient(const Tape& tape, Var losses,
                                       const ParamStore& params,
                                       const ClipConfig& config, uint64_t seed,
                                       int64_t step);

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
};

struct OptimState {
  AdamConfig config;
  int64_t t = 0;
  std::map<std::string, Tensor> m;
  std::map<std::string, Tensor> v;
};

// Adam with bias correction. Nonzero weight decay is coupled, i.e. added to
// the gradient as wd * theta. `grad` must cover exactly the trainable
// parameters.
void DpAdamStep(ParamStore& params, const GradMap& grad, OptimState& state);

// Adam with decoupled weight decay: theta *= (1 - lr * wd) before the Adam
// update.
void AdamWStep(ParamStore& params, const GradMap& grad, OptimState& state);

}  // namespace dpsum

#endif  // DPSUM_DP_OPTIM_H_
