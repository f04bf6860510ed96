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

// Low-rank adapters for parameter-efficient private fine-tuning.
//
// An adapted projection computes y = x W + b + s * (x A^T) B^T with frozen
// W [d x p], trainable A [r x d] ~ N(0, 0.02^2), trainable B [p x r] = 0 and
// s = alpha / r. Both low-rank products are affine ops on the tape, so ghost
// clipping sees them like any other layer.

#ifndef DPSUM_LORA_H_
#define DPSUM_LORA_H_

#include <cstdint>
#include <string>
#include <vector>

#include "dpsum/autodiff.h"
#include "dpsum/tensor.h"

namespace dpsum {

struct LoraConfig {
  bool enabled = false;
  int64_t rank = 8;
  double alpha = 16.0;
  // Attention projections to adapt, among "q", "k", "v", "o".
  std::vector<std::string> targets = {"q", "v"};

  double scaling() const { return alpha / static_cast<double>(rank); }

  // Throws ConfigError for rank < 1, rank > min(in, out), non-positive alpha
  // or an unknown target.
  void Validate(int64_t in_features, int64_t out_features) const;
};

// Parameter names of the adapter attached to `layer` (e.g. "h0.attn.q").
std::string LoraAName(const std::string& layer);
std::string LoraBName(const std::string& layer);

// Adds a fresh adapter for the [in x out] weight `layer + ".w"`.
void AttachLora(ParamStore& params, const std::string& layer,
                const LoraConfig& config, uint64_t seed);

// Marks every parameter that is not an adapter factor as frozen.
void FreezeBase(ParamStore& params);

bool IsAdapterParam(const std::string& name);

// y = x W + b + scaling * (x A^T) B^T. `bias` may be invalid.
Var LoraForward(Var x, Var weight, Var bias, Var lora_a, Var lora_b,
                double scaling);

// Trainable parameter count over total parameter count.
double TrainableFraction(const ParamStore& params);

// Adapter factors only / everything else.
ParamStore AdapterParams(const ParamStore& params);
ParamStore BaseParams(const ParamStore& params);

}  // namespace dpsum

#endif  // DPSUM_LORA_H_
