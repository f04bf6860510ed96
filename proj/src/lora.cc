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

#include <algorithm>

#include <fmt/format.h>

#include "dpsum/common.h"
#include "dpsum/rng.h"

namespace dpsum {
namespace {

constexpr std::string_view kASuffix = ".lora_a";
constexpr std::string_view kBSuffix = ".lora_b";
constexpr double kAdapterInitStd = 0.02;

}  // namespace

void LoraConfig::Validate(int64_t in_features, int64_t out_features) const {
  if (rank < 1) {
    throw ConfigError(fmt::format("LoRA rank must be >= 1, got {}", rank));
  }
  if (rank > std::min(in_features, out_features)) {
    throw ConfigError(fmt::format(
        "LoRA rank {} exceeds min(in, out) = min({}, {})", rank, in_features,
        out_features));
  }
  if (!(alpha > 0.0)) {
    throw ConfigError(fmt::format("LoRA alpha must be positive, got {}", alpha));
  }
  for (const std::string& t : targets) {
    if (t != "q" && t != "k" && t != "v" && t != "o") {
      throw ConfigError(fmt::format(
          "unknown LoRA target '{}' (expected q, k, v or o)", t));
    }
  }
}

std::string LoraAName(const std::string& layer) {
  return layer + std::string(kASuffix);
}

std::string LoraBName(const std::string& layer) {
  return layer + std::string(kBSuffix);
}

bool IsAdapterParam(const std::string& name) {
  return name.ends_with(kASuffix) || name.ends_with(kBSuffix);
}

void AttachLora(ParamStore& params, const std::string& layer,
                const LoraConfig& config, uint64_t seed) {
  auto it = params.find(layer + ".w");
  if (it == params.end()) {
    throw ConfigError(fmt::format("no weight '{}.w' to adapt", layer));
  }
  const Tensor& w = it->second.value;
  if (w.rank() != 2) {
    throw ShapeError(fmt::format("LoRA target '{}.w' must be 2-D, got {}",
                                 layer, ShapeString(w.shape())));
  }
  const int64_t in = w.dim(0);
  const int64_t out = w.dim(1);
  config.Validate(in, out);
  Tensor a({config.rank, in});
  CounterRng rng(CounterRng::DeriveKey(seed, {Fnv1a64(LoraAName(layer))}));
  for (double& v : a.data()) v = kAdapterInitStd * rng.NextGaussian();
  params[LoraAName(layer)] = {std::move(a), true};
  params[LoraBName(layer)] = {Tensor({out, config.rank}), true};
}

void FreezeBase(ParamStore& params) {
  for (auto& [name, p] : params) {
    if (!IsAdapterParam(name)) p.trainable = false;
  }
}

Var LoraForward(Var x, Var weight, Var bias, Var lora_a, Var lora_b,
                double scaling) {
  Var base = Affine(x, weight, bias);
  Var delta = AffineTransposed(AffineTransposed(x, lora_a), lora_b);
  return Add(base, Scale(delta, scaling));
}

double TrainableFraction(const ParamStore& params) {
  const int64_t total = CountParameters(params);
  if (total == 0) throw DomainError("empty parameter store");
  return static_cast<double>(CountParameters(params, true)) /
         static_cast<double>(total);
}

ParamStore AdapterParams(const ParamStore& params) {
  ParamStore out;
  for (const auto& [name, p] : params) {
    if (IsAdapterParam(name)) out.emplace(name, p);
  }
  return out;
}

ParamStore BaseParams(const ParamStore& params) {
  ParamStore out;
  for (const auto& [name, p] : params) {
    if (!IsAdapterParam(name)) out.emplace(name, p);
  }
  return out;
}

}  // namespace dpsum
