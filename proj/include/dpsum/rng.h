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

#ifndef DPSUM_RNG_H_
#define DPSUM_RNG_H_

#include <cstdint>
#include <initializer_list>

namespace dpsum {

// Counter-based generator built on the SplitMix64 output function.
//
// Draw number n of the stream with key k is Mix64(k + (n + 1) * 0x9e37...),
// which is exactly the n-th output of SplitMix64 seeded with k. Because a draw
// depends only on (key, counter), streams can be addressed directly, e.g. the
// noise for element j of a parameter at a given step, without replaying any
// state. Everything random in the toolkit (initialization, shuffling, noise,
// the synthetic corpus) goes through this class so results are identical
// across standard library implementations.
//
// Uniform doubles take the top 53 bits, shifted to the open interval (0, 1).
// Gaussians use the cosine branch of Box-Muller on uniforms 2n and 2n + 1.
class CounterRng {
 public:
  explicit CounterRng(uint64_t key) : key_(key) {}

  // Key derivation for a named sub-stream, e.g. (seed, step, Fnv1a64(name)).
  static uint64_t DeriveKey(uint64_t seed, std::initializer_list<uint64_t> ids);

  uint64_t key() const { return key_; }

  uint64_t BitsAt(uint64_t counter) const;
  double UniformAt(uint64_t counter) const;
  double GaussianAt(uint64_t counter) const;

  // Sequential interface over the same stream.
  uint64_t NextBits() { return BitsAt(counter_++); }
  double NextUniform() { return UniformAt(counter_++); }
  double NextGaussian() { return GaussianAt(counter_++); }
  // Unbiased integer in [0, bound). `bound` must be positive.
  uint64_t NextBelow(uint64_t bound);

 private:
  uint64_t key_;
  uint64_t counter_ = 0;
};

uint64_t Mix64(uint64_t z);

}  // namespace dpsum

#endif  // DPSUM_RNG_H_
