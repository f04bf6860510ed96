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

#include "dpsum/rng.h"

#include <cmath>
#include <numbers>

namespace dpsum {
namespace {

constexpr uint64_t kGolden = 0x9e3779b97f4a7c15ULL;

}  // namespace

uint64_t Mix64(uint64_t z) {
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

uint64_t CounterRng::DeriveKey(uint64_t seed,
                               std::initializer_list<uint64_t> ids) {
  uint64_t key = Mix64(seed + kGolden);
  for (uint64_t id : ids) key = Mix64(key ^ Mix64(id + kGolden));
  return key;
}

uint64_t CounterRng::BitsAt(uint64_t counter) const {
  return Mix64(key_ + (counter + 1) * kGolden);
}

double CounterRng::UniformAt(uint64_t counter) const {
  return (static_cast<double>(BitsAt(counter) >> 11) + 0.5) * 0x1.0p-53;
}

double CounterRng::GaussianAt(uint64_t counter) const {
  const double u1 = UniformAt(2 * counter);
  const double u2 = UniformAt(2 * counter + 1);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

uint64_t CounterRng::NextBelow(uint64_t bound) {
  // Rejection on the top of the range keeps the result unbiased.
  const uint64_t limit = UINT64_MAX - UINT64_MAX % bound;
  uint64_t bits;
  do {
    bits = NextBits();
  } while (bits >= limit);
  return bits % bound;
}

}  // namespace dpsum
