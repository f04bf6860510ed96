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

#ifndef DPSUM_COMMON_H_
#define DPSUM_COMMON_H_

#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>

namespace dpsum {

// Base of every error thrown by the library. The CLI maps ConfigError to
// exit code 2 and everything else to exit code 3.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Argument outside the mathematical domain of an operation.
class DomainError : public Error {
 public:
  using Error::Error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

class IndexError : public Error {
 public:
  using Error::Error;
};

// API misuse, e.g. running backward from a tensor that is not on the tape.
class UsageError : public Error {
 public:
  using Error::Error;
};

// NaN or Inf produced or consumed by an operation.
class NumericError : public Error {
 public:
  using Error::Error;
};

// Inconsistent gradient maps or parameter sets.
class StructuralError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class CalibrationError : public Error {
 public:
  using Error::Error;
};

class ParseError : public Error {
 public:
  using Error::Error;
};

// A sequence does not fit the model's context window.
class ContextOverflowError : public Error {
 public:
  using Error::Error;
};

// 64-bit FNV-1a. Used for stream keys, tokenizer/corpus fingerprints and
// artifact hashes in run manifests.
constexpr uint64_t kFnvOffset = 0xcbf29ce484222325ULL;
constexpr uint64_t kFnvPrime = 0x100000001b3ULL;

constexpr uint64_t Fnv1a64(std::string_view bytes,
                           uint64_t hash = kFnvOffset) {
  for (unsigned char c : bytes) {
    hash ^= c;
    hash *= kFnvPrime;
  }
  return hash;
}

// Lowercase 16-digit hex rendering of a 64-bit hash.
std::string HexDigest(uint64_t hash);

// Hash of a file's full contents. Throws Error if the file cannot be read.
uint64_t HashFile(const std::string& path);

// Reads a whole file. Throws Error on failure.
std::string ReadFile(const std::string& path);

// Writes `contents` to `path` via a temporary sibling and rename, so readers
// never observe a partially written file.
void WriteFileAtomic(const std::string& path, std::string_view contents);

}  // namespace dpsum

#endif  // DPSUM_COMMON_H_
