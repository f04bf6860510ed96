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

// Deterministic template-grammar generator for a desk-scale meeting corpus.
//
// Every meeting plants one "decision" sentence per query; the gold summary of
// that query is a fixed template around the verbatim decision sentence.
// Domains differ in speakers, vocabulary and transcript length.

#ifndef DPSUM_SYNTH_H_
#define DPSUM_SYNTH_H_

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "dpsum/data.h"

namespace dpsum {

// Mean transcript length in word tokens per domain.
struct LengthProfile {
  double product_tokens = 30.0;
  // Academic and committee transcripts are about 2.2 times as long as
  // product ones in the real corpus statistics (13317.3 / 6007.7).
  double academic_ratio = 2.2;
  double committee_ratio = 2.2;

  double MeanTokens(Domain d) const;
};

struct SynthOptions {
  uint64_t seed = 7;
  int64_t meetings_per_domain = 140;
  int64_t min_queries = 1;
  int64_t max_queries = 3;
  LengthProfile profile;

  // Throws ConfigError.
  void Validate() const;
};

// Meetings of all three domains, product first, each in index order.
std::vector<MeetingRecord> SynthCorpus(const SynthOptions& options);

// The corpus as JSONL text (one RecordToJsonLine per line).
std::string SynthCorpusJsonl(const SynthOptions& options);

// Gold summary for a planted decision sentence.
std::string DecisionSummary(Domain domain, std::string_view decision);

}  // namespace dpsum

#endif  // DPSUM_SYNTH_H_
