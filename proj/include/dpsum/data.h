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

// Meeting corpus ingestion: JSONL loading with schema validation, flattening
// to (query, transcript, summary) examples, meeting-disjoint splits and the
// word-level tokenizer.
//
// Corpus JSONL schema, one meeting per line:
//   {"id": str, "domain": "product"|"academic"|"committee",
//    "turns": [[speaker, utterance], ...],
//    "query_pairs": [[query, summary], ...],
//    "split": "train"|"valid"|"test"}          <- optional

#ifndef DPSUM_DATA_H_
#define DPSUM_DATA_H_

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "json.hpp"

namespace dpsum {

enum class Domain { kProduct, kAcademic, kCommittee };
inline constexpr std::array<Domain, 3> kAllDomains = {
    Domain::kProduct, Domain::kAcademic, Domain::kCommittee};

// "product", "academic", "committee".
std::string_view DomainName(Domain d);
// "Pro", "Aca", "Com".
std::string_view DomainShortName(Domain d);
// Accepts full or short names, case-insensitively. Throws ConfigError.
Domain ParseDomain(std::string_view name);

enum class Split { kTrain, kValid, kTest };
std::string_view SplitName(Split s);  // "train", "valid", "test"
Split ParseSplit(std::string_view name);  // throws ConfigError

struct Turn {
  std::string speaker;
  std::string utterance;
};

struct QueryPair {
  std::string query;
  std::string summary;
};

struct MeetingRecord {
  std::string id;
  Domain domain = Domain::kProduct;
  std::vector<Turn> turns;
  std::vector<QueryPair> query_pairs;
  std::optional<Split> split;  // explicit assignment, if the corpus has one
};

// One line of JSONL, without the trailing newline. Key order is fixed.
std::string RecordToJsonLine(const MeetingRecord& record);

struct LoadOptions {
  // Skip malformed lines (reporting them in diagnostics) instead of failing.
  bool skip_malformed = false;
};

struct LoadResult {
  std::vector<MeetingRecord> records;
  std::vector<std::string> diagnostics;  // "line N: field.path: problem"
};

// Parses JSONL text; `source` names the input in messages. Blank lines are
// ignored. Throws ParseError listing every malformed line (unless skipping),
// on duplicate meeting ids, and with "no records" when nothing valid remains.
LoadResult ParseCorpus(std::string_view text, std::string_view source,
                       const LoadOptions& options = {});
LoadResult LoadCorpus(const std::string& path, const LoadOptions& options = {});

struct Example {
  std::string id;  // "<meeting id>#<query index>"
  std::string meeting_id;
  Domain domain = Domain::kProduct;
  std::string query;
  std::string transcript;  // "SPEAKER: utterance" lines joined by '\n'
  std::string summary;
};

std::string TranscriptText(std::span<const Turn> turns);

// One example per (meeting, query pair), in input order.
std::vector<Example> Flatten(std::span<const MeetingRecord> records,
                             std::optional<Domain> filter = std::nullopt);

// Fraction of unassigned meetings per domain that go to valid and to test.
inline constexpr double kValidFraction = 0.15;
inline constexpr double kTestFraction = 0.15;

// Meeting-level split. Explicit "split" fields win; the remaining meetings of
// each domain are ordered by a hash of their id and cut into
// train / valid / test blocks of about 70 / 15 / 15 percent.
std::unordered_map<std::string, Split> AssignSplits(
    std::span<const MeetingRecord> records);

struct CorpusSplit {
  std::vector<Example> train;
  std::vector<Example> valid;
  std::vector<Example> test;

  const std::vector<Example>& Get(Split s) const;
};

CorpusSplit SplitCorpus(std::span<const MeetingRecord> records,
                        std::optional<Domain> filter = std::nullopt);

nlohmann::ordered_json ExampleToJson(const Example& e);
// Requires id, query, transcript and summary; domain and meeting_id default
// to product and the id. Throws ParseError naming the missing field.
Example ExampleFromJson(const nlohmann::json& j);

// Lowercases ASCII letters and splits on every run of characters that are
// not ASCII letters or digits. Bytes >= 0x80 count as word characters so
// UTF-8 words stay whole. Shared by the tokenizer and every metric.
std::vector<std::string> WordTokens(std::string_view text);

// Word-level vocabulary: the five model specials followed by the most
// frequent training types (ties broken lexicographically).
class Tokenizer {
 public:
  static constexpr std::array<std::string_view, 5> kSpecialTokens = {
      "<unk>", "<q>", "<x>", "<y>", "<eos>"};

  // Counts query, transcript and summary words of `train`. `max_vocab` is
  // the total table size including specials. Throws ConfigError when
  // max_vocab < 6 and DomainError when the text has no words.
  static Tokenizer Build(std::span<const Example> train, int64_t max_vocab);
  // Parses the {token: id} JSON table. Throws ParseError.
  static Tokenizer FromJson(std::string_view text);

  // Compact {token: id} object in id order.
  std::string ToJson() const;
  // Hex FNV-1a of ToJson().
  std::string Hash() const;

  int64_t size() const { return static_cast<int64_t>(tokens_.size()); }
  int32_t Id(std::string_view token) const;  // <unk> id when absent
  const std::string& Token(int32_t id) const;  // throws IndexError
  std::vector<int32_t> Encode(std::string_view text) const;
  // Space-joined tokens; special ids are skipped.
  std::string Decode(std::span<const int32_t> ids) const;

 private:
  void Index();

  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int32_t> ids_;
};

}  // namespace dpsum

#endif  // DPSUM_DATA_H_
