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

#include "dpsum/data.h"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <map>
#include <set>
#include <utility>

#include <fmt/format.h>

#include "dpsum/common.h"
#include "dpsum/model.h"

namespace dpsum {
namespace {

using nlohmann::json;
using nlohmann::ordered_json;

static_assert(kNumSpecials == 5);

std::string Lower(std::string_view s) {
  std::string out(s);
  for (char& c : out) {
    c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  }
  return out;
}

// Schema violation at a field path, e.g. "turns[2][0]".
struct SchemaError {
  std::string path;
  std::string problem;
};

std::string TypeName(const json& j) { return j.type_name(); }

const json& Field(const json& obj, const char* key) {
  auto it = obj.find(key);
  if (it == obj.end()) throw SchemaError{key, "missing required field"};
  return *it;
}

std::string String(const json& j, const std::string& path, bool nonempty) {
  if (!j.is_string()) {
    throw SchemaError{path, "expected string, got " + TypeName(j)};
  }
  std::string s = j.get<std::string>();
  if (nonempty && s.find_first_not_of(" \t\r\n") == std::string::npos) {
    throw SchemaError{path, "must be a nonempty string"};
  }
  return s;
}

// [[a, b], ...] with at least one entry.
std::vector<std::pair<std::string, std::string>> Pairs(const json& j,
                                                       const std::string& path,
                                                       bool nonempty_second,
                                                       bool nonempty_first) {
  if (!j.is_array()) {
    throw SchemaError{path, "expected array, got " + TypeName(j)};
  }
  if (j.empty()) throw SchemaError{path, "must contain at least one entry"};
  std::vector<std::pair<std::string, std::string>> out;
  for (size_t i = 0; i < j.size(); ++i) {
    const std::string p = fmt::format("{}[{}]", path, i);
    const json& e = j[i];
    if (!e.is_array() || e.size() != 2) {
      throw SchemaError{p, "expected a two-element array"};
    }
    out.emplace_back(String(e[0], p + "[0]", nonempty_first),
                     String(e[1], p + "[1]", nonempty_second));
  }
  return out;
}

MeetingRecord ParseRecord(const json& j) {
  if (!j.is_object()) {
    throw SchemaError{"<root>", "expected object, got " + TypeName(j)};
  }
  MeetingRecord r;
  r.id = String(Field(j, "id"), "id", true);
  const std::string domain = String(Field(j, "domain"), "domain", true);
  try {
    r.domain = ParseDomain(domain);
  } catch (const ConfigError&) {
    throw SchemaError{"domain", "unknown domain '" + domain + "'"};
  }
  for (auto& [s, u] : Pairs(Field(j, "turns"), "turns", false, false)) {
    r.turns.push_back({std::move(s), std::move(u)});
  }
  for (auto& [q, s] :
       Pairs(Field(j, "query_pairs"), "query_pairs", true, true)) {
    r.query_pairs.push_back({std::move(q), std::move(s)});
  }
  if (auto it = j.find("split"); it != j.end()) {
    const std::string s = String(*it, "split", true);
    try {
      r.split = ParseSplit(s);
    } catch (const ConfigError&) {
      throw SchemaError{"split", "unknown split '" + s + "'"};
    }
  }
  return r;
}

}  // namespace

std::string_view DomainName(Domain d) {
  switch (d) {
    case Domain::kProduct:
      return "product";
    case Domain::kAcademic:
      return "academic";
    case Domain::kCommittee:
      return "committee";
  }
  return "?";
}

std::string_view DomainShortName(Domain d) {
  switch (d) {
    case Domain::kProduct:
      return "Pro";
    case Domain::kAcademic:
      return "Aca";
    case Domain::kCommittee:
      return "Com";
  }
  return "?";
}

Domain ParseDomain(std::string_view name) {
  const std::string n = Lower(name);
  for (Domain d : kAllDomains) {
    if (n == DomainName(d) || n == Lower(DomainShortName(d))) return d;
  }
  throw ConfigError(fmt::format(
      "unknown domain '{}' (expected product, academic or committee)", name));
}

std::string_view SplitName(Split s) {
  switch (s) {
    case Split::kTrain:
      return "train";
    case Split::kValid:
      return "valid";
    case Split::kTest:
      return "test";
  }
  return "?";
}

Split ParseSplit(std::string_view name) {
  const std::string n = Lower(name);
  if (n == "train") return Split::kTrain;
  if (n == "valid" || n == "val" || n == "validation") return Split::kValid;
  if (n == "test") return Split::kTest;
  throw ConfigError(fmt::format(
      "unknown split '{}' (expected train, valid or test)", name));
}

std::string RecordToJsonLine(const MeetingRecord& record) {
  ordered_json j;
  j["id"] = record.id;
  j["domain"] = DomainName(record.domain);
  ordered_json turns = ordered_json::array();
  for (const Turn& t : record.turns) {
    turns.push_back(ordered_json::array({t.speaker, t.utterance}));
  }
  j["turns"] = std::move(turns);
  ordered_json pairs = ordered_json::array();
  for (const QueryPair& p : record.query_pairs) {
    pairs.push_back(ordered_json::array({p.query, p.summary}));
  }
  j["query_pairs"] = std::move(pairs);
  if (record.split) j["split"] = SplitName(*record.split);
  return j.dump();
}

LoadResult ParseCorpus(std::string_view text, std::string_view source,
                       const LoadOptions& options) {
  LoadResult result;
  std::set<std::string> seen;
  int64_t line_no = 0;
  size_t pos = 0;
  while (pos < text.size()) {
    size_t end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string_view::npos) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error& e) {
      result.diagnostics.push_back(
          fmt::format("line {}: invalid JSON: {}", line_no, e.what()));
      continue;
    }
    try {
      MeetingRecord r = ParseRecord(j);
      if (!seen.insert(r.id).second) {
        throw ParseError(fmt::format("{}: line {}: duplicate meeting id '{}'",
                                     source, line_no, r.id));
      }
      result.records.push_back(std::move(r));
    } catch (const SchemaError& e) {
      result.diagnostics.push_back(
          fmt::format("line {}: {}: {}", line_no, e.path, e.problem));
    }
  }
  if (!result.diagnostics.empty() && !options.skip_malformed) {
    std::string msg = fmt::format("{}: {} malformed line(s)", source,
                                  result.diagnostics.size());
    for (const std::string& d : result.diagnostics) msg += "\n  " + d;
    throw ParseError(msg);
  }
  if (result.records.empty()) {
    throw ParseError(fmt::format("{}: no records", source));
  }
  return result;
}

LoadResult LoadCorpus(const std::string& path, const LoadOptions& options) {
  return ParseCorpus(ReadFile(path), path, options);
}

std::string TranscriptText(std::span<const Turn> turns) {
  std::string out;
  for (size_t i = 0; i < turns.size(); ++i) {
    if (i > 0) out += '\n';
    out += turns[i].speaker;
    out += ": ";
    out += turns[i].utterance;
  }
  return out;
}

std::vector<Example> Flatten(std::span<const MeetingRecord> records,
                             std::optional<Domain> filter) {
  std::vector<Example> out;
  for (const MeetingRecord& r : records) {
    if (filter && r.domain != *filter) continue;
    const std::string transcript = TranscriptText(r.turns);
    for (size_t i = 0; i < r.query_pairs.size(); ++i) {
      out.push_back({fmt::format("{}#{}", r.id, i), r.id, r.domain,
                     r.query_pairs[i].query, transcript,
                     r.query_pairs[i].summary});
    }
  }
  return out;
}

std::unordered_map<std::string, Split> AssignSplits(
    std::span<const MeetingRecord> records) {
  std::unordered_map<std::string, Split> out;
  std::map<Domain, std::vector<std::pair<uint64_t, std::string>>> pending;
  for (const MeetingRecord& r : records) {
    if (r.split) {
      out[r.id] = *r.split;
    } else {
      pending[r.domain].emplace_back(Fnv1a64(r.id), r.id);
    }
  }
  for (auto& [domain, ids] : pending) {
    std::sort(ids.begin(), ids.end());
    const auto n = static_cast<int64_t>(ids.size());
    int64_t n_valid = std::llround(kValidFraction * static_cast<double>(n));
    int64_t n_test = std::llround(kTestFraction * static_cast<double>(n));
    // Keep at least one training meeting whenever there is any.
    while (n_valid + n_test >= n && n > 0 && (n_valid > 0 || n_test > 0)) {
      if (n_test >= n_valid) {
        --n_test;
      } else {
        --n_valid;
      }
    }
    const int64_t n_train = n - n_valid - n_test;
    for (int64_t i = 0; i < n; ++i) {
      const Split s = i < n_train             ? Split::kTrain
                      : i < n_train + n_valid ? Split::kValid
                                              : Split::kTest;
      out[ids[static_cast<size_t>(i)].second] = s;
    }
  }
  return out;
}

const std::vector<Example>& CorpusSplit::Get(Split s) const {
  switch (s) {
    case Split::kTrain:
      return train;
    case Split::kValid:
      return valid;
    case Split::kTest:
      return test;
  }
  return train;
}

CorpusSplit SplitCorpus(std::span<const MeetingRecord> records,
                        std::optional<Domain> filter) {
  const auto assignment = AssignSplits(records);
  CorpusSplit out;
  for (Example& e : Flatten(records, filter)) {
    switch (assignment.at(e.meeting_id)) {
      case Split::kTrain:
        out.train.push_back(std::move(e));
        break;
      case Split::kValid:
        out.valid.push_back(std::move(e));
        break;
      case Split::kTest:
        out.test.push_back(std::move(e));
        break;
    }
  }
  return out;
}

ordered_json ExampleToJson(const Example& e) {
  ordered_json j;
  j["id"] = e.id;
  j["meeting_id"] = e.meeting_id;
  j["domain"] = DomainName(e.domain);
  j["query"] = e.query;
  j["transcript"] = e.transcript;
  j["summary"] = e.summary;
  return j;
}

Example ExampleFromJson(const json& j) {
  if (!j.is_object()) throw ParseError("example: expected a JSON object");
  auto str = [&](const char* key, bool required) -> std::string {
    auto it = j.find(key);
    if (it == j.end()) {
      if (required) {
        throw ParseError(fmt::format("example: missing field '{}'", key));
      }
      return {};
    }
    if (!it->is_string()) {
      throw ParseError(fmt::format("example: field '{}' must be a string", key));
    }
    return it->get<std::string>();
  };
  Example e;
  e.id = str("id", true);
  e.meeting_id = str("meeting_id", false);
  if (e.meeting_id.empty()) e.meeting_id = e.id;
  const std::string domain = str("domain", false);
  if (!domain.empty()) {
    try {
      e.domain = ParseDomain(domain);
    } catch (const ConfigError& err) {
      throw ParseError(fmt::format("example '{}': domain: {}", e.id, err.what()));
    }
  }
  e.query = str("query", true);
  e.transcript = str("transcript", true);
  e.summary = str("summary", false);
  return e;
}

std::vector<std::string> WordTokens(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (std::isalnum(c) || c >= 0x80) {
      cur.push_back(static_cast<char>(std::tolower(c)));
    } else if (!cur.empty()) {
      out.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

Tokenizer Tokenizer::Build(std::span<const Example> train, int64_t max_vocab) {
  if (max_vocab < kNumSpecials + 1) {
    throw ConfigError(fmt::format("max_vocab must be >= {}, got {}",
                                  kNumSpecials + 1, max_vocab));
  }
  std::unordered_map<std::string, int64_t> counts;
  for (const Example& e : train) {
    for (const std::string* text : {&e.query, &e.transcript, &e.summary}) {
      for (std::string& w : WordTokens(*text)) ++counts[std::move(w)];
    }
  }
  if (counts.empty()) throw DomainError("cannot build a vocabulary from empty training text");
  std::vector<std::pair<std::string, int64_t>> ranked(counts.begin(),
                                                      counts.end());
  std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  const auto keep = std::min<size_t>(
      ranked.size(), static_cast<size_t>(max_vocab - kNumSpecials));
  Tokenizer t;
  for (std::string_view s : kSpecialTokens) t.tokens_.emplace_back(s);
  for (size_t i = 0; i < keep; ++i) t.tokens_.push_back(ranked[i].first);
  t.Index();
  return t;
}

void Tokenizer::Index() {
  ids_.clear();
  for (size_t i = 0; i < tokens_.size(); ++i) {
    ids_.emplace(tokens_[i], static_cast<int32_t>(i));
  }
}

Tokenizer Tokenizer::FromJson(std::string_view text) {
  ordered_json j;
  try {
    j = ordered_json::parse(text);
  } catch (const ordered_json::parse_error& e) {
    throw ParseError(fmt::format("tokenizer: invalid JSON: {}", e.what()));
  }
  if (!j.is_object()) throw ParseError("tokenizer: expected a {token: id} object");
  Tokenizer t;
  t.tokens_.assign(j.size(), std::string());
  std::vector<bool> filled(j.size(), false);
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (!it.value().is_number_integer()) {
      throw ParseError(fmt::format("tokenizer: id of '{}' is not an integer", it.key()));
    }
    const auto id = it.value().get<int64_t>();
    if (id < 0 || id >= static_cast<int64_t>(j.size()) || filled[static_cast<size_t>(id)]) {
      throw ParseError(fmt::format("tokenizer: ids must be a permutation of 0..{}; bad id {} for '{}'",
                                   j.size() - 1, id, it.key()));
    }
    filled[static_cast<size_t>(id)] = true;
    t.tokens_[static_cast<size_t>(id)] = it.key();
  }
  for (size_t i = 0; i < kSpecialTokens.size(); ++i) {
    if (i >= t.tokens_.size() || t.tokens_[i] != kSpecialTokens[i]) {
      throw ParseError(fmt::format("tokenizer: id {} must be the special token {}", i,
                                   kSpecialTokens[i]));
    }
  }
  t.Index();
  return t;
}

std::string Tokenizer::ToJson() const {
  ordered_json j = ordered_json::object();
  for (size_t i = 0; i < tokens_.size(); ++i) j[tokens_[i]] = i;
  return j.dump() + "\n";
}

std::string Tokenizer::Hash() const { return HexDigest(Fnv1a64(ToJson())); }

int32_t Tokenizer::Id(std::string_view token) const {
  auto it = ids_.find(std::string(token));
  return it == ids_.end() ? kUnkId : it->second;
}

const std::string& Tokenizer::Token(int32_t id) const {
  if (id < 0 || id >= size()) {
    throw IndexError(fmt::format("token id {} outside [0, {})", id, size()));
  }
  return tokens_[static_cast<size_t>(id)];
}

std::vector<int32_t> Tokenizer::Encode(std::string_view text) const {
  std::vector<int32_t> out;
  for (const std::string& w : WordTokens(text)) out.push_back(Id(w));
  return out;
}

std::string Tokenizer::Decode(std::span<const int32_t> ids) const {
  std::string out;
  for (int32_t id : ids) {
    if (id < kNumSpecials) {
      Token(id);  // range check
      continue;
    }
    if (!out.empty()) out += ' ';
    out += Token(id);
  }
  return out;
}

}  // namespace dpsum
