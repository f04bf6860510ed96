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

#include "dpsum/synth.h"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <span>
#include <utility>

#include <fmt/format.h>

#include "dpsum/common.h"
#include "dpsum/rng.h"

namespace dpsum {
namespace {

struct Lexicon {
  std::string_view id_prefix;
  std::string_view team;
  std::vector<std::string_view> speakers;
  std::vector<std::string_view> objects;
  std::vector<std::string_view> verbs;
  std::vector<std::string_view> adjectives;
  std::vector<std::string_view> qualities;
  // Placeholders: {o} object, {a} adjective, {q} quality.
  std::vector<std::string_view> fillers;
  std::vector<std::string_view> queries;
};

const Lexicon& LexiconFor(Domain d) {
  static const Lexicon kProduct{
      "pro",
      "team",
      {"Manager", "Marketing", "Designer", "Interface"},
      {"remote", "button", "battery", "case", "screen", "scroll wheel", "logo",
       "colour", "price", "charger", "menu", "voice control"},
      {"use", "remove", "add", "redesign", "test", "cheapen"},
      {"rubber", "yellow", "curved", "larger", "solar", "simple"},
      {"fancy", "cheap", "ergonomic", "trendy", "clunky"},
      {"i think the {o} should be {a}", "what about the {o}",
       "the {o} is too {q}", "users want a {a} {o}", "okay",
       "let us look at the {o}", "the {o} looks {q} to me",
       "our budget covers the {o}"},
      {"what did the {team} decide about the {o}",
       "what was decided on the {o}"},
  };
  static const Lexicon kAcademic{
      "aca",
      "group",
      {"Professor", "PhD", "Postdoc", "Student"},
      {"recognizer", "dataset", "features", "baseline", "transcripts",
       "microphone", "noise model", "network", "evaluation", "lexicon",
       "alignment", "corpus"},
      {"retrain", "collect", "compare", "publish", "tune", "freeze"},
      {"noisy", "german", "digit", "spontaneous", "smaller", "neural"},
      {"promising", "worse", "stable", "odd", "unclear"},
      {"the {o} results look {q}", "did you run the {o} again",
       "we need more data for the {o}", "i looked at the {a} {o}", "right",
       "the {o} is still {q}", "maybe the {o} needs a {a} setup",
       "mm hmm"},
      {"what did the {team} conclude about the {o}",
       "what was the plan for the {o}"},
  };
  static const Lexicon kCommittee{
      "com",
      "committee",
      {"Chair", "Member", "Minister", "Witness"},
      {"budget", "school meals", "housing", "hospital", "transport", "funding",
       "report", "policy", "inquiry", "staffing", "childcare", "grant"},
      {"approve", "review", "fund", "reject", "postpone", "publish"},
      {"regional", "annual", "public", "revised", "national", "interim"},
      {"urgent", "costly", "unfair", "overdue", "adequate"},
      {"the {o} needs more scrutiny", "can the witness comment on the {o}",
       "members raised the {a} {o}", "order please", "thank you chair",
       "the {o} seems {q}", "the {a} {o} was discussed last session",
       "we heard evidence on the {o}"},
      {"what was the {team} decision on the {o}",
       "what did members agree about the {o}"},
  };
  switch (d) {
    case Domain::kProduct:
      return kProduct;
    case Domain::kAcademic:
      return kAcademic;
    case Domain::kCommittee:
      return kCommittee;
  }
  return kProduct;
}

template <typename T>
const T& Pick(CounterRng& rng, const std::vector<T>& v) {
  return v[rng.NextBelow(v.size())];
}

std::string Fill(std::string_view tmpl, const Lexicon& lex,
                 std::string_view object, CounterRng& rng) {
  std::string out;
  for (size_t i = 0; i < tmpl.size(); ++i) {
    if (tmpl[i] == '{') {
      const size_t close = tmpl.find('}', i);
      const std::string_view key = tmpl.substr(i + 1, close - i - 1);
      if (key == "o") {
        out += object;
      } else if (key == "a") {
        out += Pick(rng, lex.adjectives);
      } else if (key == "q") {
        out += Pick(rng, lex.qualities);
      } else if (key == "team") {
        out += lex.team;
      }
      i = close;
    } else {
      out += tmpl[i];
    }
  }
  return out;
}

int64_t TurnTokens(const Turn& t) {
  return static_cast<int64_t>(WordTokens(t.speaker).size() +
                              WordTokens(t.utterance).size());
}

MeetingRecord SynthMeeting(const SynthOptions& o, Domain d, int64_t index) {
  const Lexicon& lex = LexiconFor(d);
  CounterRng rng(CounterRng::DeriveKey(
      o.seed, {Fnv1a64(DomainName(d)), static_cast<uint64_t>(index)}));
  MeetingRecord m;
  m.id = fmt::format("{}_{:04}", lex.id_prefix, index);
  m.domain = d;

  const auto k = o.min_queries + static_cast<int64_t>(rng.NextBelow(
                                     static_cast<uint64_t>(o.max_queries - o.min_queries + 1)));
  // Distinct decision objects via a partial Fisher-Yates shuffle.
  std::vector<std::string_view> objects = lex.objects;
  for (int64_t i = 0; i < k; ++i) {
    const auto j = static_cast<size_t>(i) +
                   rng.NextBelow(objects.size() - static_cast<size_t>(i));
    std::swap(objects[static_cast<size_t>(i)], objects[j]);
  }
  std::vector<Turn> turns;
  int64_t length = 0;
  for (int64_t i = 0; i < k; ++i) {
    const std::string_view object = objects[static_cast<size_t>(i)];
    const std::string decision =
        fmt::format("we will {} the {} {}", Pick(rng, lex.verbs),
                    Pick(rng, lex.adjectives), object);
    turns.push_back({std::string(Pick(rng, lex.speakers)), decision});
    length += TurnTokens(turns.back());
    m.query_pairs.push_back({Fill(Pick(rng, lex.queries), lex, object, rng),
                             DecisionSummary(d, decision)});
  }
  // Add filler turns while doing so brings the length closer to a target
  // drawn uniformly from +-25% around the domain mean.
  const double mean = o.profile.MeanTokens(d);
  const double target = mean * (0.75 + 0.5 * rng.NextUniform());
  while (true) {
    Turn filler{std::string(Pick(rng, lex.speakers)),
                Fill(Pick(rng, lex.fillers), lex, Pick(rng, lex.objects), rng)};
    const int64_t next = length + TurnTokens(filler);
    if (std::abs(static_cast<double>(next) - target) >=
        std::abs(static_cast<double>(length) - target)) {
      break;
    }
    turns.push_back(std::move(filler));
    length = next;
  }
  for (size_t i = turns.size(); i > 1; --i) {
    std::swap(turns[i - 1], turns[rng.NextBelow(i)]);
  }
  m.turns = std::move(turns);
  return m;
}

}  // namespace

double LengthProfile::MeanTokens(Domain d) const {
  switch (d) {
    case Domain::kProduct:
      return product_tokens;
    case Domain::kAcademic:
      return product_tokens * academic_ratio;
    case Domain::kCommittee:
      return product_tokens * committee_ratio;
  }
  return product_tokens;
}

void SynthOptions::Validate() const {
  if (meetings_per_domain < 1) {
    throw ConfigError(fmt::format("meetings per domain must be >= 1, got {}",
                                  meetings_per_domain));
  }
  if (min_queries < 1 || max_queries < min_queries || max_queries > 12) {
    throw ConfigError(fmt::format(
        "queries per meeting must satisfy 1 <= min <= max <= 12, got {}..{}",
        min_queries, max_queries));
  }
  if (!(profile.product_tokens > 0.0 && profile.academic_ratio > 0.0 &&
        profile.committee_ratio > 0.0)) {
    throw ConfigError("length profile values must be positive");
  }
}

std::vector<MeetingRecord> SynthCorpus(const SynthOptions& options) {
  options.Validate();
  std::vector<MeetingRecord> out;
  for (Domain d : kAllDomains) {
    for (int64_t i = 0; i < options.meetings_per_domain; ++i) {
      out.push_back(SynthMeeting(options, d, i));
    }
  }
  return out;
}

std::string SynthCorpusJsonl(const SynthOptions& options) {
  std::string out;
  for (const MeetingRecord& m : SynthCorpus(options)) {
    out += RecordToJsonLine(m);
    out += '\n';
  }
  return out;
}

std::string DecisionSummary(Domain domain, std::string_view decision) {
  return fmt::format("the {} agreed that {}", LexiconFor(domain).team,
                     decision);
}

}  // namespace dpsum
