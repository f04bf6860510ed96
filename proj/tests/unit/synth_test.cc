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

#include <map>
#include <set>
#include <string>

#include <gtest/gtest.h>

#include "dpsum/common.h"
#include "dpsum/data.h"

namespace dpsum {
namespace {

TEST(SynthTest, ByteIdenticalForEqualSeeds) {
  SynthOptions o;
  o.seed = 7;
  const std::string a = SynthCorpusJsonl(o);
  EXPECT_EQ(a, SynthCorpusJsonl(o));
  o.seed = 8;
  EXPECT_NE(a, SynthCorpusJsonl(o));
}

TEST(SynthTest, OutputLoadsCleanly) {
  SynthOptions o;
  o.meetings_per_domain = 20;
  LoadResult r = ParseCorpus(SynthCorpusJsonl(o), "synth");
  EXPECT_EQ(r.records.size(), 60u);
  EXPECT_TRUE(r.diagnostics.empty());
}

TEST(SynthTest, TranscriptLengthsFollowProfile) {
  for (uint64_t seed : {7ULL, 11ULL}) {
    SynthOptions o;
    o.seed = seed;
    std::map<Domain, std::pair<double, int>> acc;
    for (const MeetingRecord& m : SynthCorpus(o)) {
      auto& [sum, n] = acc[m.domain];
      sum += static_cast<double>(WordTokens(TranscriptText(m.turns)).size());
      ++n;
    }
    std::map<Domain, double> mean;
    for (Domain d : kAllDomains) {
      mean[d] = acc[d].first / acc[d].second;
      const double want = o.profile.MeanTokens(d);
      EXPECT_NEAR(mean[d], want, 0.1 * want) << DomainName(d);
    }
    EXPECT_NEAR(mean[Domain::kAcademic] / mean[Domain::kProduct], 2.2, 0.22);
    EXPECT_NEAR(mean[Domain::kCommittee] / mean[Domain::kProduct], 2.2, 0.22);
  }
}

TEST(SynthTest, DecisionSentencesPlantedVerbatim) {
  SynthOptions o;
  o.meetings_per_domain = 30;
  for (const MeetingRecord& m : SynthCorpus(o)) {
    ASSERT_FALSE(m.turns.empty());
    for (const QueryPair& qp : m.query_pairs) {
      bool found = false;
      for (const Turn& t : m.turns) {
        if (t.utterance.rfind("we will ", 0) == 0 &&
            qp.summary.find(t.utterance) != std::string::npos) {
          found = true;
          EXPECT_EQ(qp.summary, DecisionSummary(m.domain, t.utterance));
        }
      }
      EXPECT_TRUE(found) << m.id << ": " << qp.summary;
    }
  }
}

TEST(SynthTest, DefaultsGiveAboutTwoHundredTrainingPairsPerDomain) {
  const auto records = SynthCorpus(SynthOptions{});
  for (Domain d : kAllDomains) {
    CorpusSplit cs = SplitCorpus(records, d);
    EXPECT_GE(cs.train.size(), 170u) << DomainName(d);
    EXPECT_LE(cs.train.size(), 230u) << DomainName(d);
    EXPECT_FALSE(cs.valid.empty());
    EXPECT_FALSE(cs.test.empty());
  }
}

TEST(SynthTest, DomainsUseDifferentVocabulary) {
  SynthOptions o;
  o.meetings_per_domain = 10;
  std::map<Domain, std::set<std::string>> words;
  for (const MeetingRecord& m : SynthCorpus(o)) {
    for (const std::string& w : WordTokens(TranscriptText(m.turns))) {
      words[m.domain].insert(w);
    }
  }
  EXPECT_EQ(words[Domain::kProduct].count("remote"), 1u);
  EXPECT_EQ(words[Domain::kAcademic].count("remote"), 0u);
  EXPECT_EQ(words[Domain::kCommittee].count("budget"), 1u);
}

TEST(SynthTest, Validation) {
  SynthOptions o;
  o.meetings_per_domain = 0;
  EXPECT_THROW(SynthCorpus(o), ConfigError);
  o = SynthOptions{};
  o.min_queries = 3;
  o.max_queries = 2;
  EXPECT_THROW(SynthCorpus(o), ConfigError);
  o = SynthOptions{};
  o.profile.academic_ratio = 0.0;
  EXPECT_THROW(SynthCorpus(o), ConfigError);
}

}  // namespace
}  // namespace dpsum
