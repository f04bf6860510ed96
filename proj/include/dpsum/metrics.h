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

// Summarization metrics over word tokens (see WordTokens: lowercase, split on
// non-alphanumeric runs, no stemming or stopword removal): ROUGE-1/2/L,
// transcript faithfulness, summary-length statistics and hallucination rate,
// plus the cross-domain score report.

#ifndef DPSUM_METRICS_H_
#define DPSUM_METRICS_H_

#include <array>
#include <algorithm>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "dpsum/data.h"
#include "dpsum/table.h"

namespace dpsum {

struct RougeScore {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

using Tokens = std::span<const std::string>;

// P = overlap / candidate_count, R = overlap / reference_count,
// F1 = 2PR / (P + R), all zero when either count is zero.
RougeScore ScoreFromOverlap(int64_t overlap, int64_t candidate_count,
                            int64_t reference_count);

// Clipped n-gram overlap. Throws DomainError unless n is 1 or 2.
RougeScore RougeN(Tokens candidate, Tokens reference, int n);

// Longest common subsequence length by dynamic programming over two rows.
// Rows live on the stack when the second sequence is short.
template <typename T>
int64_t LcsLength(std::span<const T> a, std::span<const T> b) {
  constexpr size_t kStack = 64;
  std::array<int32_t, kStack + 1> prev_buf, cur_buf;  // only [0, m] is used
  std::vector<int32_t> prev_heap, cur_heap;
  int32_t* prev = prev_buf.data();
  int32_t* cur = cur_buf.data();
  const size_t m = b.size();
  if (m > kStack) {
    prev_heap.resize(m + 1);
    cur_heap.resize(m + 1);
    prev = prev_heap.data();
    cur = cur_heap.data();
  }
  std::fill(prev, prev + m + 1, 0);
  cur[0] = 0;
  for (size_t i = 0; i < a.size(); ++i) {
    const T& x = a[i];
    int32_t left = 0;
    for (size_t j = 1; j <= m; ++j) {
      // On a match prev[j - 1] + 1 dominates both neighbours; otherwise
      // prev[j - 1] <= prev[j]. Either way one branch-free max suffices.
      const int32_t diag = prev[j - 1] + static_cast<int32_t>(x == b[j - 1]);
      left = std::max({prev[j], left, diag});
      cur[j] = left;
    }
    std::swap(prev, cur);
  }
  return prev[m];
}

RougeScore RougeL(Tokens candidate, Tokens reference);

// RougeL(prediction, transcript). Throws DomainError on an empty transcript.
RougeScore Faithfulness(Tokens transcript, Tokens prediction);

// Fraction of prediction tokens whose type never occurs in the transcript;
// 0 for an empty prediction. Throws DomainError on an empty transcript.
double HallucinationRate(Tokens transcript, Tokens prediction);

inline constexpr int64_t kLengthBinWidth = 5;

struct LengthStats {
  int64_t count = 0;
  double mean = 0.0;
  double stddev = 0.0;  // population standard deviation
  // histogram[i] counts lengths in [5i, 5i + 5).
  std::vector<int64_t> histogram;
  // Fraction of lengths in the most populated bin.
  double mode_mass = 0.0;
};

// Throws DomainError on an empty input or a negative length.
LengthStats ComputeLengthStats(std::span<const int64_t> lengths);

// Per-example scores of one prediction.
struct ExampleScores {
  double rouge1 = 0.0;
  double rouge2 = 0.0;
  double rouge_l = 0.0;
  double faithfulness = 0.0;
  int64_t length = 0;
  double hallucination = 0.0;
};

ExampleScores ScoreExample(const std::string& prediction,
                           const std::string& summary,
                           const std::string& transcript);

// Mean F1 scores over the examples of one (train, eval) cell.
struct CellScores {
  int64_t n = 0;
  double rouge1 = 0.0;
  double rouge2 = 0.0;
  double rouge_l = 0.0;
  double faithfulness_rouge_l = 0.0;
  double mean_length = 0.0;
  double hallucination_rate = 0.0;
  // Reserved for an external embedding-based scorer; never filled here.
  std::optional<double> bertscore;
};

// Throws DomainError on an empty input.
CellScores Aggregate(std::span<const ExampleScores> scores);

// Element-wise mean of equally keyed cells, e.g. across seeds.
CellScores MeanCells(std::span<const CellScores> cells);

using DomainPair = std::pair<Domain, Domain>;  // (train, eval)

struct ScoreReport {
  std::map<DomainPair, CellScores> cells;

  // One row per cell in (train, eval) order with fixed 6-decimal numbers;
  // the bertscore column is empty.
  Table ToTable() const;
  // Rows Pro, Com, Aca (training domain) and columns Product, Academic,
  // Committee (evaluation domain); cells hold ROUGE-1/2/L F1 x 100. Missing
  // cells print "-". Footnotes state the tokenization and omitted metrics.
  std::string ToMarkdown() const;
  // Same grid for one value of every cell.
  std::string MatrixMarkdown(const std::string& title,
                             double CellScores::*field) const;
};

// The row order of the published cross-domain layout.
inline constexpr std::array<Domain, 3> kReportRowOrder = {
    Domain::kProduct, Domain::kCommittee, Domain::kAcademic};

// Length statistics of several labelled prediction sets side by side:
// columns label, count, mean, stddev, mode_mass, histogram.
Table LengthStatsTable(
    std::span<const std::pair<std::string, LengthStats>> runs);

}  // namespace dpsum

#endif  // DPSUM_METRICS_H_
