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

#include "dpsum/metrics.h"

#include <algorithm>
#include <cmath>
#include <functional>
#include <unordered_map>
#include <unordered_set>

#include <fmt/format.h>

#include "dpsum/common.h"

namespace dpsum {
namespace {

std::string Fixed(double v) { return fmt::format("{:.6f}", v); }

std::string Percent(double v) { return fmt::format("{:.2f}", 100.0 * v); }

std::vector<std::string> NGrams(Tokens t, int n) {
  std::vector<std::string> out;
  for (size_t i = 0; i + static_cast<size_t>(n) <= t.size(); ++i) {
    std::string g = t[i];
    for (int k = 1; k < n; ++k) {
      g += '\x1f';  // cannot occur inside a word token
      g += t[i + static_cast<size_t>(k)];
    }
    out.push_back(std::move(g));
  }
  return out;
}

void RequireTranscript(Tokens transcript) {
  if (transcript.empty()) throw DomainError("transcript must be nonempty");
}

const char* kFootnotes =
    "\nScores are F1 x 100. Tokens are lowercased words split on "
    "non-alphanumeric characters; no stemming or stopword removal is "
    "applied, so values are not directly comparable to ROUGE toolkits run "
    "with stemming. BERTScore is not computed (reserved column).\n";

}  // namespace

RougeScore ScoreFromOverlap(int64_t overlap, int64_t candidate_count,
                            int64_t reference_count) {
  if (candidate_count <= 0 || reference_count <= 0 || overlap <= 0) return {};
  RougeScore s;
  s.precision = static_cast<double>(overlap) / static_cast<double>(candidate_count);
  s.recall = static_cast<double>(overlap) / static_cast<double>(reference_count);
  s.f1 = 2.0 * s.precision * s.recall / (s.precision + s.recall);
  return s;
}

RougeScore RougeN(Tokens candidate, Tokens reference, int n) {
  if (n != 1 && n != 2) {
    throw DomainError(fmt::format("ROUGE-N supports n = 1 or 2, got {}", n));
  }
  const auto cand = NGrams(candidate, n);
  const auto ref = NGrams(reference, n);
  std::unordered_map<std::string, int64_t> ref_counts;
  for (const auto& g : ref) ++ref_counts[g];
  int64_t overlap = 0;
  for (const auto& g : cand) {
    auto it = ref_counts.find(g);
    if (it != ref_counts.end() && it->second > 0) {
      --it->second;
      ++overlap;
    }
  }
  return ScoreFromOverlap(overlap, static_cast<int64_t>(cand.size()),
                          static_cast<int64_t>(ref.size()));
}

RougeScore RougeL(Tokens candidate, Tokens reference) {
  return ScoreFromOverlap(LcsLength<std::string>(candidate, reference),
                          static_cast<int64_t>(candidate.size()),
                          static_cast<int64_t>(reference.size()));
}

RougeScore Faithfulness(Tokens transcript, Tokens prediction) {
  RequireTranscript(transcript);
  return RougeL(prediction, transcript);
}

double HallucinationRate(Tokens transcript, Tokens prediction) {
  RequireTranscript(transcript);
  if (prediction.empty()) return 0.0;
  const std::unordered_set<std::string> seen(transcript.begin(),
                                             transcript.end());
  int64_t unseen = 0;
  for (const auto& t : prediction) unseen += seen.count(t) == 0 ? 1 : 0;
  return static_cast<double>(unseen) / static_cast<double>(prediction.size());
}

LengthStats ComputeLengthStats(std::span<const int64_t> lengths) {
  if (lengths.empty()) throw DomainError("length statistics need >= 1 prediction");
  LengthStats s;
  s.count = static_cast<int64_t>(lengths.size());
  double sum = 0.0;
  for (int64_t l : lengths) {
    if (l < 0) throw DomainError(fmt::format("negative length {}", l));
    sum += static_cast<double>(l);
    const auto bin = static_cast<size_t>(l / kLengthBinWidth);
    if (s.histogram.size() <= bin) s.histogram.resize(bin + 1, 0);
    ++s.histogram[bin];
  }
  s.mean = sum / static_cast<double>(s.count);
  double sq = 0.0;
  for (int64_t l : lengths) {
    const double d = static_cast<double>(l) - s.mean;
    sq += d * d;
  }
  s.stddev = std::sqrt(sq / static_cast<double>(s.count));
  s.mode_mass = static_cast<double>(*std::max_element(s.histogram.begin(),
                                                      s.histogram.end())) /
                static_cast<double>(s.count);
  return s;
}

ExampleScores ScoreExample(const std::string& prediction,
                           const std::string& summary,
                           const std::string& transcript) {
  const auto pred = WordTokens(prediction);
  const auto gold = WordTokens(summary);
  const auto source = WordTokens(transcript);
  ExampleScores s;
  s.rouge1 = RougeN(pred, gold, 1).f1;
  s.rouge2 = RougeN(pred, gold, 2).f1;
  s.rouge_l = RougeL(pred, gold).f1;
  s.faithfulness = Faithfulness(source, pred).f1;
  s.length = static_cast<int64_t>(pred.size());
  s.hallucination = HallucinationRate(source, pred);
  return s;
}

CellScores Aggregate(std::span<const ExampleScores> scores) {
  if (scores.empty()) throw DomainError("cannot aggregate an empty cell");
  CellScores c;
  c.n = static_cast<int64_t>(scores.size());
  for (const ExampleScores& s : scores) {
    c.rouge1 += s.rouge1;
    c.rouge2 += s.rouge2;
    c.rouge_l += s.rouge_l;
    c.faithfulness_rouge_l += s.faithfulness;
    c.mean_length += static_cast<double>(s.length);
    c.hallucination_rate += s.hallucination;
  }
  const auto n = static_cast<double>(c.n);
  c.rouge1 /= n;
  c.rouge2 /= n;
  c.rouge_l /= n;
  c.faithfulness_rouge_l /= n;
  c.mean_length /= n;
  c.hallucination_rate /= n;
  return c;
}

CellScores MeanCells(std::span<const CellScores> cells) {
  if (cells.empty()) throw DomainError("cannot average zero cells");
  CellScores c;
  for (const CellScores& x : cells) {
    c.n += x.n;
    c.rouge1 += x.rouge1;
    c.rouge2 += x.rouge2;
    c.rouge_l += x.rouge_l;
    c.faithfulness_rouge_l += x.faithfulness_rouge_l;
    c.mean_length += x.mean_length;
    c.hallucination_rate += x.hallucination_rate;
  }
  const auto k = static_cast<double>(cells.size());
  c.n = static_cast<int64_t>(std::llround(static_cast<double>(c.n) / k));
  c.rouge1 /= k;
  c.rouge2 /= k;
  c.rouge_l /= k;
  c.faithfulness_rouge_l /= k;
  c.mean_length /= k;
  c.hallucination_rate /= k;
  return c;
}

Table ScoreReport::ToTable() const {
  Table t;
  t.header = {"train_domain", "eval_domain",         "n",
              "rouge1",       "rouge2",              "rougeL",
              "faithfulness_rougeL", "mean_length", "hallucination_rate",
              "bertscore"};
  for (const auto& [key, c] : cells) {
    t.AddRow({std::string(DomainName(key.first)),
              std::string(DomainName(key.second)), std::to_string(c.n),
              Fixed(c.rouge1), Fixed(c.rouge2), Fixed(c.rouge_l),
              Fixed(c.faithfulness_rouge_l), Fixed(c.mean_length),
              Fixed(c.hallucination_rate),
              c.bertscore ? Fixed(*c.bertscore) : std::string()});
  }
  return t;
}

namespace {

std::string Grid(const std::map<DomainPair, CellScores>& cells,
                 const std::string& title,
                 const std::function<std::string(const CellScores&)>& render) {
  std::string out = "| " + title + " |";
  for (Domain e : kAllDomains) {
    std::string name(DomainName(e));
    name[0] = static_cast<char>(name[0] - 'a' + 'A');
    out += " " + name + " |";
  }
  out += "\n|---|---|---|---|\n";
  for (Domain t : kReportRowOrder) {
    out += "| " + std::string(DomainShortName(t)) + " |";
    for (Domain e : kAllDomains) {
      auto it = cells.find({t, e});
      out += " " + (it == cells.end() ? std::string("-") : render(it->second)) +
             " |";
    }
    out += "\n";
  }
  return out;
}

}  // namespace

std::string ScoreReport::ToMarkdown() const {
  return Grid(cells, "Train \\ Eval (R-1 / R-2 / R-L)",
              [](const CellScores& c) {
                return Percent(c.rouge1) + " / " + Percent(c.rouge2) + " / " +
                       Percent(c.rouge_l);
              }) +
         kFootnotes;
}

std::string ScoreReport::MatrixMarkdown(const std::string& title,
                                        double CellScores::*field) const {
  return Grid(cells, title,
              [field](const CellScores& c) { return Percent(c.*field); }) +
         kFootnotes;
}

Table LengthStatsTable(
    std::span<const std::pair<std::string, LengthStats>> runs) {
  Table t;
  t.header = {"run", "count", "mean", "stddev", "mode_mass", "histogram"};
  for (const auto& [label, s] : runs) {
    std::string hist;
    for (size_t i = 0; i < s.histogram.size(); ++i) {
      if (i > 0) hist += ' ';
      hist += std::to_string(s.histogram[i]);
    }
    t.AddRow({label, std::to_string(s.count), Fixed(s.mean), Fixed(s.stddev),
              Fixed(s.mode_mass), hist});
  }
  return t;
}

}  // namespace dpsum
