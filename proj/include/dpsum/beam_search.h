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

// Beam search and greedy decoding over any incremental decoder.
//
// A Decoder provides
//   State Start(std::span<const int32_t> prefix) const;
//   State Extend(const State&, int32_t token) const;
//   static const std::vector<double>& LogProbs(const State&);
//   int64_t context_length() const;
//
// Sequences are scored by log P / len^(length_penalty - 1), so the default
// penalty of 1 ranks by pure log-probability. Per step, the beam_width best
// extensions of all live beams are kept, ordered by (score desc, token id
// asc, parent beam asc); extensions ending in <eos> are finalized and still
// use one of the slots. A beam that reaches max_new_tokens is finalized as
// is. The returned sequence is the best finalized beam, or the greedy
// sequence if that scores strictly higher, so the result never scores below
// greedy decoding.

#ifndef DPSUM_BEAM_SEARCH_H_
#define DPSUM_BEAM_SEARCH_H_

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <tuple>
#include <vector>

#include <fmt/format.h>

#include "dpsum/common.h"

namespace dpsum {

struct BeamOptions {
  int64_t beam_width = 5;
  int64_t max_new_tokens = 64;
  double length_penalty = 1.0;
  int32_t eos_id = 4;
};

struct Hypothesis {
  std::vector<int32_t> tokens;  // generated tokens, including a final <eos>
  double log_prob = 0.0;
  double score = 0.0;
  bool ended_with_eos = false;
};

inline double SequenceScore(double log_prob, int64_t length,
                            double length_penalty) {
  if (length_penalty == 1.0 || length <= 0) return log_prob;
  return log_prob / std::pow(static_cast<double>(length), length_penalty - 1.0);
}

// Strict ordering used for the final pick: higher score first, then the
// lexicographically smaller token sequence.
inline bool BetterHypothesis(const Hypothesis& a, const Hypothesis& b) {
  if (a.score != b.score) return a.score > b.score;
  return a.tokens < b.tokens;
}

namespace beam_internal {

template <class Decoder>
int64_t MaxNew(const Decoder& decoder, std::span<const int32_t> prefix,
               const BeamOptions& options) {
  if (options.beam_width < 1) {
    throw DomainError(
        fmt::format("beam width must be >= 1, got {}", options.beam_width));
  }
  const auto p = static_cast<int64_t>(prefix.size());
  if (p >= decoder.context_length()) {
    throw ContextOverflowError(fmt::format(
        "prompt of {} tokens fills the context length {}", p,
        decoder.context_length()));
  }
  return std::min(options.max_new_tokens, decoder.context_length() - p);
}

}  // namespace beam_internal

template <class Decoder>
Hypothesis GreedyDecode(const Decoder& decoder, std::span<const int32_t> prefix,
                        const BeamOptions& options) {
  const int64_t max_new = beam_internal::MaxNew(decoder, prefix, options);
  Hypothesis h;
  if (max_new <= 0) return h;
  auto state = decoder.Start(prefix);
  for (int64_t step = 0; step < max_new; ++step) {
    const std::vector<double>& lp = Decoder::LogProbs(state);
    int32_t best = 0;
    for (int32_t v = 1; v < static_cast<int32_t>(lp.size()); ++v) {
      if (lp[static_cast<size_t>(v)] > lp[static_cast<size_t>(best)]) best = v;
    }
    h.tokens.push_back(best);
    h.log_prob += lp[static_cast<size_t>(best)];
    if (best == options.eos_id) {
      h.ended_with_eos = true;
      break;
    }
    if (step + 1 < max_new) state = decoder.Extend(state, best);
  }
  h.score = SequenceScore(h.log_prob, static_cast<int64_t>(h.tokens.size()),
                          options.length_penalty);
  return h;
}

// Beam search without the greedy safeguard; exposed for testing.
template <class Decoder>
Hypothesis PlainBeamSearch(const Decoder& decoder,
                           std::span<const int32_t> prefix,
                           const BeamOptions& options) {
  using State = decltype(decoder.Start(prefix));
  const int64_t max_new = beam_internal::MaxNew(decoder, prefix, options);
  if (max_new <= 0) return Hypothesis{};
  struct Live {
    State state;
    Hypothesis hyp;
  };
  std::vector<Live> live;
  live.push_back({decoder.Start(prefix), Hypothesis{}});
  std::vector<Hypothesis> finished;
  const auto width = static_cast<size_t>(options.beam_width);
  for (int64_t step = 0; step < max_new && !live.empty(); ++step) {
    // (log_prob, token, parent)
    std::vector<std::tuple<double, int32_t, int32_t>> cand;
    for (size_t i = 0; i < live.size(); ++i) {
      const std::vector<double>& lp = Decoder::LogProbs(live[i].state);
      for (size_t v = 0; v < lp.size(); ++v) {
        cand.emplace_back(live[i].hyp.log_prob + lp[v], static_cast<int32_t>(v),
                          static_cast<int32_t>(i));
      }
    }
    // All candidates have the same length, so the score order is the
    // log-probability order.
    const size_t keep = std::min(width, cand.size());
    std::partial_sort(cand.begin(), cand.begin() + static_cast<int64_t>(keep),
                      cand.end(), [](const auto& a, const auto& b) {
                        if (std::get<0>(a) != std::get<0>(b)) {
                          return std::get<0>(a) > std::get<0>(b);
                        }
                        if (std::get<1>(a) != std::get<1>(b)) {
                          return std::get<1>(a) < std::get<1>(b);
                        }
                        return std::get<2>(a) < std::get<2>(b);
                      });
    std::vector<Live> next;
    const bool last = step + 1 == max_new;
    for (size_t c = 0; c < keep; ++c) {
      const auto [log_prob, token, parent] = cand[c];
      Hypothesis h = live[static_cast<size_t>(parent)].hyp;
      h.tokens.push_back(token);
      h.log_prob = log_prob;
      h.score = SequenceScore(log_prob, static_cast<int64_t>(h.tokens.size()),
                              options.length_penalty);
      if (token == options.eos_id || last) {
        h.ended_with_eos = token == options.eos_id;
        finished.push_back(std::move(h));
      } else {
        next.push_back({decoder.Extend(live[static_cast<size_t>(parent)].state, token),
                        std::move(h)});
      }
    }
    live = std::move(next);
    // With pure log-probability scoring a live beam can only get worse.
    if (options.length_penalty == 1.0 && !finished.empty() && !live.empty()) {
      double best_finished = -std::numeric_limits<double>::infinity();
      for (const Hypothesis& f : finished) best_finished = std::max(best_finished, f.score);
      double best_live = -std::numeric_limits<double>::infinity();
      for (const Live& l : live) best_live = std::max(best_live, l.hyp.log_prob);
      if (best_finished >= best_live) live.clear();
    }
  }
  return *std::min_element(finished.begin(), finished.end(), BetterHypothesis);
}

template <class Decoder>
Hypothesis BeamSearch(const Decoder& decoder, std::span<const int32_t> prefix,
                      const BeamOptions& options) {
  Hypothesis beam = PlainBeamSearch(decoder, prefix, options);
  if (options.beam_width == 1) return beam;
  Hypothesis greedy = GreedyDecode(decoder, prefix, options);
  return greedy.score > beam.score ? greedy : beam;
}

}  // namespace dpsum

#endif  // DPSUM_BEAM_SEARCH_H_
