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

// A small decoder-only (GPT-2 style, pre-LayerNorm) causal transformer over
// serialized (query, transcript, summary) sequences.
//
// Parameter names:
//   tok_emb [V x d], pos_emb [L x d]
//   h{l}.ln1.{g,b}, h{l}.attn.{q,k,v,o}.{w,b}   (w is [d x d])
//   h{l}.ln2.{g,b}, h{l}.mlp.fc.{w,b} [d x 4d], h{l}.mlp.proj.{w,b} [4d x d]
//   ln_f.{g,b}, and lm_head.w [d x V] unless the head is tied to tok_emb.
// LoRA factors, when attached, live under h{l}.attn.{q,v}.lora_{a,b}.

#ifndef DPSUM_MODEL_H_
#define DPSUM_MODEL_H_

#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dpsum/autodiff.h"
#include "dpsum/common.h"
#include "dpsum/lora.h"
#include "dpsum/tensor.h"
#include "json.hpp"

namespace dpsum {

// Reserved token ids.
inline constexpr int32_t kUnkId = 0;
inline constexpr int32_t kQueryId = 1;
inline constexpr int32_t kTranscriptId = 2;
inline constexpr int32_t kSummaryId = 3;
inline constexpr int32_t kEosId = 4;
inline constexpr int32_t kNumSpecials = 5;

struct ModelConfig {
  int64_t vocab_size = 512;
  int64_t context_length = 512;
  int64_t d_model = 64;
  int64_t n_layers = 2;
  int64_t n_heads = 4;
  bool tie_embeddings = true;

  // Throws ConfigError unless d_model % n_heads == 0, V >= kNumSpecials and
  // L >= 16, all sizes positive.
  void Validate() const;
  nlohmann::ordered_json ToJson() const;
  static ModelConfig FromJson(const nlohmann::ordered_json& j);
};

// N(0, 0.02^2) weights and embeddings, zero biases, unit LayerNorm gains.
ParamStore InitParams(const ModelConfig& config, uint64_t seed);

// Attaches adapters to the configured attention projections of every layer
// and freezes everything else. No-op when LoRA is disabled.
void ApplyLora(ParamStore& params, const ModelConfig& config,
               const LoraConfig& lora, uint64_t seed);

struct SerializedExample {
  std::vector<int32_t> tokens;
  std::vector<double> loss_mask;  // 1 on summary tokens and <eos>
  int64_t transcript_dropped = 0;  // transcript tokens cut from the tail
};

// <q> query <x> transcript <y> summary <eos>, cutting the transcript tail to
// fit `context_length`. Returns nullopt when query and summary alone (with
// the four markers) exceed the context.
std::optional<SerializedExample> SerializeExample(
    std::span<const int32_t> query, std::span<const int32_t> transcript,
    std::span<const int32_t> summary, int64_t context_length);

// Generation prompt <q> query <x> transcript <y>, with the transcript tail cut
// so that `reserve` tokens remain for the summary. Throws
// ContextOverflowError when even an empty transcript leaves no room.
std::vector<int32_t> SerializePrompt(std::span<const int32_t> query,
                                     std::span<const int32_t> transcript,
                                     int64_t context_length, int64_t reserve);

// Next-token batch: position t of example b reads inputs[b*T + t] and is
// scored against targets[b*T + t] where mask is 1. Right-padded with <unk>.
struct Batch {
  int64_t batch = 0;
  int64_t steps = 0;
  std::vector<int32_t> inputs;
  std::vector<int32_t> targets;
  std::vector<double> mask;
};

Batch MakeBatch(std::span<const SerializedExample* const> examples);

// Logits [B x T x V] for the token ids (row-major [B x T]).
Var ForwardLogits(Tape& tape, const ParamStore& params,
                  const ModelConfig& config, const LoraConfig& lora,
                  std::span<const int32_t> ids, int64_t batch, int64_t steps);

// Per-example mean NLL over masked positions [B].
Var ForwardLoss(Tape& tape, const ParamStore& params, const ModelConfig& config,
                const LoraConfig& lora, const Batch& batch);

// Incremental inference with a key/value cache. A state shares the cache of
// its prompt and owns only the keys and values of tokens generated after it,
// so beams branch cheaply. Every position is computed by one routine that
// processes n new tokens against a cache of length P, and it agrees with
// ForwardLogits up to floating-point reassociation.
class KvDecoder {
 public:
  struct State;

  KvDecoder(const ParamStore& params, const ModelConfig& config,
            const LoraConfig& lora);

  // Throws ContextOverflowError when prefix is empty or length >= L.
  State Start(std::span<const int32_t> prefix) const;
  // Throws ContextOverflowError when the state already fills the context.
  State Extend(const State& state, int32_t token) const;
  // Log-probabilities of the token following the state [V].
  static const std::vector<double>& LogProbs(const State& state);
  static int64_t Length(const State& state);

  int64_t vocab_size() const { return config_.vocab_size; }
  int64_t context_length() const { return config_.context_length; }

  // Logits [n x V] for `tokens` appended to an empty cache (test hook).
  RowMatrix LogitsFor(std::span<const int32_t> tokens) const;

  struct Cache {
    // Per layer: keys / values, one row of d per position.
    std::vector<std::vector<double>> k;
    std::vector<std::vector<double>> v;
    int64_t length = 0;
  };

  struct State {
    std::shared_ptr<const Cache> prefix;
    Cache suffix;
    std::vector<double> log_probs;
  };

 private:
  struct Layer;
  // Runs `tokens` at positions starting after prefix + suffix, appending their
  // keys and values to `suffix`, and returns final hidden states [n x d].
  RowMatrix Run(const Cache* prefix, Cache& suffix,
                std::span<const int32_t> tokens) const;
  RowMatrix Logits(const RowMatrix& hidden) const;

  ModelConfig config_;
  LoraConfig lora_;
  std::vector<std::shared_ptr<const Layer>> layers_;
  RowMatrix tok_emb_;
  RowMatrix pos_emb_;
  RowMatrix head_;  // [d x V]
  Eigen::RowVectorXd lnf_g_;
  Eigen::RowVectorXd lnf_b_;
};

// Self-describing checkpoint: magic "DPSUMCK1", u64 little-endian header
// length, a JSON header (config, tokenizer hash, parameter manifest with
// shapes, trainable flags and offsets, plus caller metadata), then every
// parameter as raw little-endian doubles in manifest order.
struct Checkpoint {
  ModelConfig config;
  std::string tokenizer_hash;
  nlohmann::ordered_json metadata;
  ParamStore params;
};

void SaveCheckpoint(const std::string& path, const Checkpoint& checkpoint);
// Throws ParseError on a malformed or truncated file.
Checkpoint LoadCheckpoint(const std::string& path);
std::string EncodeCheckpoint(const Checkpoint& checkpoint);
Checkpoint DecodeCheckpoint(std::string_view bytes);

}  // namespace dpsum

#endif  // DPSUM_MODEL_H_
