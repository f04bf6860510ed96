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

// Pipeline wiring: run configuration, the DP / non-DP training loop, beam
// generation, evaluation against gold examples and the cross-domain report.

#ifndef DPSUM_HARNESS_H_
#define DPSUM_HARNESS_H_

#include <cstdint>
#include <map>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "dpsum/beam_search.h"
#include "dpsum/data.h"
#include "dpsum/dp_optim.h"
#include "dpsum/lora.h"
#include "dpsum/metrics.h"
#include "dpsum/model.h"
#include "dpsum/table.h"
#include "json.hpp"

namespace dpsum {

enum class TrainMode { kNonDp, kDpGhost, kDpPft };
std::string_view TrainModeName(TrainMode mode);  // nondp, dp_ghost, dp_pft
TrainMode ParseTrainMode(std::string_view name);  // throws ConfigError
bool IsPrivate(TrainMode mode);

// Defaults follow the published DP-Ghost / DP-PFT hyperparameters; settings
// left unset resolve per mode (see the accessors).
struct RunConfig {
  std::string corpus;
  Domain train_domain = Domain::kProduct;
  TrainMode mode = TrainMode::kDpGhost;

  // Privacy settings; rejected in nondp mode.
  std::optional<double> target_epsilon;
  std::optional<double> delta;             // default 1 / (2 |train|)
  std::optional<double> noise_multiplier;  // default: calibrated
  std::optional<double> clipping_norm;     // default 0.1
  std::optional<ClipMode> clip_mode;       // default ghost

  int64_t batch_size = 4;
  int64_t epochs = 20;
  std::optional<double> learning_rate;  // 2e-3, or 4e-4 for dp_pft
  std::optional<double> weight_decay;   // 0, or 0.01 for dp_pft
  int64_t max_vocab = 512;
  // vocab_size is taken from the tokenizer.
  ModelConfig model;
  // Used by dp_pft only (always enabled there).
  LoraConfig lora;
  // Optional starting weights for dp_pft (e.g. a non-private public model).
  std::string base_checkpoint;
  uint64_t seed = 1234;
  BeamOptions decoding = {5, 32, 1.0, kEosId};
  std::string output_dir;

  // Applies the keys of a JSON object on top of the current values. Throws
  // ConfigError on unknown keys or wrongly typed values.
  void MergeJson(const nlohmann::json& j);
  // Throws ConfigError on invalid values or mode conflicts.
  void Validate() const;

  double ResolvedLearningRate() const;
  double ResolvedWeightDecay() const;
  double ResolvedClippingNorm() const;
  ClipMode ResolvedClipMode() const;
  LoraConfig ResolvedLora() const;

  // Fully resolved settings (the derived delta is null until data is known).
  nlohmann::ordered_json ToJson() const;
};

RunConfig LoadRunConfig(const std::string& path);  // JSON file

nlohmann::ordered_json LoraToJson(const LoraConfig& lora);
LoraConfig LoraFromJson(const nlohmann::json& j);

// Corpus, split and the tokenizer shared by every run on that corpus. The
// vocabulary is built from the union of all domains' training splits.
struct PreparedData {
  std::vector<MeetingRecord> records;
  std::map<Domain, CorpusSplit> splits;
  Tokenizer tokenizer;
  std::string corpus_hash;
};

PreparedData PrepareData(const std::string& corpus_path, int64_t max_vocab);

// Encodes and serializes examples; those whose query and summary alone do not
// fit the context are dropped (counted in `skipped`).
std::vector<SerializedExample> SerializeExamples(
    std::span<const Example> examples, const Tokenizer& tokenizer,
    int64_t context_length, int64_t* skipped = nullptr);

struct StepConfig {
  TrainMode mode = TrainMode::kNonDp;
  ClipConfig clip;
  uint64_t seed = 0;
};

// One optimizer step on `batch`; returns the per-example losses. nondp uses
// the exact batch-mean gradient and Adam; dp_ghost clips, noises and applies
// DP-Adam; dp_pft does the same over the trainable (adapter) parameters and
// applies AdamW. Throws NumericError on a non-finite loss.
std::vector<double> TrainStep(ParamStore& params, OptimState& state,
                              const ModelConfig& model, const LoraConfig& lora,
                              const Batch& batch, const StepConfig& config,
                              int64_t step);

// Privacy plan for a DP run.
struct PrivacyPlan {
  int64_t dataset_size = 0;
  int64_t batch_size = 0;
  int64_t epochs = 0;
  double sample_rate = 0.0;
  int64_t steps = 0;
  double delta = 0.0;
  double target_epsilon = 0.0;
  double noise_multiplier = 0.0;
  double epsilon = 0.0;
  double best_order = 0.0;

  Table ToTable() const;
  nlohmann::ordered_json ToJson() const;
};

// Calibrates sigma (unless `noise_multiplier` is given) and accounts the
// resulting epsilon. Throws CalibrationError if epsilon exceeds the target.
PrivacyPlan PlanPrivacy(double target_epsilon, std::optional<double> delta,
                        int64_t dataset_size, int64_t batch_size,
                        int64_t epochs,
                        std::optional<double> noise_multiplier = std::nullopt);

// Holds `<dir>/.lock` for the lifetime of the object. Throws Error when the
// lock is already held.
class OutputLock {
 public:
  explicit OutputLock(const std::string& dir);
  ~OutputLock();
  OutputLock(const OutputLock&) = delete;
  OutputLock& operator=(const OutputLock&) = delete;

 private:
  std::string path_;
};

inline constexpr char kCheckpointFile[] = "model.ckpt";
inline constexpr char kTokenizerFile[] = "tokenizer.json";
inline constexpr char kManifestFile[] = "manifest.json";

// Trains per `config` and writes model.ckpt, tokenizer.json and
// manifest.json into config.output_dir. Returns the manifest. Progress lines
// go to `log` when non-null.
nlohmann::ordered_json TrainRun(const RunConfig& config,
                                const PreparedData* data = nullptr,
                                std::ostream* log = nullptr);

struct Prediction {
  std::string id;
  std::string text;

  bool operator==(const Prediction&) const = default;
};

// Beam search per example, decoded up to (excluding) <eos>.
std::vector<Prediction> Generate(const Checkpoint& checkpoint,
                                 const Tokenizer& tokenizer,
                                 std::span<const Example> prompts,
                                 const BeamOptions& options);

// Loads model.ckpt and verifies it was trained with `tokenizer`.
Checkpoint LoadCheckpointFor(const std::string& path,
                             const Tokenizer& tokenizer);

std::string PredictionsToJsonl(std::span<const Prediction> predictions);
// Parses {id, prediction} lines. Throws ParseError (with line numbers) on
// malformed lines or duplicate ids.
std::map<std::string, std::string> ParsePredictionsJsonl(
    std::string_view text, std::string_view source);

std::string ExamplesToJsonl(std::span<const Example> examples);
std::vector<Example> ParseExamplesJsonl(std::string_view text,
                                        std::string_view source);

// Scores every gold example against its prediction and groups cells by
// (train_domain, gold domain). Throws ParseError when a gold id has no
// prediction or a prediction id has no gold example.
ScoreReport Evaluate(std::span<const Example> gold,
                     const std::map<std::string, std::string>& predictions,
                     Domain train_domain);

// Prediction token lengths, in gold order.
std::vector<int64_t> PredictionLengths(
    std::span<const Example> gold,
    const std::map<std::string, std::string>& predictions);

struct CrossDomainOptions {
  RunConfig base;  // train_domain and output_dir are set per cell
  std::vector<TrainMode> modes;
  std::vector<uint64_t> seeds;
  std::string out_dir;
  // Use existing checkpoints instead of training; a missing one is an error
  // naming its training domain and path.
  bool reuse_checkpoints = false;
};

struct CrossDomainResult {
  std::map<TrainMode, ScoreReport> test;   // ROUGE on test, seed-averaged
  std::map<TrainMode, ScoreReport> valid;  // faithfulness on validation
  Table lengths;                           // per mode and training domain
};

// For every mode, seed and training domain: trains (or loads) a model,
// generates beam predictions for each domain's test and validation split and
// scores them. Writes under out_dir:
//   <mode>/seed<s>/<train>/{model.ckpt,tokenizer.json,manifest.json,
//                           pred_<eval>_<split>.jsonl}
//   <mode>/report.{csv,txt,md}        test ROUGE, 9 cells
//   <mode>/faithfulness_valid.{csv,txt,md}
//   lengths.{csv,txt}                 length statistics of every mode
CrossDomainResult RunCrossDomain(const CrossDomainOptions& options,
                                 std::ostream* log = nullptr);

}  // namespace dpsum

#endif  // DPSUM_HARNESS_H_
