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

#include "dpsum/harness.h"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <numeric>
#include <set>
#include <utility>

#include <fmt/format.h>

#include "dpsum/accountant.h"
#include "dpsum/common.h"
#include "dpsum/rng.h"

namespace dpsum {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;
using nlohmann::ordered_json;

constexpr double kDefaultLearningRate = 2e-3;
constexpr double kPftLearningRate = 4e-4;
constexpr double kPftWeightDecay = 0.01;
constexpr double kDefaultClippingNorm = 0.1;

// Typed access to a config value with the key path in error messages.
double Number(const json& v, const std::string& key) {
  if (!v.is_number()) {
    throw ConfigError(fmt::format("config key '{}' must be a number", key));
  }
  return v.get<double>();
}

int64_t Integer(const json& v, const std::string& key) {
  if (!v.is_number_integer()) {
    throw ConfigError(fmt::format("config key '{}' must be an integer", key));
  }
  return v.get<int64_t>();
}

std::string Text(const json& v, const std::string& key) {
  if (!v.is_string()) {
    throw ConfigError(fmt::format("config key '{}' must be a string", key));
  }
  return v.get<std::string>();
}

bool Boolean(const json& v, const std::string& key) {
  if (!v.is_boolean()) {
    throw ConfigError(fmt::format("config key '{}' must be true or false", key));
  }
  return v.get<bool>();
}

std::optional<double> OptionalNumber(const json& v, const std::string& key) {
  if (v.is_null()) return std::nullopt;
  return Number(v, key);
}

const json& Object(const json& v, const std::string& key) {
  if (!v.is_object()) {
    throw ConfigError(fmt::format("config key '{}' must be an object", key));
  }
  return v;
}

void UnknownKey(const std::string& key) {
  throw ConfigError(fmt::format("unknown config key '{}'", key));
}

ordered_json Optional(const std::optional<double>& v) {
  return v ? ordered_json(*v) : ordered_json(nullptr);
}

std::string FileHash(const std::string& path) { return HexDigest(HashFile(path)); }

}  // namespace

std::string_view TrainModeName(TrainMode mode) {
  switch (mode) {
    case TrainMode::kNonDp:
      return "nondp";
    case TrainMode::kDpGhost:
      return "dp_ghost";
    case TrainMode::kDpPft:
      return "dp_pft";
  }
  return "?";
}

TrainMode ParseTrainMode(std::string_view name) {
  for (TrainMode m : {TrainMode::kNonDp, TrainMode::kDpGhost, TrainMode::kDpPft}) {
    if (name == TrainModeName(m)) return m;
  }
  throw ConfigError(fmt::format(
      "unknown mode '{}' (expected nondp, dp_ghost or dp_pft)", name));
}

bool IsPrivate(TrainMode mode) { return mode != TrainMode::kNonDp; }

void RunConfig::MergeJson(const json& j) {
  Object(j, "<root>");
  for (auto it = j.begin(); it != j.end(); ++it) {
    const std::string& k = it.key();
    const json& v = it.value();
    if (k == "corpus") {
      corpus = Text(v, k);
    } else if (k == "train_domain") {
      train_domain = ParseDomain(Text(v, k));
    } else if (k == "mode") {
      mode = ParseTrainMode(Text(v, k));
    } else if (k == "target_epsilon") {
      target_epsilon = OptionalNumber(v, k);
    } else if (k == "delta") {
      delta = OptionalNumber(v, k);
    } else if (k == "noise_multiplier") {
      noise_multiplier = OptionalNumber(v, k);
    } else if (k == "clipping_norm") {
      clipping_norm = OptionalNumber(v, k);
    } else if (k == "clip_mode") {
      if (v.is_null()) {
        clip_mode.reset();
      } else {
        clip_mode = ParseClipMode(Text(v, k));
      }
    } else if (k == "batch_size") {
      batch_size = Integer(v, k);
    } else if (k == "epochs") {
      epochs = Integer(v, k);
    } else if (k == "learning_rate") {
      learning_rate = OptionalNumber(v, k);
    } else if (k == "weight_decay") {
      weight_decay = OptionalNumber(v, k);
    } else if (k == "max_vocab") {
      max_vocab = Integer(v, k);
    } else if (k == "model") {
      for (auto m = Object(v, k).begin(); m != v.end(); ++m) {
        const std::string mk = "model." + m.key();
        if (m.key() == "context_length") {
          model.context_length = Integer(m.value(), mk);
        } else if (m.key() == "d_model") {
          model.d_model = Integer(m.value(), mk);
        } else if (m.key() == "n_layers") {
          model.n_layers = Integer(m.value(), mk);
        } else if (m.key() == "n_heads") {
          model.n_heads = Integer(m.value(), mk);
        } else if (m.key() == "tie_embeddings") {
          model.tie_embeddings = Boolean(m.value(), mk);
        } else if (m.key() == "vocab_size") {
          throw ConfigError(
              "config key 'model.vocab_size' is derived from the tokenizer; "
              "set max_vocab instead");
        } else {
          UnknownKey(mk);
        }
      }
    } else if (k == "lora") {
      lora = LoraFromJson(Object(v, k));
    } else if (k == "base_checkpoint") {
      base_checkpoint = Text(v, k);
    } else if (k == "seed") {
      seed = static_cast<uint64_t>(Integer(v, k));
    } else if (k == "decoding") {
      for (auto d = Object(v, k).begin(); d != v.end(); ++d) {
        const std::string dk = "decoding." + d.key();
        if (d.key() == "beam_width") {
          decoding.beam_width = Integer(d.value(), dk);
        } else if (d.key() == "max_new_tokens") {
          decoding.max_new_tokens = Integer(d.value(), dk);
        } else if (d.key() == "length_penalty") {
          decoding.length_penalty = Number(d.value(), dk);
        } else {
          UnknownKey(dk);
        }
      }
    } else if (k == "output_dir") {
      output_dir = Text(v, k);
    } else {
      UnknownKey(k);
    }
  }
}

void RunConfig::Validate() const {
  if (!IsPrivate(mode)) {
    const std::pair<const char*, bool> privacy[] = {
        {"target_epsilon", target_epsilon.has_value()},
        {"delta", delta.has_value()},
        {"noise_multiplier", noise_multiplier.has_value()},
        {"clipping_norm", clipping_norm.has_value()},
        {"clip_mode", clip_mode.has_value()}};
    for (const auto& [name, set] : privacy) {
      if (set) {
        throw ConfigError(fmt::format(
            "mode nondp does not accept the privacy setting '{}'", name));
      }
    }
  } else {
    if (!target_epsilon) {
      throw ConfigError(fmt::format("mode {} requires target_epsilon",
                                    TrainModeName(mode)));
    }
    if (!(*target_epsilon > 0.0)) {
      throw ConfigError("target_epsilon must be positive");
    }
    if (delta && !(*delta > 0.0 && *delta < 1.0)) {
      throw ConfigError("delta must lie in (0, 1)");
    }
    if (noise_multiplier && !(*noise_multiplier >= 0.0)) {
      throw ConfigError("noise_multiplier must be >= 0");
    }
    if (!(ResolvedClippingNorm() > 0.0)) {
      throw ConfigError("clipping_norm must be positive");
    }
  }
  if (!base_checkpoint.empty() && mode != TrainMode::kDpPft) {
    throw ConfigError("base_checkpoint is only used by mode dp_pft");
  }
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (epochs < 1) throw ConfigError("epochs must be >= 1");
  if (max_vocab < kNumSpecials + 1) {
    throw ConfigError(fmt::format("max_vocab must be >= {}", kNumSpecials + 1));
  }
  if (!(ResolvedLearningRate() > 0.0)) {
    throw ConfigError("learning_rate must be positive");
  }
  if (!(ResolvedWeightDecay() >= 0.0)) {
    throw ConfigError("weight_decay must be >= 0");
  }
  ModelConfig m = model;
  m.vocab_size = max_vocab;
  m.Validate();
  if (mode == TrainMode::kDpPft) {
    ResolvedLora().Validate(model.d_model, model.d_model);
  }
  if (decoding.beam_width < 1 || decoding.max_new_tokens < 1 ||
      !std::isfinite(decoding.length_penalty)) {
    throw ConfigError(
        "decoding needs beam_width >= 1, max_new_tokens >= 1 and a finite "
        "length_penalty");
  }
}

double RunConfig::ResolvedLearningRate() const {
  if (learning_rate) return *learning_rate;
  return mode == TrainMode::kDpPft ? kPftLearningRate : kDefaultLearningRate;
}

double RunConfig::ResolvedWeightDecay() const {
  if (weight_decay) return *weight_decay;
  return mode == TrainMode::kDpPft ? kPftWeightDecay : 0.0;
}

double RunConfig::ResolvedClippingNorm() const {
  return clipping_norm.value_or(kDefaultClippingNorm);
}

ClipMode RunConfig::ResolvedClipMode() const {
  return clip_mode.value_or(ClipMode::kGhost);
}

LoraConfig RunConfig::ResolvedLora() const {
  LoraConfig l = lora;
  l.enabled = mode == TrainMode::kDpPft;
  return l;
}

ordered_json RunConfig::ToJson() const {
  ordered_json j;
  j["corpus"] = corpus;
  j["train_domain"] = DomainName(train_domain);
  j["mode"] = TrainModeName(mode);
  if (IsPrivate(mode)) {
    j["target_epsilon"] = Optional(target_epsilon);
    j["delta"] = Optional(delta);
    j["noise_multiplier"] = Optional(noise_multiplier);
    j["clipping_norm"] = ResolvedClippingNorm();
    j["clip_mode"] = ClipModeName(ResolvedClipMode());
  }
  j["batch_size"] = batch_size;
  j["epochs"] = epochs;
  j["learning_rate"] = ResolvedLearningRate();
  j["weight_decay"] = ResolvedWeightDecay();
  j["optimizer"] = mode == TrainMode::kDpPft ? "adamw"
                   : IsPrivate(mode)         ? "dp_adam"
                                             : "adam";
  j["max_vocab"] = max_vocab;
  ordered_json m = model.ToJson();
  m.erase("vocab_size");
  j["model"] = std::move(m);
  if (mode == TrainMode::kDpPft) j["lora"] = LoraToJson(ResolvedLora());
  if (!base_checkpoint.empty()) j["base_checkpoint"] = base_checkpoint;
  j["seed"] = seed;
  j["decoding"] = {{"beam_width", decoding.beam_width},
                   {"max_new_tokens", decoding.max_new_tokens},
                   {"length_penalty", decoding.length_penalty}};
  j["output_dir"] = output_dir;
  return j;
}

RunConfig LoadRunConfig(const std::string& path) {
  json j;
  try {
    j = json::parse(ReadFile(path));
  } catch (const json::parse_error& e) {
    throw ConfigError(fmt::format("{}: invalid JSON: {}", path, e.what()));
  } catch (const Error& e) {
    throw ConfigError(e.what());
  }
  RunConfig c;
  c.MergeJson(j);
  return c;
}

ordered_json LoraToJson(const LoraConfig& lora) {
  return {{"enabled", lora.enabled},
          {"rank", lora.rank},
          {"alpha", lora.alpha},
          {"targets", lora.targets}};
}

LoraConfig LoraFromJson(const json& j) {
  LoraConfig l;
  for (auto it = Object(j, "lora").begin(); it != j.end(); ++it) {
    const std::string k = "lora." + it.key();
    if (it.key() == "enabled") {
      l.enabled = Boolean(it.value(), k);
    } else if (it.key() == "rank") {
      l.rank = Integer(it.value(), k);
    } else if (it.key() == "alpha") {
      l.alpha = Number(it.value(), k);
    } else if (it.key() == "targets") {
      if (!it.value().is_array()) {
        throw ConfigError("config key 'lora.targets' must be an array");
      }
      l.targets.clear();
      for (const json& t : it.value()) l.targets.push_back(Text(t, k));
    } else {
      UnknownKey(k);
    }
  }
  return l;
}

PreparedData PrepareData(const std::string& corpus_path, int64_t max_vocab) {
  PreparedData d;
  d.records = LoadCorpus(corpus_path).records;
  d.corpus_hash = FileHash(corpus_path);
  std::vector<Example> all_train;
  for (Domain dom : kAllDomains) {
    CorpusSplit s = SplitCorpus(d.records, dom);
    all_train.insert(all_train.end(), s.train.begin(), s.train.end());
    d.splits.emplace(dom, std::move(s));
  }
  d.tokenizer = Tokenizer::Build(all_train, max_vocab);
  return d;
}

std::vector<SerializedExample> SerializeExamples(
    std::span<const Example> examples, const Tokenizer& tokenizer,
    int64_t context_length, int64_t* skipped) {
  std::vector<SerializedExample> out;
  int64_t dropped = 0;
  for (const Example& e : examples) {
    auto s = SerializeExample(tokenizer.Encode(e.query),
                              tokenizer.Encode(e.transcript),
                              tokenizer.Encode(e.summary), context_length);
    if (s) {
      out.push_back(std::move(*s));
    } else {
      ++dropped;
    }
  }
  if (skipped != nullptr) *skipped = dropped;
  return out;
}

std::vector<double> TrainStep(ParamStore& params, OptimState& state,
                              const ModelConfig& model, const LoraConfig& lora,
                              const Batch& batch, const StepConfig& config,
                              int64_t step) {
  Tape tape;
  Var losses = ForwardLoss(tape, params, model, lora, batch);
  std::vector<double> out(losses.value().data().begin(),
                          losses.value().data().end());
  for (size_t i = 0; i < out.size(); ++i) {
    if (!std::isfinite(out[i])) {
      throw NumericError(fmt::format(
          "non-finite loss for example {} of the batch at step {}", i, step));
    }
  }
  if (config.mode == TrainMode::kNonDp) {
    Tensor seed(losses.value().shape());
    for (double& v : seed.data()) v = 1.0 / static_cast<double>(batch.batch);
    GradMap grads = tape.Backward(losses, seed).grads;
    CompleteGrads(params, grads);
    DpAdamStep(params, grads, state);
    return out;
  }
  PrivateGradient g = ComputePrivateGradient(tape, losses, params, config.clip,
                                             config.seed, step);
  if (config.mode == TrainMode::kDpPft) {
    AdamWStep(params, g.grad, state);
  } else {
    DpAdamStep(params, g.grad, state);
  }
  return out;
}

Table PrivacyPlan::ToTable() const {
  Table t;
  t.header = {"dataset_size", "batch_size",      "epochs",
              "sample_rate",  "steps",           "delta",
              "target_epsilon", "noise_multiplier", "epsilon",
              "best_order"};
  t.AddRow({std::to_string(dataset_size), std::to_string(batch_size),
            std::to_string(epochs), fmt::format("{:.6g}", sample_rate),
            std::to_string(steps), fmt::format("{:.6g}", delta),
            fmt::format("{:g}", target_epsilon),
            fmt::format("{:.6f}", noise_multiplier),
            fmt::format("{:.6f}", epsilon), fmt::format("{:g}", best_order)});
  return t;
}

ordered_json PrivacyPlan::ToJson() const {
  return {{"dataset_size", dataset_size},
          {"batch_size", batch_size},
          {"epochs", epochs},
          {"sample_rate", sample_rate},
          {"steps", steps},
          {"delta", delta},
          {"target_epsilon", target_epsilon},
          {"noise_multiplier", noise_multiplier},
          {"epsilon", epsilon},
          {"best_order", best_order}};
}

PrivacyPlan PlanPrivacy(double target_epsilon, std::optional<double> delta,
                        int64_t dataset_size, int64_t batch_size,
                        int64_t epochs,
                        std::optional<double> noise_multiplier) {
  if (batch_size > dataset_size) {
    throw ConfigError(fmt::format("batch size {} exceeds the dataset size {}",
                                  batch_size, dataset_size));
  }
  PrivacyPlan p;
  p.dataset_size = dataset_size;
  p.batch_size = batch_size;
  p.epochs = epochs;
  p.sample_rate =
      static_cast<double>(batch_size) / static_cast<double>(dataset_size);
  p.steps = StepsFor(dataset_size, batch_size, epochs);
  p.delta = delta.value_or(DefaultDelta(dataset_size));
  p.target_epsilon = target_epsilon;
  p.noise_multiplier =
      noise_multiplier.value_or(CalibrateNoiseMultiplier(
          target_epsilon, p.delta, p.sample_rate, p.steps));
  if (p.noise_multiplier == 0.0) {
    p.epsilon = std::numeric_limits<double>::infinity();
  } else {
    const DpGuarantee g =
        Account(p.sample_rate, p.noise_multiplier, p.steps, p.delta);
    p.epsilon = g.epsilon;
    p.best_order = g.best_order;
  }
  if (!(p.epsilon <= target_epsilon)) {
    throw CalibrationError(fmt::format(
        "noise multiplier {} gives epsilon {} above the target {}",
        p.noise_multiplier, p.epsilon, target_epsilon));
  }
  return p;
}

OutputLock::OutputLock(const std::string& dir) {
  fs::create_directories(dir);
  path_ = (fs::path(dir) / ".lock").string();
  std::FILE* f = std::fopen(path_.c_str(), "wx");
  if (f == nullptr) {
    const std::string p = path_;
    path_.clear();
    throw Error(fmt::format(
        "output directory {} is locked by another run (remove {} if stale)",
        dir, p));
  }
  std::fputs("dpsum\n", f);
  std::fclose(f);
}

OutputLock::~OutputLock() {
  if (!path_.empty()) {
    std::error_code ec;
    fs::remove(path_, ec);
  }
}

Checkpoint LoadCheckpointFor(const std::string& path,
                             const Tokenizer& tokenizer) {
  if (!fs::exists(path)) {
    throw Error(fmt::format("checkpoint {} does not exist", path));
  }
  Checkpoint ck = LoadCheckpoint(path);
  if (ck.tokenizer_hash != tokenizer.Hash()) {
    throw ConfigError(fmt::format(
        "checkpoint {} was trained with tokenizer {} but the tokenizer in use "
        "is {}",
        path, ck.tokenizer_hash, tokenizer.Hash()));
  }
  return ck;
}

ordered_json TrainRun(const RunConfig& config, const PreparedData* data,
                      std::ostream* log) {
  config.Validate();
  if (config.corpus.empty()) throw ConfigError("no corpus given");
  if (config.output_dir.empty()) throw ConfigError("no output directory given");
  const auto start = std::chrono::steady_clock::now();
  OutputLock lock(config.output_dir);
  PreparedData local;
  if (data == nullptr) {
    local = PrepareData(config.corpus, config.max_vocab);
    data = &local;
  }
  const Tokenizer& tokenizer = data->tokenizer;
  ModelConfig mc = config.model;
  mc.vocab_size = tokenizer.size();
  mc.Validate();
  int64_t skipped = 0;
  const auto train = SerializeExamples(data->splits.at(config.train_domain).train,
                                       tokenizer, mc.context_length, &skipped);
  const auto n = static_cast<int64_t>(train.size());
  if (n == 0) {
    throw ConfigError(fmt::format("no usable training examples for domain {}",
                                  DomainName(config.train_domain)));
  }

  const LoraConfig lora = config.ResolvedLora();
  ParamStore params;
  if (!config.base_checkpoint.empty()) {
    Checkpoint base = LoadCheckpointFor(config.base_checkpoint, tokenizer);
    if (base.config.ToJson() != mc.ToJson()) {
      throw ConfigError(fmt::format(
          "base checkpoint model {} does not match the configured model {}",
          base.config.ToJson().dump(), mc.ToJson().dump()));
    }
    params = BaseParams(base.params);
    for (auto& [name, p] : params) p.trainable = true;
  } else {
    params = InitParams(mc, config.seed);
  }
  ApplyLora(params, mc, lora, config.seed);

  std::optional<PrivacyPlan> plan;
  StepConfig step_config;
  step_config.mode = config.mode;
  step_config.seed = config.seed;
  if (IsPrivate(config.mode)) {
    plan = PlanPrivacy(*config.target_epsilon, config.delta, n,
                       config.batch_size, config.epochs,
                       config.noise_multiplier);
    step_config.clip.clipping_norm = config.ResolvedClippingNorm();
    step_config.clip.noise_multiplier = plan->noise_multiplier;
    step_config.clip.batch_size = config.batch_size;
    step_config.clip.mode = config.ResolvedClipMode();
    step_config.clip.Validate();
  }
  OptimState state;
  state.config.lr = config.ResolvedLearningRate();
  state.config.weight_decay = config.ResolvedWeightDecay();

  if (log != nullptr) {
    *log << fmt::format(
        "train {} on {}: {} examples ({} skipped), vocab {}, trainable "
        "fraction {:.4f}",
        TrainModeName(config.mode), DomainName(config.train_domain), n, skipped,
        mc.vocab_size, TrainableFraction(params));
    if (plan) {
      *log << fmt::format(", sigma {:.6f}, epsilon {:.6f}, delta {:.3g}",
                          plan->noise_multiplier, plan->epsilon, plan->delta);
    }
    *log << std::endl;
  }

  std::vector<double> epoch_losses;
  std::vector<size_t> order(train.size());
  int64_t step = 0;
  for (int64_t epoch = 0; epoch < config.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), size_t{0});
    CounterRng rng(CounterRng::DeriveKey(
        config.seed, {Fnv1a64("epoch"), static_cast<uint64_t>(epoch)}));
    for (size_t i = order.size(); i > 1; --i) {
      std::swap(order[i - 1], order[rng.NextBelow(i)]);
    }
    double total = 0.0;
    for (size_t begin = 0; begin < order.size();
         begin += static_cast<size_t>(config.batch_size)) {
      const size_t end =
          std::min(order.size(), begin + static_cast<size_t>(config.batch_size));
      std::vector<const SerializedExample*> members;
      for (size_t i = begin; i < end; ++i) members.push_back(&train[order[i]]);
      const Batch batch = MakeBatch(members);
      for (double l :
           TrainStep(params, state, mc, lora, batch, step_config, step)) {
        total += l;
      }
      ++step;
    }
    epoch_losses.push_back(total / static_cast<double>(n));
    if (log != nullptr) {
      *log << fmt::format("  epoch {}/{}: mean loss {:.6f} ({:.1f} s)",
                          epoch + 1, config.epochs, epoch_losses.back(),
                          std::chrono::duration<double>(
                              std::chrono::steady_clock::now() - start)
                              .count())
           << std::endl;
    }
  }

  ordered_json privacy = nullptr;
  if (plan) {
    // Re-account the steps actually taken and enforce the budget.
    const DpGuarantee spent =
        plan->noise_multiplier == 0.0
            ? DpGuarantee{std::numeric_limits<double>::infinity(), 0.0}
            : Account(plan->sample_rate, plan->noise_multiplier, step,
                      plan->delta);
    if (!(spent.epsilon <= *config.target_epsilon)) {
      throw CalibrationError(fmt::format(
          "accounted epsilon {} exceeds the target {}", spent.epsilon,
          *config.target_epsilon));
    }
    privacy = plan->ToJson();
    privacy["steps_taken"] = step;
    privacy["epsilon"] = spent.epsilon;
    privacy["best_order"] = spent.best_order;
    privacy["clipping_norm"] = step_config.clip.clipping_norm;
    privacy["clip_mode"] = ClipModeName(step_config.clip.mode);
  }

  const fs::path dir(config.output_dir);
  Checkpoint ck;
  ck.config = mc;
  ck.tokenizer_hash = tokenizer.Hash();
  ck.metadata = {{"mode", TrainModeName(config.mode)},
                 {"train_domain", DomainName(config.train_domain)},
                 {"seed", config.seed},
                 {"lora", LoraToJson(lora)}};
  ck.params = std::move(params);
  const std::string ck_path = (dir / kCheckpointFile).string();
  const std::string tok_path = (dir / kTokenizerFile).string();
  SaveCheckpoint(ck_path, ck);
  WriteFileAtomic(tok_path, tokenizer.ToJson());

  ordered_json manifest;
  manifest["format"] = "dpsum-run-manifest";
  manifest["version"] = 1;
  manifest["config"] = config.ToJson();
  manifest["seed"] = config.seed;
  manifest["corpus"] = {{"path", config.corpus}, {"hash", data->corpus_hash}};
  manifest["data"] = {{"train_domain", DomainName(config.train_domain)},
                      {"train_examples", n},
                      {"skipped_examples", skipped},
                      {"vocab_size", mc.vocab_size},
                      {"tokenizer_hash", tokenizer.Hash()}};
  manifest["privacy"] = privacy;
  manifest["steps"] = step;
  manifest["trainable_fraction"] = TrainableFraction(ck.params);
  manifest["epoch_losses"] = epoch_losses;
  manifest["wall_time_seconds"] =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start)
          .count();
  manifest["artifacts"] = {{kCheckpointFile, FileHash(ck_path)},
                           {kTokenizerFile, FileHash(tok_path)}};
  WriteFileAtomic((dir / kManifestFile).string(), manifest.dump(2) + "\n");
  return manifest;
}

std::vector<Prediction> Generate(const Checkpoint& checkpoint,
                                 const Tokenizer& tokenizer,
                                 std::span<const Example> prompts,
                                 const BeamOptions& options) {
  LoraConfig lora;
  if (checkpoint.metadata.is_object() && checkpoint.metadata.contains("lora")) {
    lora = LoraFromJson(checkpoint.metadata.at("lora"));
  }
  const KvDecoder decoder(checkpoint.params, checkpoint.config, lora);
  std::vector<Prediction> out;
  for (const Example& e : prompts) {
    const auto prefix = SerializePrompt(
        tokenizer.Encode(e.query), tokenizer.Encode(e.transcript),
        checkpoint.config.context_length, options.max_new_tokens);
    Hypothesis h = BeamSearch(decoder, prefix, options);
    if (h.ended_with_eos) h.tokens.pop_back();
    out.push_back({e.id, tokenizer.Decode(h.tokens)});
  }
  return out;
}

std::string PredictionsToJsonl(std::span<const Prediction> predictions) {
  std::string out;
  for (const Prediction& p : predictions) {
    ordered_json j;
    j["id"] = p.id;
    j["prediction"] = p.text;
    out += j.dump() + "\n";
  }
  return out;
}

namespace {

// Calls `fn(line_no, json)` for every nonblank line.
template <typename Fn>
void ForEachJsonLine(std::string_view text, std::string_view source, Fn fn) {
  int64_t line_no = 0;
  size_t pos = 0;
  while (pos < text.size()) {
    size_t end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    const std::string_view line = text.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string_view::npos) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error& e) {
      throw ParseError(
          fmt::format("{}: line {}: invalid JSON: {}", source, line_no, e.what()));
    }
    try {
      fn(line_no, j);
    } catch (const ParseError& e) {
      throw ParseError(fmt::format("{}: line {}: {}", source, line_no, e.what()));
    }
  }
}

}  // namespace

std::map<std::string, std::string> ParsePredictionsJsonl(
    std::string_view text, std::string_view source) {
  std::map<std::string, std::string> out;
  ForEachJsonLine(text, source, [&](int64_t, const json& j) {
    if (!j.is_object() || !j.contains("id") || !j["id"].is_string() ||
        !j.contains("prediction") || !j["prediction"].is_string()) {
      throw ParseError("expected {\"id\": string, \"prediction\": string}");
    }
    const std::string id = j["id"].get<std::string>();
    if (!out.emplace(id, j["prediction"].get<std::string>()).second) {
      throw ParseError(fmt::format("duplicate prediction id '{}'", id));
    }
  });
  return out;
}

std::string ExamplesToJsonl(std::span<const Example> examples) {
  std::string out;
  for (const Example& e : examples) out += ExampleToJson(e).dump() + "\n";
  return out;
}

std::vector<Example> ParseExamplesJsonl(std::string_view text,
                                        std::string_view source) {
  std::vector<Example> out;
  std::set<std::string> seen;
  ForEachJsonLine(text, source, [&](int64_t, const json& j) {
    Example e = ExampleFromJson(j);
    if (!seen.insert(e.id).second) {
      throw ParseError(fmt::format("duplicate example id '{}'", e.id));
    }
    out.push_back(std::move(e));
  });
  if (out.empty()) throw ParseError(fmt::format("{}: no records", source));
  return out;
}

namespace {

void CheckJoin(std::span<const Example> gold,
               const std::map<std::string, std::string>& predictions) {
  std::set<std::string> gold_ids;
  for (const Example& e : gold) {
    gold_ids.insert(e.id);
    if (predictions.count(e.id) == 0) {
      throw ParseError(fmt::format("no prediction for gold id '{}'", e.id));
    }
  }
  for (const auto& [id, text] : predictions) {
    if (gold_ids.count(id) == 0) {
      throw ParseError(fmt::format("prediction id '{}' has no gold example", id));
    }
  }
}

}  // namespace

ScoreReport Evaluate(std::span<const Example> gold,
                     const std::map<std::string, std::string>& predictions,
                     Domain train_domain) {
  CheckJoin(gold, predictions);
  std::map<Domain, std::vector<ExampleScores>> per_domain;
  for (const Example& e : gold) {
    per_domain[e.domain].push_back(
        ScoreExample(predictions.at(e.id), e.summary, e.transcript));
  }
  ScoreReport r;
  for (const auto& [domain, scores] : per_domain) {
    r.cells[{train_domain, domain}] = Aggregate(scores);
  }
  return r;
}

std::vector<int64_t> PredictionLengths(
    std::span<const Example> gold,
    const std::map<std::string, std::string>& predictions) {
  CheckJoin(gold, predictions);
  std::vector<int64_t> out;
  for (const Example& e : gold) {
    out.push_back(static_cast<int64_t>(WordTokens(predictions.at(e.id)).size()));
  }
  return out;
}

namespace {

void WriteTable(const fs::path& stem, const Table& table) {
  WriteFileAtomic(stem.string() + ".csv", table.ToCsv());
  WriteFileAtomic(stem.string() + ".txt", table.ToText());
}

ScoreReport AverageReports(std::span<const ScoreReport> reports) {
  ScoreReport out;
  for (const auto& [key, cell] : reports.front().cells) {
    std::vector<CellScores> cells;
    for (const ScoreReport& r : reports) cells.push_back(r.cells.at(key));
    out.cells[key] = MeanCells(cells);
  }
  return out;
}

}  // namespace

CrossDomainResult RunCrossDomain(const CrossDomainOptions& options,
                                 std::ostream* log) {
  if (options.modes.empty()) throw ConfigError("crossdomain needs >= 1 mode");
  if (options.seeds.empty()) throw ConfigError("crossdomain needs >= 1 seed");
  if (options.out_dir.empty()) throw ConfigError("no output directory given");
  if (options.base.corpus.empty()) throw ConfigError("no corpus given");
  const PreparedData data =
      PrepareData(options.base.corpus, options.base.max_vocab);
  const fs::path root(options.out_dir);
  fs::create_directories(root);
  CrossDomainResult result;
  result.lengths.header = {"run",    "count",     "mean",
                           "stddev", "mode_mass", "histogram"};
  for (TrainMode mode : options.modes) {
    std::vector<ScoreReport> test_runs, valid_runs;
    std::map<Domain, std::vector<int64_t>> in_domain_lengths;
    std::vector<int64_t> all_lengths;
    for (uint64_t seed : options.seeds) {
      ScoreReport test_report, valid_report;
      for (Domain train_domain : kAllDomains) {
        RunConfig config = options.base;
        config.mode = mode;
        config.seed = seed;
        config.train_domain = train_domain;
        if (!IsPrivate(mode)) {
          config.target_epsilon.reset();
          config.delta.reset();
          config.noise_multiplier.reset();
          config.clipping_norm.reset();
          config.clip_mode.reset();
        }
        const fs::path run_dir = root / std::string(TrainModeName(mode)) /
                                 fmt::format("seed{}", seed) /
                                 std::string(DomainName(train_domain));
        config.output_dir = run_dir.string();
        const std::string ck_path = (run_dir / kCheckpointFile).string();
        if (options.reuse_checkpoints) {
          if (!fs::exists(ck_path)) {
            throw Error(fmt::format(
                "missing checkpoint for mode {}, seed {}, training domain {}: "
                "{}",
                TrainModeName(mode), seed, DomainName(train_domain), ck_path));
          }
        } else {
          TrainRun(config, &data, log);
        }
        const Checkpoint ck = LoadCheckpointFor(ck_path, data.tokenizer);
        for (Domain eval_domain : kAllDomains) {
          for (Split split : {Split::kTest, Split::kValid}) {
            const auto& gold = data.splits.at(eval_domain).Get(split);
            if (gold.empty()) {
              throw Error(fmt::format("domain {} has an empty {} split",
                                      DomainName(eval_domain), SplitName(split)));
            }
            const auto preds = Generate(ck, data.tokenizer, gold, config.decoding);
            WriteFileAtomic((run_dir / fmt::format("pred_{}_{}.jsonl",
                                                   DomainName(eval_domain),
                                                   SplitName(split)))
                                .string(),
                            PredictionsToJsonl(preds));
            std::map<std::string, std::string> by_id;
            for (const Prediction& p : preds) by_id[p.id] = p.text;
            ScoreReport cell = Evaluate(gold, by_id, train_domain);
            (split == Split::kTest ? test_report : valid_report)
                .cells.merge(cell.cells);
            if (split == Split::kTest) {
              const auto lengths = PredictionLengths(gold, by_id);
              all_lengths.insert(all_lengths.end(), lengths.begin(), lengths.end());
              if (eval_domain == train_domain) {
                auto& dst = in_domain_lengths[train_domain];
                dst.insert(dst.end(), lengths.begin(), lengths.end());
              }
            }
          }
        }
        if (log != nullptr) {
          *log << fmt::format("  scored {} / seed {} / {}", TrainModeName(mode),
                              seed, DomainName(train_domain))
               << std::endl;
        }
      }
      test_runs.push_back(std::move(test_report));
      valid_runs.push_back(std::move(valid_report));
    }
    const ScoreReport test = AverageReports(test_runs);
    const ScoreReport valid = AverageReports(valid_runs);
    const fs::path mode_dir = root / std::string(TrainModeName(mode));
    WriteTable(mode_dir / "report", test.ToTable());
    WriteFileAtomic((mode_dir / "report.md").string(), test.ToMarkdown());
    Table faith;
    faith.header = {"train_domain", "eval_domain", "n", "faithfulness_rougeL"};
    for (const auto& [key, c] : valid.cells) {
      faith.AddRow({std::string(DomainName(key.first)),
                    std::string(DomainName(key.second)), std::to_string(c.n),
                    fmt::format("{:.6f}", c.faithfulness_rouge_l)});
    }
    WriteTable(mode_dir / "faithfulness_valid", faith);
    WriteFileAtomic(
        (mode_dir / "faithfulness_valid.md").string(),
        valid.MatrixMarkdown("Train \\ Eval (ROUGE-L transcript vs prediction)",
                             &CellScores::faithfulness_rouge_l));
    std::vector<std::pair<std::string, LengthStats>> stats;
    for (Domain d : kAllDomains) {
      stats.emplace_back(fmt::format("{}/{}", TrainModeName(mode), DomainName(d)),
                         ComputeLengthStats(in_domain_lengths.at(d)));
    }
    stats.emplace_back(fmt::format("{}/all", TrainModeName(mode)),
                       ComputeLengthStats(all_lengths));
    for (auto& row : LengthStatsTable(stats).rows) {
      result.lengths.AddRow(std::move(row));
    }
    result.test[mode] = test;
    result.valid[mode] = valid;
  }
  WriteTable(root / "lengths", result.lengths);
  return result;
}

}  // namespace dpsum
